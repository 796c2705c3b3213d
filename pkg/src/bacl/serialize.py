"""Versioned binary container for corpora and checkpoints.

Layout: magic ``BACL``, u32 format version, u32 header length, JSON header
(kind, metadata, array manifest), then raw little-endian C-order array bytes
in manifest order. No timestamps anywhere, so identical content produces
byte-identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"BACL"
FORMAT_VERSION = 1


def save_container(path, kind, meta, arrays):
    """Write ``arrays`` (ordered name->ndarray mapping) with ``meta`` (JSON-able)."""
    manifest = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        manifest.append({"name": name, "dtype": dt.str, "shape": list(arr.shape)})
    header = {"kind": kind, "version": FORMAT_VERSION, "meta": meta, "arrays": manifest}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        f.write(blob)
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def load_container(path, expect_kind=None):
    """Read a container; returns ``(meta, arrays)``."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a bacl container (bad magic)")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        header = json.loads(f.read(hlen).decode("utf-8"))
        if expect_kind is not None and header["kind"] != expect_kind:
            raise ValueError(f"{path}: expected kind {expect_kind!r}, found {header['kind']!r}")
        arrays = {}
        for entry in header["arrays"]:
            dt = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * dt.itemsize)
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dt).reshape(shape).copy()
    return header["meta"], arrays
