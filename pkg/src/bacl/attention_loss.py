"""Contrastive local attention: attention-difference maps, local boosting,
mismatch-set selection, the local loss, and the combined training objective.

Ops are polymorphic over plain arrays and tape tensors where gradients are
needed; selection of the mismatch set is discrete and always runs on values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T

LOCAL_LOSS_FLOOR = 1e-8


def _is_t(x):
    return isinstance(x, T.Tensor)


def delta_map(a_pos, a_neg):
    """Entrywise |A+ - A-|; symmetric in its arguments."""
    if _is_t(a_pos) or _is_t(a_neg):
        return T.abs_(T.sub(a_pos, a_neg))
    a_pos, a_neg = np.asarray(a_pos), np.asarray(a_neg)
    if a_pos.shape != a_neg.shape:
        raise ValueError("attention maps must share a shape")
    return np.abs(a_pos - a_neg)


def boost(a_neg, delta, beta):
    """Locally enhanced negative attention A-(i,j) * (1 + beta * delta(i,j))."""
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    if _is_t(a_neg) or _is_t(delta):
        return T.mul(a_neg, T.add_scalar(T.scale(delta, beta), 1.0))
    return np.asarray(a_neg) * (1.0 + beta * np.asarray(delta))


def select_omega(delta, q_frac):
    """Flat indices of the ceil(q_frac * N^2) largest discrepancy cells,
    ties broken by row-major index order."""
    if not 0.0 < q_frac <= 1.0:
        raise ValueError("q_frac must lie in (0, 1]")
    flat = np.asarray(delta).reshape(-1)
    count = math.ceil(q_frac * flat.size)
    order = np.lexsort((np.arange(flat.size), -flat))
    return np.sort(order[:count]).astype(np.int64)


def omega_pairs(omega, n):
    """(i, j) view of flat mismatch-set indices."""
    return [(int(f) // n, int(f) % n) for f in omega]


def local_loss(a_boosted, omega, floor=LOCAL_LOSS_FLOOR):
    """Sum over the mismatch set of -log(A_b(i,j)), floored to dodge log 0."""
    omega = np.asarray(omega, dtype=np.int64)
    if omega.size == 0:
        raise ValueError("mismatch set is empty")
    if _is_t(a_boosted):
        flat = T.reshape(a_boosted, (a_boosted.data.size, 1))
        picked = T.clamp_min(T.gather_rows(flat, omega), floor)
        return T.neg(T.sum_all(T.log(picked)))
    flat = np.asarray(a_boosted).reshape(-1)
    return float(-np.log(np.maximum(flat[omega], floor)).sum())


def contrastive_loss(zx, zy, temperature, extra_x2y=None, extra_y2x=None):
    """Symmetric InfoNCE over a batch of paired unit embeddings.

    ``extra_*`` append per-anchor negative similarity columns (e.g. the
    sampled hard negatives) to that direction's denominator. Returns the
    mean of the two directional losses.
    """
    b = zx.data.shape[0] if _is_t(zx) else np.asarray(zx).shape[0]
    if b < 2:
        raise ValueError("contrastive loss needs at least 2 pairs")
    zx = zx if _is_t(zx) else T.Tensor(zx)
    zy = zy if _is_t(zy) else T.Tensor(zy)
    lx = _direction_loss(zx, zy, temperature, extra_x2y)
    ly = _direction_loss(zy, zx, temperature, extra_y2x)
    return T.scale(T.add(lx, ly), 0.5)


def _direction_loss(anchors, others, temperature, extra):
    b = anchors.data.shape[0]
    logits = T.matmul(anchors, T.transpose(others))
    if extra is not None:
        logits = T.concat([logits, extra], axis=1)
    logits = T.scale(logits, 1.0 / temperature)
    lsm = T.log_softmax_rows(logits)
    eye = np.zeros(lsm.data.shape)
    eye[np.arange(b), np.arange(b)] = 1.0
    return T.scale(T.sum_all(T.mul(lsm, T.Tensor(eye))), -1.0 / b)


def triplet_margin_loss(s_pos, s_neg, margin):
    """Mean over anchors of [margin + s(x,z) - s(x,y+)]_+."""
    if _is_t(s_pos) or _is_t(s_neg):
        return T.mean_all(T.relu(T.add_scalar(T.sub(s_neg, s_pos), margin)))
    return float(np.mean(np.maximum(0.0, margin + np.asarray(s_neg) - np.asarray(s_pos))))


@dataclass
class LossBreakdown:
    l_contrast: float
    l_local: float
    lambda_local: float
    l_main: float


def main_loss(l_contrast, l_local, lambda_local):
    """Combined objective l_contrast + lambda_local * l_local.

    Accepts tensors (returns the combined tensor plus a float breakdown) or
    floats (breakdown only).
    """
    if lambda_local < 0.0:
        raise ValueError("lambda_local must be >= 0")
    if _is_t(l_contrast) or _is_t(l_local):
        l_contrast = l_contrast if _is_t(l_contrast) else T.Tensor(np.asarray(l_contrast))
        l_local = l_local if _is_t(l_local) else T.Tensor(np.asarray(l_local))
        total = T.add(l_contrast, T.scale(l_local, lambda_local))
        breakdown = LossBreakdown(
            l_contrast=float(l_contrast.data),
            l_local=float(l_local.data),
            lambda_local=float(lambda_local),
            l_main=float(total.data),
        )
        return total, breakdown
    total = l_contrast + lambda_local * l_local
    return LossBreakdown(float(l_contrast), float(l_local), float(lambda_local), float(total))


@dataclass
class AttentionBundle:
    """Everything CLA derives for one anchor/negative pairing."""

    a_pos: np.ndarray
    a_neg: np.ndarray
    delta: np.ndarray
    a_boosted: np.ndarray
    omega: np.ndarray
    beta: float
    q_frac: float


def attention_bundle(a_pos, a_neg, beta, q_frac):
    a_pos = np.asarray(a_pos.data if _is_t(a_pos) else a_pos)
    a_neg = np.asarray(a_neg.data if _is_t(a_neg) else a_neg)
    d = delta_map(a_pos, a_neg)
    return AttentionBundle(
        a_pos=a_pos,
        a_neg=a_neg,
        delta=d,
        a_boosted=boost(a_neg, d, beta),
        omega=select_omega(d, q_frac),
        beta=beta,
        q_frac=q_frac,
    )


def ael_coverage(delta, planted_tokens, top_frac):
    """Alignment-error localisation: min-max normalize the discrepancy map,
    take its top `top_frac` cells, and report the fraction of planted
    mismatch token indices whose row or column intersects that set."""
    planted = np.asarray(planted_tokens, dtype=np.int64)
    if planted.size == 0:
        raise ValueError("planted mismatch mask is empty")
    d = np.asarray(delta, dtype=float)
    n = d.shape[0]
    lo, hi = d.min(), d.max()
    norm = (d - lo) / (hi - lo) if hi > lo else np.zeros_like(d)
    top = select_omega(norm, top_frac)
    rows = top // n
    cols = top % n
    touched = set(rows.tolist()) | set(cols.tolist())
    covered = sum(1 for p in planted if int(p) in touched)
    return covered / planted.size
