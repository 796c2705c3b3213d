"""Exact cosine-similarity index over corpus embeddings.

No approximate structures: retrieval is a full scan against the stored
embedding matrix, so candidate sets are exactly reproducible and cheap to
oracle-check. The index is immutable after build; the trainer swaps in a
fresh one wholesale when re-indexing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from . import kernels


@dataclass
class ModalityIndex:
    ids: np.ndarray      # (n,) pairing ids, row order fixed by id
    vectors: np.ndarray  # (n, d_embed) unit-norm rows
    built_at_epoch: int
    modality: str        # "x" or "y"

    def __len__(self):
        return len(self.ids)


@dataclass
class CandidateEntry:
    candidate_id: int
    row: int             # row into the corpus/index arrays
    side: str            # which modality index produced it
    similarity: float
    boundary_score: float
    difficulty: float


@dataclass
class CandidateSet:
    anchor_id: int
    entries: list[CandidateEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)


def boundary_score(anchor_sim_to_candidate, anchor_sim_to_positive):
    """How far a candidate out-scores the true match; positive means the
    negative currently beats it."""
    return anchor_sim_to_candidate - anchor_sim_to_positive


def build(corpus, encoder_params, modality, epoch=0):
    """Encode every sample's ``modality`` side into an index, row-ordered by id."""
    if len(corpus) == 0:
        raise ValueError("cannot index an empty corpus")
    tokens = corpus.x_tokens if modality == "x" else corpus.y_tokens
    vectors = enc.embed_tokens(encoder_params, tokens, modality)
    return ModalityIndex(ids=corpus.ids.copy(), vectors=vectors,
                         built_at_epoch=epoch, modality=modality)


def retrieve_candidates(index, anchor, positive_sim, epsilon, k_max, anchor_id=-1):
    """Exact near-boundary scan for one anchor.

    Keeps rows whose similarity to the anchor lies within ``epsilon`` of
    ``positive_sim``, excluding rows sharing ``anchor_id``, truncated to the
    ``k_max`` most similar (ties by ascending id). An empty result is a
    valid outcome, not an error.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    vec = anchor.vector if isinstance(anchor, enc.Embedding) else np.asarray(anchor)
    sims = (index.vectors @ vec)[None, :]
    banned = np.array([anchor_id], dtype=np.int64)
    cols, counts = kernels.margin_filter_topk(
        sims, np.array([positive_sim]), banned, index.ids, float(epsilon), int(k_max)
    )
    out = CandidateSet(anchor_id=int(banned[0]))
    for j in cols[0, : counts[0]]:
        s = float(sims[0, j])
        bs = boundary_score(s, positive_sim)
        out.entries.append(CandidateEntry(
            candidate_id=int(index.ids[j]), row=int(j), side=index.modality,
            similarity=s, boundary_score=bs, difficulty=max(0.0, bs),
        ))
    return out


def retrieve_matrix(index, anchor_vecs, positive_sims, banned_ids, epsilon, k_max):
    """Batched margin filter for the trainer: returns (cols, counts, sims)
    with ``cols`` (B, k_max) int64 padded -1 and ``sims`` the full (B, n)
    similarity matrix the filter ran on."""
    sims = anchor_vecs @ index.vectors.T
    cols, counts = kernels.margin_filter_topk(
        sims, np.asarray(positive_sims, dtype=np.float64),
        np.asarray(banned_ids, dtype=np.int64), index.ids,
        float(epsilon), int(k_max),
    )
    return cols, counts, sims


def dump_csv(index, path):
    with open(path, "w") as f:
        dim = index.vectors.shape[1]
        f.write("id," + ",".join(f"v{i}" for i in range(dim)) + "\n")
        for i in range(len(index)):
            row = ",".join(f"{v:.12g}" for v in index.vectors[i])
            f.write(f"{index.ids[i]},{row}\n")
