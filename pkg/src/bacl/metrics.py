"""Retrieval metrics, mining-study machinery, margin-contraction regression,
and the corpus-size rate comparison.

Every query has exactly one relevant item (the paired sample), so mAP
coincides with MRR here; both are kept because downstream tables report both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass
class RankingResult:
    """1-based rank of the single ground-truth item for each query."""

    query_ids: np.ndarray
    truth_ids: np.ndarray
    ranks: np.ndarray

    def __post_init__(self):
        if len(self.ranks) == 0:
            raise ValueError("empty ranking result")
        if np.any(self.ranks < 1):
            raise ValueError("ranks are 1-based")

    def __len__(self):
        return len(self.ranks)


def rank_queries(scores, truth_cols, query_ids=None, pool_ids=None):
    """Rank matrix rows against their truth column (competition ranking)."""
    scores = np.asarray(scores, dtype=float)
    truth_cols = np.asarray(truth_cols, dtype=np.int64)
    ranks = kernels.rank_of_true(scores, truth_cols)
    qid = query_ids if query_ids is not None else np.arange(scores.shape[0])
    tid = pool_ids[truth_cols] if pool_ids is not None else truth_cols
    return RankingResult(np.asarray(qid), np.asarray(tid), ranks)


def recall_at_k(results, k):
    if k < 1:
        raise ValueError("k must be >= 1")
    return float((results.ranks <= k).mean())


def mean_average_precision(results):
    return float((1.0 / results.ranks).mean())


def mrr(results):
    return float((1.0 / results.ranks).mean())


def ndcg_at_k(results, k):
    """Single-relevant nDCG: 1/log2(1+rank) inside the cutoff, ideal is 1."""
    if k < 1:
        raise ValueError("k must be >= 1")
    gains = np.where(results.ranks <= k, 1.0 / np.log2(1.0 + results.ranks), 0.0)
    return float(gains.mean())


def retrieval_summary(results, ks=(1, 5, 10)):
    out = {f"r{k}": recall_at_k(results, k) for k in ks}
    out["map"] = mean_average_precision(results)
    out["mrr"] = mrr(results)
    out["ndcg10"] = ndcg_at_k(results, 10)
    return out


# ---------------------------------------------------------------------------
# mining study


@dataclass
class MiningPoint:
    epsilon: float
    k: int
    fpr: float | None      # None marks a degenerate (no-candidate) point
    recall_at_10: float
    n_candidates: int = 0


def nearest_candidates(sims, pos_sims, anchor_ids, pool_ids, k, epsilon):
    """Per anchor: its k most similar pool rows, kept only if their
    similarity lies within epsilon of the positive's. Returns a list of
    (anchor_row, pool_col) pairs."""
    kept = []
    for i in range(sims.shape[0]):
        cand = np.argsort(-sims[i], kind="stable")
        picked = 0
        for j in cand:
            if pool_ids[j] == anchor_ids[i]:
                continue
            picked += 1
            if abs(sims[i, j] - pos_sims[i]) <= epsilon:
                kept.append((i, int(j)))
            if picked >= k:
                break
    return kept


def false_positive_rate(sims, pos_sims, pairs):
    """Fraction of candidate negatives ranked above the true match."""
    if not pairs:
        return None
    above = sum(1 for i, j in pairs if sims[i, j] > pos_sims[i])
    return above / len(pairs)


def mining_study(model, corpus, eps_list, k_list, probe_epochs, progressive=True):
    """Hard-negative mining sweep.

    For each pool size k the base model is finetuned through the descending
    epsilon thresholds (progressively, mirroring a tightening curriculum);
    after each stage the false-positive rate over that stage's candidate set
    and holdout Recall@10 are measured on the finetuned copy.
    ``model`` is a trained TrainResult-like object exposing
    ``finetune(epsilon, k_max, epochs)`` and ``mining_state()``.
    """
    if list(eps_list) != sorted(eps_list, reverse=True):
        raise ValueError("eps_list must be descending")
    points = []
    for k in k_list:
        probe = model.clone()
        for eps in eps_list:
            probe.finetune(epsilon=float(eps), k_max=int(k), epochs=probe_epochs)
            sims, pos_sims, anchor_ids, pool_ids, r10 = probe.mining_state()
            pairs = nearest_candidates(sims, pos_sims, anchor_ids, pool_ids, k, eps)
            fpr = false_positive_rate(sims, pos_sims, pairs)
            points.append(MiningPoint(float(eps), int(k), fpr, r10, len(pairs)))
        del probe
    if not progressive:
        raise NotImplementedError("only the progressive-tightening protocol is implemented")
    return points


# ---------------------------------------------------------------------------
# margin-contraction regression


@dataclass
class ContractionFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def contraction_fit(epochs, deltas, eta0):
    """Least-squares fit of log(delta) against epoch^2 over epochs > eta0.

    Nonpositive margins are excluded; at least 4 usable points are required.
    A perfectly flat trace fits exactly (r^2 = 1, slope 0).
    """
    epochs = np.asarray(epochs, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    keep = (epochs > eta0) & (deltas > 0.0)
    if keep.sum() < 4:
        raise ValueError(f"need >= 4 usable epochs past eta0, have {int(keep.sum())}")
    x = epochs[keep] ** 2
    y = np.log(deltas[keep])
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return ContractionFit(float(slope), float(intercept), float(r2), int(keep.sum()))


# ---------------------------------------------------------------------------
# corpus-size rate comparison


@dataclass
class RatePoint:
    arm: str
    n_pairs: int
    risks: list = field(default_factory=list)

    @property
    def mean(self):
        return float(np.mean(self.risks))

    @property
    def std(self):
        return float(np.std(self.risks))


def rate_scaling(train_fn, n_list, seeds, arms=("bacl", "baseline")):
    """Excess-risk comparison over corpus sizes.

    ``train_fn(arm, n, seed)`` must return a held-out risk (lower is
    better). The excess risk subtracts the best mean risk observed at the
    largest size (the empirical asymptote shared by all arms).
    """
    if len(n_list) < 3 or sorted(n_list) != list(n_list):
        raise ValueError("n_list must be ascending with >= 3 sizes")
    if len(seeds) < 3:
        raise ValueError("need >= 3 seeds")
    table = {(a, n): RatePoint(a, n) for a in arms for n in n_list}
    for arm in arms:
        for n in n_list:
            for seed in seeds:
                table[(arm, n)].risks.append(float(train_fn(arm, n, seed)))
    asymptote = min(table[(a, max(n_list))].mean for a in arms)
    rows = []
    for arm in arms:
        for n in n_list:
            pt = table[(arm, n)]
            rows.append({
                "arm": arm, "n_pairs": n,
                "risk_mean": pt.mean, "risk_std": pt.std,
                "excess_mean": pt.mean - asymptote,
            })
    return rows


def alignment_error(recall10, floor=1e-4):
    """Proxy alignment error for contraction plots: max(floor, 1 - R@10)."""
    return max(floor, 1.0 - recall10)


def sigma_gap(a, b):
    """Mean gap of paired per-seed values a-b in units of its standard error."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = a - b
    se = d.std(ddof=1) / math.sqrt(len(d)) if len(d) > 1 else 0.0
    if se == 0.0:
        return math.inf if d.mean() > 0 else (-math.inf if d.mean() < 0 else 0.0)
    return float(d.mean() / se)
