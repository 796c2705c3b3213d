"""Boundary-aware negative sampler: policy scoring, curriculum schedule,
Gumbel-Softmax relaxation, and the reward objective.

The sampler is a pure function of its inputs plus an explicit RNG handle;
``noise_free=True`` zeroes the Gumbel noise for deterministic tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass(frozen=True)
class ScheduleParams:
    """Logistic curriculum coefficient: starts at alpha_early (suppressing
    hard candidates), ends at alpha_late (boosting them), transitioning
    around epoch eta0 with steepness gamma."""

    alpha_early: float = 0.3
    alpha_late: float = -0.5
    gamma: float = 1.5
    eta0: float = 8.0

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")


# The three schedules swept in the curriculum study; eta0 is filled in by
# the trainer at 40% of the configured epochs.
NAMED_SCHEDULES = {
    "shallow": (0.1, -0.2, 1.0),
    "default": (0.3, -0.5, 1.5),
    "aggressive": (0.5, -0.8, 2.5),
}


def alpha(schedule, eta):
    """Curriculum coefficient at epoch ``eta``; strictly between the two
    endpoints for any finite epoch and exactly their midpoint at eta0."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    z = -schedule.gamma * (eta - schedule.eta0)
    sig = 1.0 / (1.0 + math.exp(z)) if z < 700 else 0.0
    return schedule.alpha_early + (schedule.alpha_late - schedule.alpha_early) * sig


def difficulty(sim_anchor_candidate, sim_anchor_positive):
    """relu of the boundary score: how much the candidate confuses the model."""
    return np.maximum(0.0, np.asarray(sim_anchor_candidate) - sim_anchor_positive)


def adjust_scores(u, d, alpha_eta):
    """Curriculum-adjusted scores u - alpha(eta) * d. Positive alpha
    suppresses hard candidates, negative alpha boosts them."""
    if isinstance(u, T.Tensor):
        d = np.asarray(d, dtype=u.data.dtype)
        if u.data.shape != d.shape:
            raise ValueError("scores and difficulties must have equal length")
        return T.sub(u, T.Tensor(alpha_eta * d))
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    if u.shape != d.shape:
        raise ValueError("scores and difficulties must have equal length")
    return u - alpha_eta * d


def gumbel_noise(rng, shape):
    u = rng.random(shape)
    return -np.log(-np.log(u))


def tau_at(epoch, epochs, tau_start=0.7, tau_end=0.1):
    """Linear temperature anneal across the training epochs."""
    if epochs <= 1:
        return tau_start
    frac = (epoch - 1) / (epochs - 1)
    return tau_start + (tau_end - tau_start) * min(max(frac, 0.0), 1.0)


@dataclass
class SamplerOutput:
    probs: np.ndarray            # simplex vector over candidates
    hardest_index: int           # argmax of probs
    adjusted_scores: np.ndarray
    gumbel_noise: np.ndarray     # the draws actually used (zeros if noise-free)
    temperature: float


def gumbel_softmax(u_hat, tau, rng=None, noise_free=False):
    """Relaxed categorical sample over candidate scores.

    probs_n is proportional to exp((u_hat_n + g_n) / tau) with standard
    Gumbel draws g_n; ``noise_free`` pins g to zero for deterministic tests.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    if u_hat.size == 0:
        raise ValueError("gumbel_softmax over an empty candidate list")
    if tau <= 0.0:
        raise ValueError("temperature must be positive")
    if noise_free:
        g = np.zeros_like(u_hat)
    else:
        if rng is None:
            raise ValueError("rng required unless noise_free")
        g = gumbel_noise(rng, u_hat.shape)
    z = (u_hat + g) / tau
    z = z - z.max()
    e = np.exp(z)
    probs = e / e.sum()
    return SamplerOutput(
        probs=probs,
        hardest_index=int(np.argmax(probs)),
        adjusted_scores=u_hat,
        gumbel_noise=g,
        temperature=float(tau),
    )


def entropy(probs):
    p = probs[probs > 0]
    return float(-(p * np.log(p)).sum())


# ---------------------------------------------------------------------------
# policy network: two affine layers with SiLU between, one score per candidate


@dataclass
class PolicyParams:
    w1: np.ndarray  # (3 * d_embed, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, 1)
    b2: np.ndarray  # (1,)

    FIELDS = ("w1", "b1", "w2", "b2")

    def copy(self):
        return PolicyParams(*(getattr(self, n).copy() for n in self.FIELDS))


def init_policy(rng, d_embed, hidden=32):
    return PolicyParams(
        w1=rng.standard_normal((3 * d_embed, hidden)) / np.sqrt(3 * d_embed),
        b1=np.zeros(hidden),
        w2=rng.standard_normal((hidden, 1)) / np.sqrt(hidden),
        b2=np.zeros(1),
    )


def policy_leaves(policy, tape):
    return {name: tape.leaf(getattr(policy, name)) for name in PolicyParams.FIELDS}


def policy_features(anchor_vec, positive_vec, candidate_vecs):
    """Per-candidate input rows [anchor ; positive ; candidate]."""
    candidate_vecs = np.atleast_2d(candidate_vecs)
    k = candidate_vecs.shape[0]
    return np.concatenate(
        [np.tile(anchor_vec, (k, 1)), np.tile(positive_vec, (k, 1)), candidate_vecs],
        axis=1,
    )


def policy_score_t(leaves, features):
    """Raw candidate scores for stacked feature rows, on the tape."""
    h = T.silu(T.add_row(T.matmul(T.Tensor(features), leaves["w1"]), leaves["b1"]))
    out = T.add_row(T.matmul(h, leaves["w2"]), leaves["b2"])
    return out


def policy_score(policy, anchor_vec, positive_vec, candidate_vecs):
    """Numpy path of the policy net: one raw score per candidate."""
    feats = policy_features(anchor_vec, positive_vec, candidate_vecs)
    if feats.shape[0] == 0:
        raise ValueError("candidate set is empty")
    pre = feats @ policy.w1 + policy.b1
    h = pre / (1.0 + np.exp(-pre))
    return (h @ policy.w2 + policy.b2)[:, 0]


def reward_objective(probs, boundary_scores):
    """Expected reward sum_n probs_n * R_n; differentiable through probs."""
    if isinstance(probs, T.Tensor):
        r = np.asarray(boundary_scores, dtype=probs.data.dtype)
        if probs.data.shape != r.shape:
            raise ValueError("probs and rewards must have equal length")
        return T.sum_all(T.mul(probs, T.Tensor(r)))
    probs = np.asarray(probs, dtype=float)
    r = np.asarray(boundary_scores, dtype=float)
    if probs.shape != r.shape:
        raise ValueError("probs and rewards must have equal length")
    return float(probs @ r)
