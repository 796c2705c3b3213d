"""Trainable token encoders onto the unit sphere plus one cross-attention layer.

Both modality encoders share the pipeline

    token projection -> ReLU -> shared projection -> mean-pool -> L2-normalize

with no bias terms; every stage is positively homogeneous, so scaling a
sample's tokens by c > 0 leaves its embedding unchanged. The per-token
matrix after the shared projection (``token_states``) is what the global
vector is pooled from and what the cross-attention layer consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass
class EncoderParams:
    w_x: np.ndarray       # (d_token, d_hidden)
    w_y: np.ndarray       # (d_token, d_hidden)
    w_shared: np.ndarray  # (d_hidden, d_embed)
    w_q: np.ndarray       # (d_embed, d_attn)
    w_k: np.ndarray       # (d_embed, d_attn)

    FIELDS = ("w_x", "w_y", "w_shared", "w_q", "w_k")

    def validate(self):
        for name in self.FIELDS:
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        if np.any(np.linalg.norm(self.w_shared, axis=1) == 0.0):
            raise ValueError("output projection has a zero row")

    def copy(self):
        return EncoderParams(*(getattr(self, n).copy() for n in self.FIELDS))

    @property
    def d_embed(self):
        return self.w_shared.shape[1]


@dataclass
class Embedding:
    """Unit-norm vector plus the per-token matrix it was pooled from."""

    vector: np.ndarray        # (d_embed,)
    token_states: np.ndarray  # (n_tokens, d_embed)


def init_encoder(rng, d_token, d_hidden=32, d_embed=32, d_attn=16):
    def he(n_in, n_out):
        return rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)

    params = EncoderParams(
        w_x=he(d_token, d_hidden),
        w_y=he(d_token, d_hidden),
        w_shared=he(d_hidden, d_embed),
        w_q=he(d_embed, d_attn),
        w_k=he(d_embed, d_attn),
    )
    params.validate()
    return params


def _proj(params, modality):
    if modality == "x":
        return params.w_x
    if modality == "y":
        return params.w_y
    raise ValueError(f"unknown modality {modality!r}")


# ---------------------------------------------------------------------------
# plain-numpy paths (index building, evaluation, probes)


def token_states(params, tokens, modality):
    h = np.maximum(tokens @ _proj(params, modality), 0.0)
    return h @ params.w_shared


def encode(params, sample, modality):
    """Encode one sample's chosen modality; errors if the pooled vector is
    zero (nothing to normalize)."""
    tokens = sample.x_tokens if modality == "x" else sample.y_tokens
    states = token_states(params, tokens, modality)
    pooled = states.mean(axis=0)
    norm = np.linalg.norm(pooled)
    if norm == 0.0:
        raise ValueError("pooled token vector is zero; cannot normalize")
    return Embedding(vector=pooled / norm, token_states=states)


def similarity(a, b):
    """Cosine similarity of two unit-norm embeddings (plain inner product)."""
    return float(a.vector @ b.vector)


def embed_tokens(params, tokens, modality):
    """Vectorized unit-norm embeddings for stacked token matrices (n, T, d)."""
    n, t, d = tokens.shape
    states = token_states(params, tokens.reshape(n * t, d), modality)
    pooled = states.reshape(n, t, -1).mean(axis=1)
    norms = np.linalg.norm(pooled, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("pooled token vector is zero; cannot normalize")
    return pooled / norms


def embed_corpus(params, corpus):
    """(x_embeddings, y_embeddings) for every sample in corpus order."""
    return (
        embed_tokens(params, corpus.x_tokens, "x"),
        embed_tokens(params, corpus.y_tokens, "y"),
    )


def cross_attention(params, x_tokens, y_tokens):
    """Row-stochastic (M+L)x(M+L) attention map over the concatenated token
    states of one candidate pairing."""
    states = np.concatenate(
        [token_states(params, x_tokens, "x"), token_states(params, y_tokens, "y")],
        axis=0,
    )
    q = states @ params.w_q
    k = states @ params.w_k
    scores = (q @ k.T) / np.sqrt(params.w_q.shape[1])
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def lipschitz_probe(params, n_probes, perturb_scale, rng, m_tokens, l_tokens, d_token):
    """Empirical Lipschitz estimate of the similarity map: max over random
    probe pairs of |ds| / (||dx|| + ||dy||), perturbing one side at a time.
    Diagnostic only; the estimate can only grow as probes accumulate."""
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    best = 0.0
    for p in range(n_probes):
        x = rng.standard_normal((m_tokens, d_token))
        y = rng.standard_normal((l_tokens, d_token))
        ex = _embed_single(params, x, "x")
        ey = _embed_single(params, y, "y")
        s0 = float(ex @ ey)
        if p % 2 == 0:
            dx = perturb_scale * rng.standard_normal(x.shape)
            s1 = float(_embed_single(params, x + dx, "x") @ ey)
            denom = np.linalg.norm(dx)
        else:
            dy = perturb_scale * rng.standard_normal(y.shape)
            s1 = float(ex @ _embed_single(params, y + dy, "y"))
            denom = np.linalg.norm(dy)
        if denom > 0.0:
            best = max(best, abs(s1 - s0) / denom)
    return best


def _embed_single(params, tokens, modality):
    states = token_states(params, tokens, modality)
    pooled = states.mean(axis=0)
    return pooled / np.linalg.norm(pooled)


# ---------------------------------------------------------------------------
# tape paths (training)


def encoder_leaves(params, tape):
    return {name: tape.leaf(getattr(params, name)) for name in EncoderParams.FIELDS}


def encode_batch_t(leaves, tokens, modality):
    """Tape version of the encode pipeline over a stacked (B, T, d) batch.

    Returns (vectors (B, d_embed), states (B, T, d_embed)).
    """
    b, t, d = tokens.shape
    w = leaves["w_x"] if modality == "x" else leaves["w_y"]
    h = T.relu(T.matmul(T.Tensor(tokens.reshape(b * t, d)), w))
    states_flat = T.matmul(h, leaves["w_shared"])
    d_embed = states_flat.data.shape[1]
    states = T.reshape(states_flat, (b, t, d_embed))
    pooled = T.mean_axis(states, axis=1)
    return T.l2_normalize_rows(pooled), states


def cross_attention_batch_t(leaves, x_states, y_states):
    """Tape version of cross_attention over batched token states.

    x_states: (B, M, d_embed), y_states: (B, L, d_embed) -> (B, N, N).
    """
    b = x_states.data.shape[0]
    cat = T.concat([x_states, y_states], axis=1)
    n = cat.data.shape[1]
    d_embed = cat.data.shape[2]
    d_attn = leaves["w_q"].data.shape[1]
    flat = T.reshape(cat, (b * n, d_embed))
    q = T.reshape(T.matmul(flat, leaves["w_q"]), (b, n, d_attn))
    k = T.reshape(T.matmul(flat, leaves["w_k"]), (b, n, d_attn))
    scores = T.scale(T.bmm(q, T.swap_last2(k)), 1.0 / np.sqrt(d_attn))
    return T.reshape(T.softmax_rows(T.reshape(scores, (b * n, n))), (b, n, n))
