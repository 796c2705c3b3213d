"""Synthetic paired-modality corpora with planted ambiguous negatives.

Each pair draws a latent concept vector; tokens of either modality are noisy
linear renderings of disjoint coordinate blocks of that concept. For a
controllable fraction ``rho`` of anchors we also emit an ambiguous sibling
pair: its concept agrees with the anchor's except on the coordinate blocks of
a few chosen tokens, picked so that under a fixed random reference encoder the
sibling's similarity to the anchor lands within ``epsilon_gen`` of the true
positive's. The deviating token positions are recorded per sample, so
mismatch locations are exact ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import kernels
from .serialize import save_container, load_container


class GenerationError(RuntimeError):
    """Sibling perturbation search failed for the requested (rho, epsilon)."""


@dataclass(frozen=True)
class CorpusSpec:
    n_pairs: int
    d_latent: int = 16
    m_tokens: int = 8
    l_tokens: int = 8
    rho: float = 0.3
    epsilon_gen: float = 0.15
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0,1), got {self.rho}")
        if self.epsilon_gen <= 0.0:
            raise ValueError("epsilon_gen must be positive")
        if self.m_tokens < 1 or self.l_tokens < 1:
            raise ValueError("need at least one token per modality")
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be >= 1")

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            raw = json.load(f)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown corpus spec keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class Sample:
    """One paired instance; ``parent_id`` is -1 for true pairs and the anchor
    pair id for ambiguous siblings. ``mismatch_mask`` holds the deviating
    token positions (empty for true pairs)."""

    id: int
    x_tokens: np.ndarray
    y_tokens: np.ndarray
    parent_id: int = -1
    mismatch_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def is_sibling(self):
        return self.parent_id >= 0


class Corpus:
    """Stacked sample arrays plus the fixed rendering maps that produced them."""

    def __init__(self, spec, ids, parent_ids, x_tokens, y_tokens, masks,
                 render_x, render_y, w_ref):
        self.spec = spec
        self.ids = ids                  # (n,) int64 pairing ids
        self.parent_ids = parent_ids    # (n,) int64, -1 for true pairs
        self.x_tokens = x_tokens        # (n, M, d_tok)
        self.y_tokens = y_tokens        # (n, L, d_tok)
        self.masks = masks              # (n, L) bool, deviating token positions
        self.render_x = render_x        # (M, d_tok, d_latent)
        self.render_y = render_y        # (L, d_tok, d_latent)
        self.w_ref = w_ref              # (d_latent, d_latent)

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i):
        return Sample(
            id=int(self.ids[i]),
            x_tokens=self.x_tokens[i],
            y_tokens=self.y_tokens[i],
            parent_id=int(self.parent_ids[i]),
            mismatch_mask=np.nonzero(self.masks[i])[0].astype(np.int64),
        )

    @property
    def n_positives(self):
        return int((self.parent_ids < 0).sum())

    @property
    def n_siblings(self):
        return int((self.parent_ids >= 0).sum())

    def positive_rows(self):
        return np.nonzero(self.parent_ids < 0)[0]

    def sibling_rows(self):
        return np.nonzero(self.parent_ids >= 0)[0]

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.intp)
        return Corpus(self.spec, self.ids[rows], self.parent_ids[rows],
                      self.x_tokens[rows], self.y_tokens[rows], self.masks[rows],
                      self.render_x, self.render_y, self.w_ref)

    def split(self, holdout_frac):
        """Deterministic train/holdout split on pair id; a sibling always
        follows its anchor's side so no near-duplicates leak across."""
        pos = self.positive_rows()
        n_hold = int(round(holdout_frac * len(pos)))
        if n_hold == 0:
            return self, self.subset(np.zeros(0, dtype=np.intp))
        hold_ids = set(self.ids[pos[-n_hold:]].tolist())
        owner = np.where(self.parent_ids >= 0, self.parent_ids, self.ids)
        hold = np.array([o in hold_ids for o in owner.tolist()])
        return self.subset(np.nonzero(~hold)[0]), self.subset(np.nonzero(hold)[0])

    # -- reference encoder -------------------------------------------------

    def reference_embeddings(self):
        """Unit-norm embeddings of every sample under the fixed random linear
        reference encoder (concept estimate -> w_ref -> normalize)."""
        n = len(self)
        d = self.spec.d_latent
        cx = np.empty((n, d))
        cy = np.empty((n, d))
        pinv_x = _block_pinvs(self.render_x, d)
        pinv_y = _block_pinvs(self.render_y, d)
        for t in range(self.render_x.shape[0]):
            coords = np.arange(d) % self.render_x.shape[0] == t
            cx[:, coords] = self.x_tokens[:, t, :] @ pinv_x[t].T
        for t in range(self.render_y.shape[0]):
            coords = np.arange(d) % self.render_y.shape[0] == t
            cy[:, coords] = self.y_tokens[:, t, :] @ pinv_y[t].T
        ex = cx @ self.w_ref.T
        ey = cy @ self.w_ref.T
        ex /= np.linalg.norm(ex, axis=1, keepdims=True)
        ey /= np.linalg.norm(ey, axis=1, keepdims=True)
        return ex, ey

    # -- persistence --------------------------------------------------------

    def save(self, path, sidecar=True):
        arrays = {
            "ids": self.ids,
            "parent_ids": self.parent_ids,
            "x_tokens": self.x_tokens,
            "y_tokens": self.y_tokens,
            "masks": self.masks.astype(np.uint8),
            "render_x": self.render_x,
            "render_y": self.render_y,
            "w_ref": self.w_ref,
        }
        save_container(path, "corpus", asdict(self.spec), arrays)
        if sidecar:
            with open(str(path) + ".json", "w") as f:
                json.dump(asdict(self.spec), f, indent=2, sort_keys=True)
                f.write("\n")

    @classmethod
    def load(cls, path):
        meta, arrays = load_container(path, expect_kind="corpus")
        spec = CorpusSpec(**meta)
        return cls(spec, arrays["ids"], arrays["parent_ids"], arrays["x_tokens"],
                   arrays["y_tokens"], arrays["masks"].astype(bool),
                   arrays["render_x"], arrays["render_y"], arrays["w_ref"])


def _block_pinvs(render, d_latent):
    n_tok = render.shape[0]
    out = []
    for t in range(n_tok):
        coords = np.arange(d_latent) % n_tok == t
        full = np.zeros((d_latent, render.shape[1]))
        full[coords, :] = np.linalg.pinv(render[t][:, coords])
        out.append(full)
    return out


def _render_side(concept, render, sigma, rng):
    """Render all tokens of one modality: token t sees only its coordinate
    block of the concept, through a fixed random lift, plus Gaussian noise."""
    n_tok, d_tok, _ = render.shape
    toks = np.empty((n_tok, d_tok))
    for t in range(n_tok):
        toks[t] = render[t] @ concept
    toks += sigma * rng.standard_normal((n_tok, d_tok))
    return toks


def _ref_embed(tokens, pinvs, n_tok, w_ref, d_latent):
    c = np.zeros(d_latent)
    for t in range(n_tok):
        coords = np.arange(d_latent) % n_tok == t
        c[coords] = (pinvs[t] @ tokens[t])[coords]
    e = w_ref @ c
    return e / np.linalg.norm(e)


MAX_SIBLING_ATTEMPTS = 64


def generate(spec):
    """Generate a corpus per ``spec``: ``n_pairs`` true pairs plus, for a
    ``rho`` fraction of anchors, one ambiguous sibling pair whose reference
    similarity to the anchor lands within ``epsilon_gen`` of the positive's.

    Raises GenerationError when the perturbation search cannot place a
    sibling inside the margin after a bounded number of attempts.
    """
    root = np.random.SeedSequence(entropy=(spec.seed, 0xBAC1))
    master = np.random.default_rng(root)
    d = spec.d_latent

    render_x = np.empty((spec.m_tokens, d, d))
    render_y = np.empty((spec.l_tokens, d, d))
    for t in range(spec.m_tokens):
        coords = np.arange(d) % spec.m_tokens == t
        render_x[t] = np.where(coords[None, :],
                               master.standard_normal((d, d)) / np.sqrt(coords.sum()), 0.0)
    for t in range(spec.l_tokens):
        coords = np.arange(d) % spec.l_tokens == t
        render_y[t] = np.where(coords[None, :],
                               master.standard_normal((d, d)) / np.sqrt(coords.sum()), 0.0)
    w_ref = master.standard_normal((d, d)) / np.sqrt(d)

    pinv_x = _block_pinvs(render_x, d)
    pinv_y = _block_pinvs(render_y, d)

    ids, parents, xs, ys, masks = [], [], [], [], []
    sib_records = []  # (anchor_row, sibling arrays) appended after positives

    for i in range(spec.n_pairs):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(spec.seed, 1, i)))
        concept = rng.standard_normal(d)
        x_tok = _render_side(concept, render_x, spec.noise_sigma, rng)
        y_tok = _render_side(concept, render_y, spec.noise_sigma, rng)
        ids.append(i)
        parents.append(-1)
        xs.append(x_tok)
        ys.append(y_tok)
        masks.append(np.zeros(spec.l_tokens, dtype=bool))

        if rng.random() >= spec.rho:
            continue

        ex = _ref_embed(x_tok, pinv_x, spec.m_tokens, w_ref, d)
        s_pos = float(ex @ _ref_embed(y_tok, pinv_y, spec.l_tokens, w_ref, d))
        sib = _search_sibling(spec, concept, ex, s_pos, render_x, render_y,
                              pinv_y, w_ref, rng)
        if sib is None:
            raise GenerationError(
                f"pair {i}: no sibling within epsilon_gen={spec.epsilon_gen} "
                f"after {MAX_SIBLING_ATTEMPTS} attempts; (rho, epsilon_gen) infeasible"
            )
        sib_records.append((i, *sib))

    next_id = spec.n_pairs
    for anchor, x_tok, y_tok, mask in sib_records:
        ids.append(next_id)
        parents.append(anchor)
        xs.append(x_tok)
        ys.append(y_tok)
        masks.append(mask)
        next_id += 1

    return Corpus(spec, np.array(ids, dtype=np.int64), np.array(parents, dtype=np.int64),
                  np.stack(xs), np.stack(ys), np.stack(masks), render_x, render_y, w_ref)


def _search_sibling(spec, concept, anchor_emb, s_pos, render_x, render_y,
                    pinv_y, w_ref, rng):
    """Find token positions to perturb so the sibling's reference similarity
    gap to the positive is at most epsilon_gen; the count of perturbed
    tokens is maximized by bisection (more deviating tokens = harder case,
    as long as it stays inside the margin)."""
    d = spec.d_latent
    for _ in range(MAX_SIBLING_ATTEMPTS):
        order = rng.permutation(spec.l_tokens)
        replacement = rng.standard_normal(d)
        noise_y = rng.standard_normal((spec.l_tokens, render_y.shape[1]))

        def gap_at(k):
            mixed = concept.copy()
            coords = np.isin(np.arange(d) % spec.l_tokens, order[:k])
            mixed[coords] = replacement[coords]
            toks = np.empty_like(noise_y)
            for t in range(spec.l_tokens):
                toks[t] = render_y[t] @ mixed
            toks = toks + spec.noise_sigma * noise_y
            ey = _ref_embed(toks, pinv_y, spec.l_tokens, w_ref, d)
            return abs(float(anchor_emb @ ey) - s_pos), mixed, toks

        lo, hi = 1, spec.l_tokens
        best = None
        g, mixed, toks = gap_at(1)
        if g <= spec.epsilon_gen:
            best = (1, mixed, toks)
        else:
            continue
        while lo < hi:
            mid = (lo + hi + 1) // 2
            g, mixed, toks = gap_at(mid)
            if g <= spec.epsilon_gen:
                best = (mid, mixed, toks)
                lo = mid
            else:
                hi = mid - 1
        k, mixed, y_tok = best
        x_tok = _render_side(mixed, render_x, spec.noise_sigma, rng)
        mask = np.zeros(spec.l_tokens, dtype=bool)
        mask[order[:k]] = True
        return x_tok, y_tok, mask
    return None


def empirical_rho(corpus, x_emb, y_emb, epsilon):
    """Fraction of anchors (true pairs) with at least one non-matching
    sample whose similarity to the anchor is within ``epsilon`` of the
    positive's, under the given unit-norm embeddings."""
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    pos = corpus.positive_rows()
    sims = x_emb[pos] @ y_emb.T
    pos_sims = np.einsum("ij,ij->i", x_emb[pos], y_emb[pos])
    flags = kernels.ambiguous_anchor_flags(
        sims, pos_sims, corpus.ids[pos], corpus.ids, float(epsilon)
    )
    return float(flags.mean())
