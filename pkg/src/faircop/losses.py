"""Separating-cluster loss family and centroid scoring over projected embeddings.

All functions are pure and operate on lists/arrays of equal-dimension real
vectors. Similarities are cosine with a zero-norm convention: any vector with
norm below 1e-12 has similarity 0 to everything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

ZERO_NORM_EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    """Shared knobs for the contrastive terms.

    include_positive_in_denominator switches the per-pair term to the
    variant whose normalizer also contains the positive pair. Only the
    pretraining objective uses it; the online loss keeps the default.
    """

    tau: float = 0.5
    include_positive_in_denominator: bool = False

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


def _as_matrix(vectors, name: str) -> np.ndarray:
    m = np.asarray(vectors, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ValueError(f"{name} must be a vector or list of vectors")
    return m


def _safe_normalize(m: np.ndarray) -> np.ndarray:
    """Row-normalize; rows with norm < 1e-12 become zero rows (similarity 0)."""
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    out = np.where(norms < ZERO_NORM_EPS, 0.0, m / np.where(norms == 0, 1.0, norms))
    return out


def cosine_similarity_matrix(a, b) -> np.ndarray:
    """Pairwise cosine similarities, rows of `a` against rows of `b`."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return np.clip(_safe_normalize(a) @ _safe_normalize(b).T, -1.0, 1.0)


def npair_term(e, e_pos, negatives, tau: float = 0.5, *,
               include_positive_in_denominator: bool = False) -> float:
    """Contrastive log-ratio of one positive pair against a negative set.

    Returns -log( exp(sim(e, e_pos)/tau) / sum_k exp(sim(e, k)/tau) ) with k
    ranging over `negatives` (plus the positive itself when the flag is on).
    Evaluated in log space, so extreme tau values stay finite.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    e = np.asarray(e, dtype=np.float64)
    e_pos = np.asarray(e_pos, dtype=np.float64)
    neg = _as_matrix(negatives, "negatives")
    if neg.shape[0] < 1:
        raise ValueError("negative set must be nonempty")
    if e.shape != e_pos.shape or e.shape[-1] != neg.shape[1]:
        raise ValueError("all vectors must share one dimension")
    pos_sim = float(cosine_similarity_matrix(e, e_pos)[0, 0])
    neg_sims = cosine_similarity_matrix(e, neg)[0]
    logits = neg_sims / tau
    if include_positive_in_denominator:
        logits = np.append(logits, pos_sim / tau)
    return float(logsumexp(logits) - pos_sim / tau)


def scloss(similar_proj, dissimilar_proj, tau: float = 0.5) -> float:
    """Mean contrastive term over all ordered pairs of distinct similar
    projections, with the dissimilar projections as the shared negative set.

    Duplicated vectors count as distinct elements (list semantics).
    """
    s = _as_matrix(similar_proj, "similar_proj")
    d = _as_matrix(dissimilar_proj, "dissimilar_proj")
    n = s.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 similar projections, got {n}")
    if d.shape[0] < 1:
        raise ValueError("need at least 1 dissimilar projection")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    sims_ss = cosine_similarity_matrix(s, s)
    sims_sd = cosine_similarity_matrix(s, d)
    # l(x, y) = lse_k(sim(x,k)/tau) - sim(x,y)/tau summed over ordered x != y
    lse = logsumexp(sims_sd / tau, axis=1)
    off_diag_sum = sims_ss.sum(axis=1) - np.diagonal(sims_ss)
    total = float(np.sum((n - 1) * lse - off_diag_sum / tau))
    return total / (n * (n - 1))


def scloss_alt(similar_proj, dissimilar_proj, tau: float = 0.5) -> float:
    """Symmetric variant clustering both sets: each side's pair terms use the
    other side as negatives, halved and normalized per side.
    """
    s = _as_matrix(similar_proj, "similar_proj")
    d = _as_matrix(dissimilar_proj, "dissimilar_proj")
    if s.shape[0] < 2 or d.shape[0] < 2:
        raise ValueError(
            f"need at least 2 projections per side, got {s.shape[0]} and {d.shape[0]}"
        )
    return 0.5 * scloss(s, d, tau) + 0.5 * scloss(d, s, tau)


def score(u, similar_proj) -> float:
    """Cosine similarity of `u` to the centroid of the similar projections."""
    s = _as_matrix(similar_proj, "similar_proj")
    if s.shape[0] < 1:
        raise ValueError("similar set must be nonempty")
    centroid = s.mean(axis=0)
    return float(cosine_similarity_matrix(u, centroid)[0, 0])


def score_alt(u, similar_proj, dissimilar_proj) -> float:
    """Centroid score minus the same score against the dissimilar centroid."""
    d = _as_matrix(dissimilar_proj, "dissimilar_proj")
    if d.shape[0] < 1:
        raise ValueError("dissimilar set must be nonempty")
    return score(u, similar_proj) - score(u, dissimilar_proj)


def score_many(candidates, similar_proj) -> np.ndarray:
    """Vectorized `score` over candidate rows."""
    s = _as_matrix(similar_proj, "similar_proj")
    if s.shape[0] < 1:
        raise ValueError("similar set must be nonempty")
    centroid = s.mean(axis=0)
    return cosine_similarity_matrix(candidates, centroid)[:, 0]


def score_alt_many(candidates, similar_proj, dissimilar_proj) -> np.ndarray:
    """Vectorized `score_alt` over candidate rows."""
    d = _as_matrix(dissimilar_proj, "dissimilar_proj")
    if d.shape[0] < 1:
        raise ValueError("dissimilar set must be nonempty")
    return score_many(candidates, similar_proj) - score_many(candidates, dissimilar_proj)
