"""Empirical low-order moment estimates for both generative models.

Data layout is column-observations: a dataset is a (D, N) array whose n-th
column is one observation (a point in R^D for the Gaussian mixture, a
nonnegative token-count vector for the topic model). Count vectors may be
real-valued ("soft" counts); the distinct-position estimators extend to them
by the same algebraic formulas and reduce to the exact combinatorial
estimator on integers.

All functions are pure; accumulation order is fixed by observation index, so
results are reproducible.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import DegenerateDataError, InsufficientLengthError, ShapeMismatchError

# Explicit (D,D,D) third-moment arrays are refused above this dimension;
# use the whitened path in `decomposition` instead.
MAX_EXPLICIT_DIM = 512


class Model(str, Enum):
    GMM = "gmm"
    LDA = "lda"


@dataclass(frozen=True)
class ModelConstants:
    """Per-model scalars tying the moment forms to the parameter matrix.

    For the topic model, `beta` and `gamma` are the shared coefficients of
    the rank-one terms in the second and third moment; for the Gaussian
    mixture they both equal the (generally unknown) component weights, so
    they are resolved from the decomposition itself rather than stored.
    """

    model: Model
    k: int
    alpha_b: float | None = None
    sigma2: float | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"component count must be >= 1, got {self.k}")
        if self.model == Model.LDA:
            if self.alpha_b is None or self.alpha_b <= 0:
                raise ValueError("LDA requires alpha_b > 0")
        if self.sigma2 is not None and self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")

    @classmethod
    def for_lda(cls, k, alpha_b):
        return cls(model=Model.LDA, k=k, alpha_b=float(alpha_b))

    @classmethod
    def for_gmm(cls, k, sigma2=None, weights=None):
        if weights is not None:
            weights = np.asarray(weights, dtype=np.float64)
            if weights.shape != (k,) or np.any(weights <= 0):
                raise ValueError("weights must be K positive entries")
            if abs(weights.sum() - 1.0) > 1e-8:
                raise ValueError("weights must sum to 1")
        s2 = None if sigma2 is None else float(sigma2)
        return cls(model=Model.GMM, k=k, sigma2=s2, weights=weights)

    @property
    def alpha0(self):
        """Total Dirichlet concentration K * alpha_b."""
        return self.k * self.alpha_b

    @property
    def beta(self):
        if self.model == Model.LDA:
            a0 = self.alpha0
            return self.alpha_b / ((a0 + 1.0) * a0)
        return self.weights

    @property
    def gamma(self):
        if self.model == Model.LDA:
            a0 = self.alpha0
            return 2.0 * self.alpha_b / ((a0 + 2.0) * (a0 + 1.0) * a0)
        return self.weights


@dataclass(frozen=True)
class MomentSet:
    """First through third moment estimates averaged over `n` observations.

    `m3` is optional: it is only materialized for desk-scale dimensions.
    For the topic model a MomentSet is either *raw* (plain averages of the
    distinct-position statistics) or *centered* (concentration-dependent
    correction applied); raw sets combine exactly across datasets, centered
    sets are what the decomposition consumes. The flag records which.
    """

    m1: np.ndarray
    m2: np.ndarray
    m3: np.ndarray | None
    n: float
    raw: bool = False

    @property
    def dim(self):
        return self.m1.shape[0]


def _as_data(x, min_obs=1):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatchError(f"expected (D, N) data, got shape {x.shape}")
    if x.shape[1] < min_obs:
        raise DegenerateDataError(
            f"need at least {min_obs} observations, got {x.shape[1]}")
    return x


def _check_explicit_dim(d):
    if d > MAX_EXPLICIT_DIM:
        raise ShapeMismatchError(
            f"explicit third moment refused for D={d} > {MAX_EXPLICIT_DIM}; "
            "use the whitened third-moment path")


def gmm_estimate_sigma2(x):
    """Noise variance estimate: smallest eigenvalue of the sample covariance.

    Slightly negative eigenvalues from sampling noise are clamped to zero;
    anything below -1e-10 (relative) is a genuine numerical problem and is
    still clamped but indicates a misspecified call.
    """
    x = _as_data(x, min_obs=2)
    mu = x.mean(axis=1)
    cov = x @ x.T / x.shape[1] - np.outer(mu, mu)
    smallest = float(np.linalg.eigvalsh(cov)[0])
    return max(smallest, 0.0)


def gmm_moments(x, sigma2, with_m3=True):
    """Noise-corrected moments of mixture data.

    m2 = E[x (x) x] - sigma2*I; m3 subtracts the three diagonal placements
    of sigma2 * E[x] (x) I. With the same sigma2 on every dataset these are
    affine in plain expectations, so they combine exactly.
    """
    x = _as_data(x)
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    d, n = x.shape
    m1 = x.mean(axis=1)
    m2 = x @ x.T / n
    m2[np.diag_indices(d)] -= sigma2
    m3 = None
    if with_m3:
        _check_explicit_dim(d)
        m3 = np.einsum("dn,en,fn->def", x, x, x, optimize=True) / n
        idx = np.arange(d)
        m3[:, idx, idx] -= sigma2 * m1[:, None]
        m3[idx, :, idx] -= sigma2 * m1[None, :]
        m3[idx, idx, :] -= sigma2 * m1[None, :]
    return MomentSet(m1=m1, m2=m2, m3=m3, n=float(n), raw=False)


def doc_lengths(docs):
    """Column sums (token counts per document)."""
    return np.asarray(docs, dtype=np.float64).sum(axis=0)


def _check_lengths(ell):
    bad = np.nonzero(ell < 3.0)[0]
    if bad.size:
        raise InsufficientLengthError(
            f"document {bad[0]} has length {ell[bad[0]]:g} < 3",
            doc_index=int(bad[0]))


def lda_doc_statistics(c, ell=None):
    """Single-document contributions to the first three raw moments.

    Returns (m1, pair, triple): the distinct-position estimators
        m1     = c / ell
        pair   = (c c^T - diag(c)) / (ell (ell-1))
        triple = (c^(x)3 - coincident-index corrections) / (ell (ell-1) (ell-2))
    For integer counts the pair/triple equal the average of
    e_{w_i} (x) e_{w_j} (...) over ordered tuples of distinct positions; the
    same formulas define the soft-count extension.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 1:
        raise ShapeMismatchError(f"expected a count vector, got shape {c.shape}")
    if np.any(c < 0):
        raise ValueError("counts must be nonnegative")
    if ell is None:
        ell = float(c.sum())
    if ell < 3.0:
        raise InsufficientLengthError(f"document length {ell:g} < 3")
    d = c.shape[0]
    idx = np.arange(d)
    m1 = c / ell
    pair = np.outer(c, c)
    pair[idx, idx] -= c
    pair /= ell * (ell - 1.0)
    cc = np.outer(c, c)
    triple = cc[:, :, None] * c[None, None, :]
    triple[idx, idx, :] -= cc
    triple[idx, :, idx] -= cc
    triple[:, idx, idx] -= cc
    triple[idx, idx, idx] += 2.0 * c
    triple /= ell * (ell - 1.0) * (ell - 2.0)
    return m1, pair, triple


def lda_raw_moments(docs, with_m3=True):
    """Average the per-document statistics over a corpus (no centering).

    Raw moments are plain expectations, so `combine_moments` on two raw sets
    is exactly the raw moments of the concatenated corpus.
    """
    docs = _as_data(docs)
    if np.any(docs < 0):
        raise ValueError("counts must be nonnegative")
    d, n = docs.shape
    ell = docs.sum(axis=0)
    _check_lengths(ell)
    idx = np.arange(d)
    u1 = 1.0 / ell
    u2 = 1.0 / (ell * (ell - 1.0))
    u3 = 1.0 / (ell * (ell - 1.0) * (ell - 2.0))
    m1 = docs @ u1 / n
    m2 = (docs * u2) @ docs.T / n
    m2[idx, idx] -= docs @ u2 / n
    m3 = None
    if with_m3:
        _check_explicit_dim(d)
        m3 = np.einsum("dn,en,fn,n->def", docs, docs, docs, u3, optimize=True) / n
        pair_u3 = (docs * u3) @ docs.T / n
        m3[idx, idx, :] -= pair_u3
        m3[idx, :, idx] -= pair_u3
        m3[:, idx, idx] -= pair_u3
        m3[idx, idx, idx] += 2.0 * docs @ u3 / n
    return MomentSet(m1=m1, m2=m2, m3=m3, n=float(n), raw=True)


def lda_center_moments(ms, consts):
    """Apply the concentration-dependent centering to raw topic moments."""
    if not ms.raw:
        raise ValueError("moments are already centered")
    a0 = consts.alpha0
    c1 = a0 / (a0 + 1.0)
    c2 = a0 / (a0 + 2.0)
    c3 = 2.0 * a0 * a0 / ((a0 + 2.0) * (a0 + 1.0))
    m1 = ms.m1
    m2 = ms.m2 - c1 * np.outer(m1, m1)
    m3 = None
    if ms.m3 is not None:
        m3 = (ms.m3
              - c2 * (ms.m2[:, :, None] * m1[None, None, :]
                      + ms.m2[:, None, :] * m1[None, :, None]
                      + m1[:, None, None] * ms.m2[None, :, :])
              + c3 * (m1[:, None, None] * m1[None, :, None] * m1[None, None, :]))
    return MomentSet(m1=m1.copy(), m2=m2, m3=m3, n=ms.n, raw=False)


def lda_moments(docs, consts, with_m3=True):
    """Centered topic-model moments of a corpus of count vectors."""
    return lda_center_moments(lda_raw_moments(docs, with_m3=with_m3), consts)


def combine_moments(mt, mp):
    """Observation-count weighted average of two moment sets.

    This realizes the cached-statistics update: the first argument is
    typically a precomputed training set that is never recomputed. Exact
    concatenation equivalence holds for expectation-form moments (raw topic
    moments; mixture moments under a shared sigma2).
    """
    if mt.m1.shape != mp.m1.shape or mt.m2.shape != mp.m2.shape:
        raise ShapeMismatchError(
            f"moment dimensions differ: {mt.m1.shape[0]} vs {mp.m1.shape[0]}")
    if mt.raw != mp.raw:
        raise ValueError("cannot combine raw with centered moments")
    n = mt.n + mp.n
    if n <= 0:
        raise DegenerateDataError("combined observation count is zero")
    wt = mt.n / n
    wp = mp.n / n
    m3 = None
    if mt.m3 is not None and mp.m3 is not None:
        if mt.m3.shape != mp.m3.shape:
            raise ShapeMismatchError("third-moment shapes differ")
        m3 = wt * mt.m3 + wp * mp.m3
    return MomentSet(m1=wt * mt.m1 + wp * mp.m1,
                     m2=wt * mt.m2 + wp * mp.m2,
                     m3=m3, n=n, raw=mt.raw)
