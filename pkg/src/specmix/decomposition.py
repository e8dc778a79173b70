"""Whitening, symmetric tensor power method, and parameter reconstruction.

The estimation pipeline is: whiten the second moment so the third moment
collapses to an orthogonally decomposable (K,K,K) tensor, extract its
eigenpairs by deflated power iteration, and map them back through the
un-whitener into parameter columns. The whitened third moment is assembled
directly from projected observations so the (D,D,D) array never has to be
materialized; an explicit-contraction path exists as a cross-check for small
dimensions.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import backend
from .exceptions import (
    NumericError,
    RankDeficiencyError,
    ShapeMismatchError,
    UnrecoverableComponentError,
)
from .moments import (
    Model,
    ModelConstants,
    MomentSet,
    gmm_estimate_sigma2,
    gmm_moments,
    lda_center_moments,
    lda_raw_moments,
)

RANK_TOL = 1e-10


@dataclass(frozen=True)
class PowerMethodOptions:
    """Shifted-iteration settings.

    The shift (shift_scale times the Frobenius norm of the current deflated
    tensor) makes the iteration convergent on arbitrary symmetric tensors
    without changing its eigenpairs; `tol` stops iterating once the vector
    moves less than that per step.
    """

    restarts: int = 15
    iters: int = 60
    polish: int = 20
    shift_scale: float = 1.0
    tol: float = 1e-13

    def __post_init__(self):
        if self.restarts < 1 or self.iters < 1 or self.polish < 0:
            raise ValueError("restarts/iters must be >= 1 and polish >= 0")
        if self.shift_scale < 0 or self.tol < 0:
            raise ValueError("shift_scale and tol must be nonnegative")


@dataclass(frozen=True)
class WhiteningPair:
    """Maps between data space and the whitened K-space.

    w: (D,K) with w^T m2 w = I_K; b: (D,K) un-whitener with b^T w = I_K;
    s: the K retained eigenvalues of m2, descending.
    """

    w: np.ndarray
    b: np.ndarray
    s: np.ndarray


@dataclass(frozen=True)
class EigenpairList:
    """K tensor eigenpairs; column j of `vectors` pairs with `lams[j]`."""

    lams: np.ndarray
    vectors: np.ndarray

    def __len__(self):
        return self.lams.shape[0]


@dataclass(frozen=True)
class DecompositionResult:
    a: np.ndarray
    weights: np.ndarray
    eigenpairs: EigenpairList
    whitening: WhiteningPair
    # Pre-projection columns (identical to `a` for the Gaussian mixture).
    a_raw: np.ndarray = None


def whiten(m2, k, rank_tol=RANK_TOL):
    """Top-k whitening of a symmetric PSD-ish matrix.

    Returns W = U_k diag(s_k)^{-1/2} together with the un-whitener
    B = U_k diag(s_k)^{1/2} (the pseudo-inverse transpose of W).
    """
    m2 = np.asarray(m2, dtype=np.float64)
    if m2.ndim != 2 or m2.shape[0] != m2.shape[1]:
        raise ShapeMismatchError(f"m2 must be square, got {m2.shape}")
    d = m2.shape[0]
    if k > d:
        raise ShapeMismatchError(f"k={k} exceeds dimension {d}")
    sym = 0.5 * (m2 + m2.T)
    evals, evecs = np.linalg.eigh(sym)
    s = evals[::-1][:k].copy()
    u = evecs[:, ::-1][:, :k].copy()
    top = max(s[0], 0.0)
    if s[-1] <= rank_tol * max(top, np.finfo(np.float64).tiny):
        raise RankDeficiencyError(
            f"effective rank below {k}: retained eigenvalues span "
            f"[{s[-1]:.3e}, {s[0]:.3e}] against tolerance {rank_tol:.1e} x largest",
            singular_values=evals[::-1])
    root = np.sqrt(s)
    return WhiteningPair(w=u / root, b=u * root, s=s)


def contract_third(m3, w):
    """Explicit contraction m3(w, w, w) -> (K,K,K)."""
    return np.einsum("abc,ak,bl,cm->klm", m3, w, w, w, optimize=True)


def _gmm_whitened_third(x, wp, sigma2):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[1]
    y = wp.w.T @ x
    t = backend.triple_mean(y, np.full(n, 1.0 / n))
    mu_w = wp.w.T @ x.mean(axis=1)
    g = wp.w.T @ wp.w
    t -= sigma2 * (mu_w[:, None, None] * g[None, :, :]
                   + g[:, None, :] * mu_w[None, :, None]
                   + g[:, :, None] * mu_w[None, None, :])
    return t


def lda_doc_weights(ell, n):
    """Per-document averaging weights 1/(n * ell(ell-1)(ell-2))."""
    return 1.0 / (n * ell * (ell - 1.0) * (ell - 2.0))


def lda_whitened_raw_third(docs, w, doc_weights):
    """Whitened distinct-position triple statistics, summed with weights.

    Computes sum_n doc_weights[n] * f3(c_n)(w, w, w) without materializing
    any (D,D,D) array: with y = w^T c and r_d the d-th row of w,
    f3(c)(w,w,w) = y^(x)3 - sum_d c_d [r_d r_d y]_{3 placements} + 2 sum_d c_d r_d^(x)3.
    """
    docs = np.asarray(docs, dtype=np.float64)
    y = w.T @ docs
    t = backend.triple_mean(y, doc_weights)
    cross = backend.cross_pair_vec(docs, w, y, doc_weights)
    t -= cross + cross.transpose(0, 2, 1) + cross.transpose(2, 0, 1)
    r = docs @ doc_weights
    t += 2.0 * np.einsum("d,dk,dl,dm->klm", r, w, w, w, optimize=True)
    return t


def lda_center_whitened_third(t_raw, pw, mu_w, consts):
    """Concentration centering applied in the whitened K-space."""
    a0 = consts.alpha0
    c2 = a0 / (a0 + 2.0)
    c3 = 2.0 * a0 * a0 / ((a0 + 2.0) * (a0 + 1.0))
    return (t_raw
            - c2 * (pw[:, :, None] * mu_w[None, None, :]
                    + pw[:, None, :] * mu_w[None, :, None]
                    + mu_w[:, None, None] * pw[None, :, :])
            + c3 * (mu_w[:, None, None] * mu_w[None, :, None] * mu_w[None, None, :]))


def whitened_third_moment(x, whitening, consts):
    """Whitened third moment of one dataset, assembled from projected data.

    Agrees with `contract_third` on the explicit third moment whenever that
    array is materializable.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != whitening.w.shape[0]:
        raise ShapeMismatchError(
            f"data dimension {x.shape[0]} != whitening dimension {whitening.w.shape[0]}")
    if consts.model == Model.GMM:
        sigma2 = consts.sigma2
        if sigma2 is None:
            sigma2 = gmm_estimate_sigma2(x)
        return _gmm_whitened_third(x, whitening, sigma2)
    n = x.shape[1]
    ell = x.sum(axis=0)
    t_raw = lda_whitened_raw_third(x, whitening.w, lda_doc_weights(ell, n))
    raw = lda_raw_moments(x, with_m3=False)
    pw = whitening.w.T @ raw.m2 @ whitening.w
    mu_w = whitening.w.T @ raw.m1
    return lda_center_whitened_third(t_raw, pw, mu_w, consts)


@dataclass
class PowerMethodTape:
    """Forward record of one extracted component, for the reverse pass."""

    tensor: np.ndarray          # deflated tensor the component was extracted from
    thetas: np.ndarray          # iterates of the winning restart
    norms: np.ndarray           # update norms per iteration
    flip: float                 # +-1 sign applied to (lambda, v)
    shift: float                # iteration shift, frozen for the reverse pass


def _t_vvv(t, v):
    return float(np.einsum("klm,k,l,m->", t, v, v, v))


def _random_unit_columns(rng, k, count):
    th = rng.standard_normal((k, count))
    nrm = np.linalg.norm(th, axis=0)
    nrm[nrm == 0.0] = 1.0
    return th / nrm


def tensor_power_method(t, k, options=PowerMethodOptions(), seed=0, want_tape=False):
    """Deflated robust power iteration on a symmetric (m,m,m) tensor.

    For each of k components, `options.restarts` random unit starts are run
    for `options.iters` iterations; the candidate maximizing t(v,v,v) (ties:
    lowest restart index) is re-run from its start for iters+polish
    iterations with the iterates recorded, the eigenpair is sign-normalized
    to lambda >= 0, and the tensor is deflated. Results are ordered by
    decreasing lambda. Deterministic for a given seed.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3 or len(set(t.shape)) != 1:
        raise ShapeMismatchError(f"expected a cubic tensor, got {t.shape}")
    if not np.all(np.isfinite(t)):
        raise NumericError("tensor contains non-finite entries")
    m = t.shape[0]
    if k > m:
        raise ShapeMismatchError(f"cannot extract {k} components from a {m}-tensor")
    rng = np.random.default_rng(seed)
    work = t.copy()
    lams = np.empty(k)
    vecs = np.empty((m, k))
    tapes = []
    for comp in range(k):
        shift = options.shift_scale * float(np.linalg.norm(work))
        theta0s = _random_unit_columns(rng, m, options.restarts)
        _, objs = backend.power_iteration_scan(work, theta0s, options.iters,
                                               shift, options.tol)
        best = int(np.argmax(objs))
        thetas, norms = backend.power_iteration_tape(
            work, theta0s[:, best], options.iters + options.polish,
            shift, options.tol)
        v = thetas[-1]
        lam = _t_vvv(work, v)
        flip = 1.0
        if lam < 0.0:
            flip, lam, v = -1.0, -lam, -v
        lams[comp] = lam
        vecs[:, comp] = v
        if want_tape:
            tapes.append(PowerMethodTape(tensor=work.copy(), thetas=thetas,
                                         norms=norms, flip=flip, shift=shift))
        work = work - lam * (v[:, None, None] * v[None, :, None] * v[None, None, :])
    order = np.argsort(-lams, kind="stable")
    pairs = EigenpairList(lams=lams[order], vectors=vecs[:, order])
    if want_tape:
        return pairs, tapes, order
    return pairs


def simplex_project(v):
    """Euclidean projection of a vector (or each column) onto the simplex."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        return _simplex_project_1d(v)
    return np.column_stack([_simplex_project_1d(v[:, j]) for j in range(v.shape[1])])


def _simplex_project_1d(v):
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.shape[0] + 1)
    cond = u - css / ind > 0
    rho = ind[cond][-1]
    theta = css[cond][-1] / rho
    return np.maximum(v - theta, 0.0)


def reconstruct_parameters(pairs, whitening, consts, rank_tol=RANK_TOL, project=True):
    """Map whitened eigenpairs back to parameter columns and weights.

    Gaussian mixture: a_k = lambda_k * B v_k and w_k proportional to
    lambda_k^{-2} (renormalized). Topic model: a_k = B v_k / sqrt(beta) with
    the uniform weight convention; columns are projected onto the simplex
    unless `project=False`.
    """
    lams = pairs.lams
    k = len(pairs)
    if k == 0:
        raise ValueError("no eigenpairs")
    lam_max = float(np.max(lams))
    if lam_max <= 0 or np.any(lams <= rank_tol * lam_max):
        raise UnrecoverableComponentError(
            f"tensor eigenvalues too small to invert: {lams}")
    if consts.model == Model.GMM:
        a = whitening.b @ pairs.vectors * lams[None, :]
        w_raw = lams ** -2.0
        weights = w_raw / w_raw.sum()
        return DecompositionResult(a=a, weights=weights, eigenpairs=pairs,
                                   whitening=whitening, a_raw=a)
    a_raw = whitening.b @ pairs.vectors / np.sqrt(consts.beta)
    a = simplex_project(a_raw) if project else a_raw
    weights = np.full(k, 1.0 / k)
    return DecompositionResult(a=a, weights=weights, eigenpairs=pairs,
                               whitening=whitening, a_raw=a_raw)


def decompose(x, consts, options=PowerMethodOptions(), seed=0, rank_tol=RANK_TOL,
              project=True):
    """Full spectral fit from data or a precomputed (centered) moment set.

    Given data, moments are estimated internally and the whitened third
    moment is assembled without materializing the (D,D,D) array. Given a
    MomentSet, its explicit m3 is contracted instead (and must be present).
    Deterministic for a given seed.
    """
    if isinstance(x, MomentSet):
        ms = x
        if ms.raw:
            raise ValueError("decompose requires centered moments")
        if ms.m3 is None:
            raise ValueError("MomentSet input requires an explicit m3")
        wp = whiten(ms.m2, consts.k, rank_tol=rank_tol)
        t = contract_third(ms.m3, wp.w)
    else:
        x = np.asarray(x, dtype=np.float64)
        if consts.model == Model.GMM:
            sigma2 = consts.sigma2
            if sigma2 is None:
                sigma2 = gmm_estimate_sigma2(x)
            consts = ModelConstants.for_gmm(consts.k, sigma2=sigma2,
                                            weights=consts.weights)
            ms2 = gmm_moments(x, sigma2, with_m3=False)
            wp = whiten(ms2.m2, consts.k, rank_tol=rank_tol)
            t = _gmm_whitened_third(x, wp, sigma2)
        else:
            raw = lda_raw_moments(x, with_m3=False)
            centered = lda_center_moments(raw, consts)
            wp = whiten(centered.m2, consts.k, rank_tol=rank_tol)
            n = x.shape[1]
            ell = x.sum(axis=0)
            t_raw = lda_whitened_raw_third(x, wp.w, lda_doc_weights(ell, n))
            pw = wp.w.T @ raw.m2 @ wp.w
            mu_w = wp.w.T @ raw.m1
            t = lda_center_whitened_third(t_raw, pw, mu_w, consts)
    pairs = tensor_power_method(t, consts.k, options=options, seed=seed)
    return reconstruct_parameters(pairs, wp, consts, rank_tol=rank_tol,
                                  project=project)


def align_columns(a, ref, allow_sign=False):
    """Resolve column permutation (and optional sign) against a reference.

    Minimizes the total L2 distance by optimal assignment on the K x K
    pairwise distance matrix. Returns (perm, signs, aligned) with
    aligned[:, j] = signs[j] * a[:, perm[j]] matched to ref[:, j].
    """
    a = np.asarray(a, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if a.shape != ref.shape:
        raise ShapeMismatchError(f"shapes differ: {a.shape} vs {ref.shape}")
    k = a.shape[1]
    d_plus = np.linalg.norm(a[:, :, None] - ref[:, None, :], axis=0)
    if allow_sign:
        d_minus = np.linalg.norm(a[:, :, None] + ref[:, None, :], axis=0)
        cost = np.minimum(d_plus, d_minus)
    else:
        cost = d_plus
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(k, dtype=np.intp)
    perm[cols] = rows
    signs = np.ones(k)
    if allow_sign:
        signs = np.where(d_minus[perm, np.arange(k)] < d_plus[perm, np.arange(k)],
                         -1.0, 1.0)
    aligned = a[:, perm] * signs[None, :]
    return perm, signs, aligned


def aligned_error(a, ref, allow_sign=False, relative=True):
    """Frobenius error after column alignment (relative by default)."""
    _, _, aligned = align_columns(a, ref, allow_sign=allow_sign)
    err = float(np.linalg.norm(aligned - ref))
    if relative:
        err /= max(float(np.linalg.norm(ref)), np.finfo(np.float64).tiny)
    return err
