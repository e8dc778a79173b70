"""Reverse-mode differentiation of the spectral pipeline.

`pipeline_forward` runs moment combination, whitening, whitened third-moment
assembly, power iteration, and reconstruction while recording every
intermediate on a tape; `pipeline_backward` replays the tape in reverse and
returns the exact gradient of any function of the reconstructed columns with
respect to the pseudo-observations. Discrete forward choices (restart
winners, eigenvalue sign flips) are frozen at their forward values, and the
power iterations are unrolled at the forward pass's iteration counts.

The symmetric-eigendecomposition adjoint keeps the full spectrum on the
tape. Couplings between two retained eigenvectors with nearly equal
eigenvalues are dropped: the rest of the pipeline is invariant to rotations
inside a degenerate retained block, so those terms are pure gauge. A
near-degeneracy between a retained and a discarded eigenvalue makes the
truncation itself unstable and raises DegenerateSpectrumError instead.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .decomposition import (
    EigenpairList,
    PowerMethodOptions,
    WhiteningPair,
    lda_whitened_raw_third,
    reconstruct_parameters,
    tensor_power_method,
)
from .exceptions import DegenerateSpectrumError, RankDeficiencyError
from .moments import Model, ModelConstants, gmm_estimate_sigma2, lda_raw_moments

EIGEN_GAP_TOL = 1e-8


@dataclass
class TrainingCache:
    """Training-side constants of one pseudo-data run.

    First/second-moment statistics are computed once; the raw data stays
    around because the whitened third moment re-projects it under each
    iteration's whitening map.
    """

    consts: ModelConstants
    x: np.ndarray               # (D, N_T) points or count vectors
    n: int
    precomputed: bool = True
    mu: np.ndarray = None       # GMM: E[x]
    exx: np.ndarray = None      # GMM: E[x x^T]
    e1: np.ndarray = None       # LDA: raw first moment
    e2: np.ndarray = None       # LDA: raw pair moment
    ell: np.ndarray = None      # LDA: document lengths
    u3: np.ndarray = None       # LDA: 1/(ell (ell-1) (ell-2))

    def first_second_stats(self):
        if self.precomputed:
            if self.consts.model == Model.GMM:
                return self.mu, self.exx
            return self.e1, self.e2
        return _training_stats(self.x, self.consts)


def _training_stats(x, consts):
    if consts.model == Model.GMM:
        return x.mean(axis=1), x @ x.T / x.shape[1]
    raw = lda_raw_moments(x, with_m3=False)
    return raw.m1, raw.m2


def build_training_cache(x_t, consts, precompute=True):
    """Estimate training statistics once (optionally deferred, as a
    reference mode for the cache-correctness check)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if consts.model == Model.GMM and consts.sigma2 is None:
        consts = ModelConstants.for_gmm(consts.k,
                                        sigma2=gmm_estimate_sigma2(x_t),
                                        weights=consts.weights)
    cache = TrainingCache(consts=consts, x=x_t, n=x_t.shape[1],
                          precomputed=precompute)
    if precompute:
        a, b = _training_stats(x_t, consts)
        if consts.model == Model.GMM:
            cache.mu, cache.exx = a, b
        else:
            cache.e1, cache.e2 = a, b
    if consts.model == Model.LDA:
        cache.ell = x_t.sum(axis=0)
        cache.u3 = 1.0 / (cache.ell * (cache.ell - 1.0) * (cache.ell - 2.0))
    return cache


@dataclass
class PipelineTape:
    consts: ModelConstants
    cache: TrainingCache
    xp: np.ndarray
    n_total: float
    c_p: float
    mu: np.ndarray = None        # GMM: combined mean
    e1: np.ndarray = None        # LDA: combined raw first moment
    e2: np.ndarray = None        # LDA: combined raw pair moment
    ell_p: np.ndarray = None
    u2_p: np.ndarray = None
    u3_p: np.ndarray = None
    evals: np.ndarray = None     # full spectrum, ascending
    evecs: np.ndarray = None
    s: np.ndarray = None         # retained eigenvalues, descending
    u: np.ndarray = None
    w: np.ndarray = None
    b: np.ndarray = None
    y_t: np.ndarray = None
    y_p: np.ndarray = None
    mu_w: np.ndarray = None      # GMM: W^T mu; LDA: W^T e1
    g: np.ndarray = None         # GMM: W^T W
    pw: np.ndarray = None        # LDA: W^T e2 W
    t: np.ndarray = None
    tpm_tapes: list = None
    lams: np.ndarray = None      # extraction order
    vecs: np.ndarray = None


def _three_slot_vec(t, v):
    """t(., v, v) + t(v, ., v) + t(v, v, .)."""
    return (np.einsum("klm,l,m->k", t, v, v)
            + np.einsum("klm,k,m->l", t, v, v)
            + np.einsum("klm,k,l->m", t, v, v))


def _outer3(v):
    return v[:, None, None] * v[None, :, None] * v[None, None, :]


def _retained_eigh(m2, k, rank_tol=1e-10):
    sym = 0.5 * (m2 + m2.T)
    evals, evecs = np.linalg.eigh(sym)
    s = evals[::-1][:k].copy()
    u = evecs[:, ::-1][:, :k].copy()
    if s[-1] <= rank_tol * max(s[0], np.finfo(np.float64).tiny):
        raise RankDeficiencyError(
            f"combined second moment rank-deficient: retained eigenvalues "
            f"span [{s[-1]:.3e}, {s[0]:.3e}]", singular_values=evals[::-1])
    return evals, evecs, s, u


def pipeline_forward(xp, cache, options=PowerMethodOptions(), tpm_seed=0):
    """Reconstructed columns (extraction order, unprojected) plus the tape."""
    consts = cache.consts
    xp = np.asarray(xp, dtype=np.float64)
    n_p = xp.shape[1]
    n = cache.n + n_p
    c_p = n_p / n
    c_t = cache.n / n
    tape = PipelineTape(consts=consts, cache=cache, xp=xp, n_total=float(n),
                        c_p=c_p)

    if consts.model == Model.GMM:
        mu_t, exx_t = cache.first_second_stats()
        tape.mu = c_t * mu_t + c_p * xp.mean(axis=1)
        exx = c_t * exx_t + c_p * (xp @ xp.T / n_p)
        m2 = exx.copy()
        m2[np.diag_indices_from(m2)] -= consts.sigma2
    else:
        e1_t, e2_t = cache.first_second_stats()
        ell_p = xp.sum(axis=0)
        if np.any(ell_p < 3.0):
            from .exceptions import InsufficientLengthError
            bad = int(np.argmax(ell_p < 3.0))
            raise InsufficientLengthError(
                f"pseudo-document {bad} has length {ell_p[bad]:g} < 3",
                doc_index=bad)
        u1_p = 1.0 / ell_p
        tape.u2_p = 1.0 / (ell_p * (ell_p - 1.0))
        tape.u3_p = 1.0 / (ell_p * (ell_p - 1.0) * (ell_p - 2.0))
        tape.ell_p = ell_p
        e1 = c_t * e1_t + (xp @ u1_p) / n
        e2_psum = (xp * tape.u2_p) @ xp.T
        e2_psum[np.diag_indices_from(e2_psum)] -= xp @ tape.u2_p
        e2 = c_t * e2_t + e2_psum / n
        a0 = consts.alpha0
        m2 = e2 - (a0 / (a0 + 1.0)) * np.outer(e1, e1)
        tape.e1, tape.e2 = e1, e2

    tape.evals, tape.evecs, tape.s, tape.u = _retained_eigh(m2, consts.k)
    root = np.sqrt(tape.s)
    tape.w = tape.u / root
    tape.b = tape.u * root

    if consts.model == Model.GMM:
        tape.y_t = tape.w.T @ cache.x
        tape.y_p = tape.w.T @ xp
        t = backend.triple_mean(tape.y_t, np.full(cache.n, 1.0 / n))
        t += backend.triple_mean(tape.y_p, np.full(n_p, 1.0 / n))
        tape.mu_w = tape.w.T @ tape.mu
        tape.g = tape.w.T @ tape.w
        mw, g = tape.mu_w, tape.g
        t -= consts.sigma2 * (mw[:, None, None] * g[None, :, :]
                              + g[:, None, :] * mw[None, :, None]
                              + g[:, :, None] * mw[None, None, :])
    else:
        t = lda_whitened_raw_third(cache.x, tape.w, cache.u3 / n)
        t += lda_whitened_raw_third(xp, tape.w, tape.u3_p / n)
        tape.pw = tape.w.T @ tape.e2 @ tape.w
        tape.mu_w = tape.w.T @ tape.e1
        a0 = consts.alpha0
        c2 = a0 / (a0 + 2.0)
        c3 = 2.0 * a0 * a0 / ((a0 + 2.0) * (a0 + 1.0))
        mw, pw = tape.mu_w, tape.pw
        t -= c2 * (pw[:, :, None] * mw[None, None, :]
                   + pw[:, None, :] * mw[None, :, None]
                   + mw[:, None, None] * pw[None, :, :])
        t += c3 * (mw[:, None, None] * mw[None, :, None] * mw[None, None, :])
    tape.t = t

    pairs, tapes, order = tensor_power_method(
        t, consts.k, options=options, seed=tpm_seed, want_tape=True)
    inv = np.argsort(order)
    tape.lams = pairs.lams[inv]
    tape.vecs = pairs.vectors[:, inv]
    tape.tpm_tapes = tapes

    if consts.model == Model.GMM:
        a = tape.b @ tape.vecs * tape.lams[None, :]
    else:
        a = tape.b @ tape.vecs / np.sqrt(consts.beta)
    return a, tape


def pipeline_result(tape, project=True):
    """Public decomposition (sorted eigenpairs, feasibility projection)."""
    order = np.argsort(-tape.lams, kind="stable")
    pairs = EigenpairList(lams=tape.lams[order], vectors=tape.vecs[:, order])
    wp = WhiteningPair(w=tape.w, b=tape.b, s=tape.s)
    return reconstruct_parameters(pairs, wp, tape.consts, project=project)


def _tpm_backward(tape, lams_bar, vecs_bar):
    """Reverse the deflated power method: gradient w.r.t. the input tensor
    given gradients on the extraction-order eigenpairs."""
    k = tape.lams.shape[0]
    tbar_next = np.zeros_like(tape.t)
    for comp in range(k - 1, -1, -1):
        rec = tape.tpm_tapes[comp]
        lam = tape.lams[comp]
        v = tape.vecs[:, comp]
        lam_bar = float(lams_bar[comp])
        v_bar = vecs_bar[:, comp].copy()
        # deflation backward: t_next = t_k - lam * v^(x)3
        tbar_k = tbar_next.copy()
        lam_bar -= float(np.einsum("klm,k,l,m->", tbar_next, v, v, v))
        v_bar -= lam * _three_slot_vec(tbar_next, v)
        # sign normalization: (lam, v) = flip * (lam_pre, v_pre)
        lam_bar *= rec.flip
        v_bar = v_bar * rec.flip
        v_pre = rec.thetas[-1]
        # lam_pre = t_k(v_pre, v_pre, v_pre)
        tbar_k += lam_bar * _outer3(v_pre)
        v_bar += lam_bar * _three_slot_vec(rec.tensor, v_pre)
        # unrolled power iterations
        tbar_k += backend.power_iteration_backward(
            rec.tensor, rec.thetas, rec.norms, v_bar, rec.shift)
        tbar_next = tbar_k
    return tbar_next


def _eigh_backward(tape, ubar, sbar):
    """Adjoint of the truncated symmetric eigendecomposition."""
    evals, evecs = tape.evals, tape.evecs
    d = evals.shape[0]
    k = tape.s.shape[0]
    idx = np.arange(d - 1, d - k - 1, -1)
    vbar_full = np.zeros((d, d))
    vbar_full[:, idx] = ubar
    wbar_full = np.zeros(d)
    wbar_full[idx] = sbar

    coupling = evecs.T @ vbar_full
    gaps = evals[None, :] - evals[:, None]
    scale = float(np.max(np.abs(evals)))
    if scale == 0.0:
        scale = 1.0
    small = np.abs(gaps) < EIGEN_GAP_TOL * scale
    retained = np.zeros(d, dtype=bool)
    retained[idx] = True
    boundary = small & retained[None, :] & ~retained[:, None]
    np.fill_diagonal(boundary, False)
    if np.any(boundary & (coupling != 0.0)):
        i, j = np.argwhere(boundary & (coupling != 0.0))[0]
        raise DegenerateSpectrumError(
            f"eigenvalue gap |{evals[i]:.6e} - {evals[j]:.6e}| at the "
            f"truncation boundary is below {EIGEN_GAP_TOL:.0e} x spectrum "
            "scale; use gradient_mode='finite_difference'")
    f = np.zeros((d, d))
    ok = ~small
    f[ok] = 1.0 / gaps[ok]
    np.fill_diagonal(f, 0.0)
    mbar = evecs @ (np.diag(wbar_full) + f * coupling) @ evecs.T
    return 0.5 * (mbar + mbar.T)


def _triple_slots_batch(tbar, y):
    """Per-column tbar(., y, y) + tbar(y, ., y) + tbar(y, y, .)."""
    p1 = np.einsum("klm,ln,mn->kn", tbar, y, y, optimize=True)
    p2 = np.einsum("klm,kn,mn->ln", tbar, y, y, optimize=True)
    p3 = np.einsum("klm,kn,ln->mn", tbar, y, y, optimize=True)
    return p1, p2, p3


def _lda_third_backward(docs, w, weights, tbar, want_docs_grad):
    """Backward of `lda_whitened_raw_third` w.r.t. (w, docs, weights).

    docsbar and wtsbar are only assembled for pseudo-documents; training
    documents and their weights are constants of the run.
    """
    y = w.T @ docs
    # adjoint of the three forward placements: transpose(2,0,1) pulls back
    # through its inverse permutation (1,2,0)
    tb_cross = tbar + tbar.transpose(0, 2, 1) + tbar.transpose(1, 2, 0)

    # term A: sum_n wts_n y_n^(x)3
    p1, p2, p3 = _triple_slots_batch(tbar, y)
    ybar = (p1 + p2 + p3) * weights[None, :]
    wtsbar = np.einsum("kn,kn->n", p1, y) if want_docs_grad else None

    # term B: -sum_n wts_n sum_d c_dn (w_d w_d y_n), three placements folded
    # into tb_cross against the base placement S2[k,l] y[m]
    s2 = np.einsum("dn,dk,dl->kln", docs, w, w, optimize=True)
    q = np.einsum("klm,mn->kln", tb_cross, y, optimize=True)
    s2bar = -q * weights[None, None, :]
    ybar -= weights[None, :] * np.einsum("klm,kln->mn", tb_cross, s2, optimize=True)
    if want_docs_grad:
        wtsbar -= np.einsum("kln,kln->n", q, s2, optimize=True)
    wbar = (np.einsum("dn,kln,dl->dk", docs, s2bar, w, optimize=True)
            + np.einsum("dn,lkn,dl->dk", docs, s2bar, w, optimize=True))
    docsbar = None
    if want_docs_grad:
        docsbar = np.einsum("kln,dk,dl->dn", s2bar, w, w, optimize=True)

    # term C: +2 sum_d r_d w_d^(x)3 with r = docs @ weights
    r = docs @ weights
    m1 = np.einsum("klm,dl,dm->dk", tbar, w, w, optimize=True)
    m2 = np.einsum("klm,dk,dm->dl", tbar, w, w, optimize=True)
    m3 = np.einsum("klm,dk,dl->dm", tbar, w, w, optimize=True)
    rbar = 2.0 * np.einsum("dk,dk->d", m1, w)
    wbar += 2.0 * r[:, None] * (m1 + m2 + m3)
    if want_docs_grad:
        docsbar += rbar[:, None] * weights[None, :]
        wtsbar += docs.T @ rbar

    # y = w^T docs
    wbar += docs @ ybar.T
    if want_docs_grad:
        docsbar += w @ ybar
    return wbar, docsbar, wtsbar


def pipeline_backward(tape, abar):
    """Gradient of <abar, a(xp)> with respect to the pseudo-observations."""
    consts = tape.consts
    cache = tape.cache
    xp = tape.xp
    n = tape.n_total
    n_p = xp.shape[1]
    c_p = tape.c_p
    w, b = tape.w, tape.b
    abar = np.asarray(abar, dtype=np.float64)

    # reconstruction backward
    if consts.model == Model.GMM:
        bbar = abar @ (tape.vecs * tape.lams[None, :]).T
        vecs_bar = (b.T @ abar) * tape.lams[None, :]
        lams_bar = np.einsum("dk,dk->k", abar, b @ tape.vecs)
    else:
        rho = 1.0 / np.sqrt(consts.beta)
        bbar = rho * (abar @ tape.vecs.T)
        vecs_bar = rho * (b.T @ abar)
        lams_bar = np.zeros_like(tape.lams)

    tbar = _tpm_backward(tape, lams_bar, vecs_bar)

    wbar = np.zeros_like(w)
    xpbar = np.zeros_like(xp)

    if consts.model == Model.GMM:
        sigma2 = consts.sigma2
        mw, g = tape.mu_w, tape.g
        # correction backward: t -= sigma2 * (mu_w (x) G, three placements)
        mu_w_bar = -sigma2 * (np.einsum("klm,lm->k", tbar, g)
                              + np.einsum("klm,km->l", tbar, g)
                              + np.einsum("klm,kl->m", tbar, g))
        gbar = -sigma2 * (np.einsum("klm,k->lm", tbar, mw)
                          + np.einsum("klm,l->km", tbar, mw)
                          + np.einsum("klm,m->kl", tbar, mw))
        # triple means backward
        p1, p2, p3 = _triple_slots_batch(tbar, tape.y_t)
        ybar_t = (p1 + p2 + p3) / n
        p1, p2, p3 = _triple_slots_batch(tbar, tape.y_p)
        ybar_p = (p1 + p2 + p3) / n
        xpbar += w @ ybar_p
        wbar += cache.x @ ybar_t.T + xp @ ybar_p.T
        # G = W^T W and mu_w = W^T mu
        wbar += w @ (gbar + gbar.T)
        wbar += np.outer(tape.mu, mu_w_bar)
        mubar = w @ mu_w_bar
        # whitening backward
        m2bar = _whitening_backward(tape, wbar, bbar)
        # m2 = c_t exx_t + c_p xp xp^T / n_p - sigma2 I
        xpbar += (c_p / n_p) * ((m2bar + m2bar.T) @ xp)
        # mu = c_t mu_t + c_p * mean(xp)
        xpbar += (c_p / n_p) * mubar[:, None]
        return xpbar

    # LDA
    a0 = consts.alpha0
    c1 = a0 / (a0 + 1.0)
    c2 = a0 / (a0 + 2.0)
    c3 = 2.0 * a0 * a0 / ((a0 + 2.0) * (a0 + 1.0))
    mw, pw = tape.mu_w, tape.pw
    pwbar = -c2 * (np.einsum("klm,m->kl", tbar, mw)
                   + np.einsum("klm,l->km", tbar, mw)
                   + np.einsum("klm,k->lm", tbar, mw))
    mu_w_bar = -c2 * (np.einsum("klm,kl->m", tbar, pw)
                      + np.einsum("klm,km->l", tbar, pw)
                      + np.einsum("klm,lm->k", tbar, pw))
    mu_w_bar += c3 * (np.einsum("klm,l,m->k", tbar, mw, mw)
                      + np.einsum("klm,k,m->l", tbar, mw, mw)
                      + np.einsum("klm,k,l->m", tbar, mw, mw))

    wbar_t, _, _ = _lda_third_backward(cache.x, w, cache.u3 / n, tbar,
                                       want_docs_grad=False)
    wbar_p, docsbar, wtsbar = _lda_third_backward(xp, w, tape.u3_p / n, tbar,
                                                  want_docs_grad=True)
    wbar += wbar_t + wbar_p
    xpbar += docsbar
    # weights_n = u3(ell_n) / n with d u3/d ell = -(3 ell^2 - 6 ell + 2) u3^2
    ell = tape.ell_p
    dw_dc = -(3.0 * ell * ell - 6.0 * ell + 2.0) * tape.u3_p ** 2 / n
    xpbar += (wtsbar * dw_dc)[None, :]

    # pw = W^T e2 W ; mu_w = W^T e1
    e2bar = w @ pwbar @ w.T
    wbar += tape.e2 @ w @ (pwbar + pwbar.T)
    e1bar = w @ mu_w_bar
    wbar += np.outer(tape.e1, mu_w_bar)

    m2bar = _whitening_backward(tape, wbar, bbar)
    # m2 = e2 - c1 e1 e1^T
    e2bar += m2bar
    e1bar -= c1 * ((m2bar + m2bar.T) @ tape.e1)

    # e1 pseudo part: sum_n c_n / (ell_n * n)
    dots = e1bar @ xp
    xpbar += (e1bar[:, None] - (dots / ell)[None, :]) / (ell * n)[None, :]
    # e2 pseudo part: sum_n u2_n (c_n c_n^T - diag(c_n)) / n
    g2 = e2bar / n
    sym_g2c = (g2 + g2.T) @ xp
    diag_g2 = np.diag(g2).copy()
    quad = np.einsum("dn,de,en->n", xp, g2, xp, optimize=True) - diag_g2 @ xp
    du2 = -(2.0 * ell - 1.0) * tape.u2_p ** 2
    xpbar += tape.u2_p[None, :] * (sym_g2c - diag_g2[:, None]) + (du2 * quad)[None, :]
    return xpbar


def _whitening_backward(tape, wbar, bbar):
    """w = u / sqrt(s), b = u * sqrt(s) -> gradient w.r.t. the symmetric m2."""
    root = np.sqrt(tape.s)
    ubar = wbar / root[None, :] + bbar * root[None, :]
    uw = np.einsum("dk,dk->k", tape.u, wbar)
    ub = np.einsum("dk,dk->k", tape.u, bbar)
    sbar = -0.5 * uw / root ** 3 + 0.5 * ub / root
    return _eigh_backward(tape, ubar, sbar)
