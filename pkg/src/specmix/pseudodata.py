"""Pseudo-data regularization of the spectral fit.

The estimator is refit on real data augmented with a small artificial
dataset; the artificial observations are optimized by gradient descent so
that the refit parameters score well under a chosen regularizer while the
observations themselves stay likely under the unregularized fit. The loss is

    L(X_P) = -log p(X_P | fitted training model) + lam * sign(R) * R(A(X_P))

where A(X_P) is the decomposition of combined train + pseudo moments and
sign(R) is +1 for penalties and -1 for log-priors, so that descending L
always moves the regularizer in its preferred direction.

Topic-model pseudo-documents are parameterized as unconstrained reals mapped
through a column softmax and scaled to a fixed document length, which keeps
the soft counts valid under every gradient step.
"""

import csv
import io
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import softmax

from .adam import AdamParams, AdamState, adam_step
from .adjoints import build_training_cache, pipeline_backward, pipeline_forward, pipeline_result
from .decomposition import DecompositionResult, PowerMethodOptions, decompose
from .exceptions import ConfigError, NumericError
from .models import GmmModel, LdaModel, gmm_sample, lda_sample, loglik
from .moments import Model, ModelConstants


class GradientMode(str, Enum):
    ADJOINT = "adjoint"
    FINITE_DIFFERENCE = "finite_difference"


@dataclass(frozen=True)
class PseudoDataConfig:
    """Settings of one regularized fit."""

    lam: float
    n_pseudo: int
    epsilon: float = 1e-3
    max_iters: int = 500
    adam: AdamParams = field(default_factory=AdamParams)
    gradient_mode: GradientMode = GradientMode.ADJOINT
    seed: int = 0
    power: PowerMethodOptions = field(default_factory=PowerMethodOptions)
    doc_length: int | None = None
    fd_step: float = 1e-5
    cache_training_moments: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lam must be nonnegative")
        if self.n_pseudo < 0:
            raise ConfigError("n_pseudo must be nonnegative")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")


@dataclass(frozen=True)
class TraceRow:
    iter: int
    loss: float
    data_term: float
    reg_term: float
    delta_xp: float
    eval_metric: float | None = None


@dataclass
class FitTrace:
    """Per-iteration optimization record; one row per completed iteration."""

    rows: list = field(default_factory=list)

    CSV_COLUMNS = ("iter", "loss", "data_term", "reg_term", "delta_xp",
                   "eval_metric")

    def append(self, row):
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return [getattr(r, name) for r in self.rows]

    def to_csv(self, path_or_buf):
        if isinstance(path_or_buf, (str, Path)):
            with open(path_or_buf, "w", newline="") as fh:
                self._write(fh)
        else:
            self._write(path_or_buf)

    def _write(self, fh):
        writer = csv.writer(fh)
        writer.writerow(self.CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([r.iter,
                             format_float(r.loss),
                             format_float(r.data_term),
                             format_float(r.reg_term),
                             format_float(r.delta_xp),
                             "" if r.eval_metric is None else format_float(r.eval_metric)])

    def to_csv_text(self):
        buf = io.StringIO()
        self._write(buf)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path):
        trace = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for rec in reader:
                trace.append(TraceRow(
                    iter=int(rec["iter"]),
                    loss=float(rec["loss"]),
                    data_term=float(rec["data_term"]),
                    reg_term=float(rec["reg_term"]),
                    delta_xp=float(rec["delta_xp"]),
                    eval_metric=(None if rec["eval_metric"] == ""
                                 else float(rec["eval_metric"]))))
        return trace


@dataclass
class FitResult:
    result: DecompositionResult        # refit on train + pseudo data
    trace: FitTrace
    x_p: np.ndarray                    # final pseudo-observations (data space)
    converged: bool
    a_t: DecompositionResult           # training-only fit
    model_t: GmmModel | LdaModel


def format_float(v):
    """Stable float formatting for byte-reproducible CSV output."""
    return format(float(v), ".17g")


def _loss_terms(xp, model_t, reg, lam, a_cols):
    data_val, _ = loglik(xp, model_t)
    data_term = -data_val
    if reg is None or lam == 0.0:
        reg_signed = 0.0
        if reg is not None:
            val, _ = reg.value_and_grad(a_cols)
            reg_signed = reg.loss_sign * val
        return data_term + lam * reg_signed, data_term, reg_signed
    val, _ = reg.value_and_grad(a_cols)
    reg_signed = reg.loss_sign * val
    return data_term + lam * reg_signed, data_term, reg_signed


def loss(cache, xp, model_t, reg, cfg):
    """Objective value at the given pseudo-observations."""
    a_cols, _ = pipeline_forward(xp, cache, options=cfg.power,
                                 tpm_seed=cfg.seed)
    total, _, _ = _loss_terms(xp, model_t, reg, cfg.lam, a_cols)
    return total


def loss_gradient(cache, xp, model_t, reg, cfg):
    """Gradient of the objective w.r.t. the pseudo-observations."""
    if cfg.gradient_mode == GradientMode.FINITE_DIFFERENCE:
        return _fd_gradient(cache, xp, model_t, reg, cfg)
    _, grad_data = loglik(xp, model_t)
    grad = -grad_data
    if reg is not None and cfg.lam != 0.0:
        a_cols, tape = pipeline_forward(xp, cache, options=cfg.power,
                                        tpm_seed=cfg.seed)
        _, reg_grad = reg.value_and_grad(a_cols)
        abar = cfg.lam * reg.loss_sign * reg_grad
        grad = grad + pipeline_backward(tape, abar)
    return grad


def _fd_gradient(cache, xp, model_t, reg, cfg):
    xp = np.asarray(xp, dtype=np.float64)
    grad = np.empty_like(xp)
    h = cfg.fd_step
    for d in range(xp.shape[0]):
        for n in range(xp.shape[1]):
            probe = xp.copy()
            probe[d, n] = xp[d, n] + h
            up = loss(cache, probe, model_t, reg, cfg)
            probe[d, n] = xp[d, n] - h
            dn = loss(cache, probe, model_t, reg, cfg)
            grad[d, n] = (up - dn) / (2.0 * h)
    return grad


def _resolve_doc_length(cfg, x_t):
    if cfg.doc_length is not None:
        if cfg.doc_length < 3:
            raise ConfigError("doc_length must be >= 3")
        return int(cfg.doc_length)
    return max(3, int(round(float(np.median(x_t.sum(axis=0))))))


def _training_model(a_t, cache, consts, ell_p):
    if consts.model == Model.GMM:
        return GmmModel(a=a_t.a, weights=a_t.weights, sigma2=cache.consts.sigma2)
    return LdaModel(a=a_t.a, alpha_b=consts.alpha_b, doc_length=ell_p)


def _init_pseudo(model_t, n_pseudo, seed, ell_p):
    """Draw initial pseudo-observations from the fitted training model."""
    if isinstance(model_t, GmmModel):
        x0 = gmm_sample(model_t, n_pseudo, seed=seed)
        return x0, x0
    counts0 = lda_sample(model_t, n_pseudo, seed=seed)
    z0 = np.log(counts0 + 0.5)
    return z0, _soft_counts(z0, ell_p)


def _soft_counts(z, ell_p):
    return ell_p * softmax(z, axis=0)


def _soft_counts_chain(z, ell_p, grad_c):
    """Pull a soft-count gradient back through the column softmax scaling."""
    p = softmax(z, axis=0)
    inner = np.einsum("dn,dn->n", p, grad_c)
    return ell_p * p * (grad_c - inner[None, :])


def fit_regularized(x_t, reg, consts, cfg, eval_fn=None):
    """Full regularized fit: fit the training model, optimize pseudo-data,
    refit on the combined moments.

    eval_fn, when given, is called each iteration with the current
    (unprojected columns, weights) and its value is recorded in the trace.
    Non-convergence within max_iters returns the best-loss iterate with
    converged=False rather than raising.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[1] < consts.k:
        raise ConfigError(
            f"need at least K={consts.k} training observations, got {x_t.shape[1]}")
    ss = np.random.SeedSequence(cfg.seed)
    seed_tdm, seed_init = ss.spawn(2)

    cache = build_training_cache(x_t, consts,
                                 precompute=cfg.cache_training_moments)
    consts = cache.consts
    a_t = decompose(x_t, consts, options=cfg.power, seed=seed_tdm)
    ell_p = _resolve_doc_length(cfg, x_t) if consts.model == Model.LDA else None
    model_t = _training_model(a_t, cache, consts, ell_p)

    trace = FitTrace()
    if cfg.n_pseudo == 0:
        empty = np.zeros((x_t.shape[0], 0))
        return FitResult(result=a_t, trace=trace, x_p=empty, converged=True,
                         a_t=a_t, model_t=model_t)

    var, xp = _init_pseudo(model_t, cfg.n_pseudo, seed_init, ell_p)
    state = AdamState.zeros_like(var)
    is_lda = consts.model == Model.LDA
    run_cfg = replace(cfg, seed=int(seed_tdm.generate_state(1)[0]))

    best_loss = np.inf
    best_xp = xp
    converged = False
    for it in range(1, cfg.max_iters + 1):
        a_cols, tape = pipeline_forward(xp, cache, options=cfg.power,
                                        tpm_seed=run_cfg.seed)
        total, data_term, reg_signed = _loss_terms(xp, model_t, reg, cfg.lam,
                                                   a_cols)
        if not np.isfinite(total):
            raise NumericError(f"loss became non-finite at iteration {it}")
        if total < best_loss:
            best_loss = total
            best_xp = xp

        if cfg.gradient_mode == GradientMode.ADJOINT:
            _, grad_data = loglik(xp, model_t)
            grad_c = -grad_data
            if reg is not None and cfg.lam != 0.0:
                _, reg_grad = reg.value_and_grad(a_cols)
                grad_c = grad_c + pipeline_backward(
                    tape, cfg.lam * reg.loss_sign * reg_grad)
        else:
            grad_c = _fd_gradient(cache, xp, model_t, reg, run_cfg)

        grad_var = _soft_counts_chain(var, ell_p, grad_c) if is_lda else grad_c
        var, state = adam_step(var, grad_var, state, cfg.adam)
        xp_new = _soft_counts(var, ell_p) if is_lda else var
        delta = float(np.linalg.norm(xp_new - xp))
        xp = xp_new

        metric = None
        if eval_fn is not None:
            weights = _weights_from_lams(tape.lams, consts)
            metric = float(eval_fn(a_cols, weights))
        trace.append(TraceRow(iter=it, loss=total, data_term=data_term,
                              reg_term=reg_signed, delta_xp=delta,
                              eval_metric=metric))
        if delta <= cfg.epsilon:
            converged = True
            break

    final_xp = xp if converged else best_xp
    _, final_tape = pipeline_forward(final_xp, cache, options=cfg.power,
                                     tpm_seed=run_cfg.seed)
    result = pipeline_result(final_tape, project=True)
    return FitResult(result=result, trace=trace, x_p=final_xp,
                     converged=converged, a_t=a_t, model_t=model_t)


def _weights_from_lams(lams, consts):
    if consts.model == Model.GMM:
        w = lams ** -2.0
        return w / w.sum()
    return np.full(consts.k, 1.0 / consts.k)
