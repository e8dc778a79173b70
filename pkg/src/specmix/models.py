"""Generative samplers and differentiable data log-likelihoods.

The log-likelihoods supply the data-fit term of the pseudo-data objective
and the held-out evaluation metric. The topic model's marginal likelihood is
intractable, so a smooth surrogate is used: each soft count is scored
against the mean word distribution under the symmetric topic prior. The
surrogate is used consistently at train and eval time; its absolute values
are not comparable to other estimators' perplexities.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .exceptions import DegenerateDataError, NumericError

EPS_FLOOR = 1e-12


@dataclass(frozen=True)
class GmmModel:
    """Spherical Gaussian mixture: columns of `a` are component means."""

    a: np.ndarray
    weights: np.ndarray
    sigma2: float

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        w = self.weights
        if w.shape != (self.a.shape[1],) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
            raise ValueError("weights must be a probability vector of length K")

    @property
    def dim(self):
        return self.a.shape[0]

    @property
    def k(self):
        return self.a.shape[1]


@dataclass(frozen=True)
class LdaModel:
    """Symmetric-Dirichlet topic model; columns of `a` are topics."""

    a: np.ndarray
    alpha_b: float
    doc_length: int

    def __post_init__(self):
        if self.alpha_b <= 0:
            raise ValueError("alpha_b must be positive")
        if self.doc_length < 3:
            raise ValueError("doc_length must be >= 3")
        col_sums = self.a.sum(axis=0)
        if np.any(self.a < -1e-10) or np.any(np.abs(col_sums - 1.0) > 1e-10):
            raise ValueError("topic columns must lie on the simplex")

    @property
    def dim(self):
        return self.a.shape[0]

    @property
    def k(self):
        return self.a.shape[1]

    @property
    def mean_word_distribution(self):
        """Expected word distribution under the symmetric Dirichlet mean."""
        return self.a.mean(axis=1)


def gmm_sample(model, n, seed=0, return_labels=False):
    """Draw n observations: component choice, then spherical Gaussian."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labels = rng.choice(model.k, size=n, p=model.weights)
    x = model.a[:, labels] + np.sqrt(model.sigma2) * rng.standard_normal((model.dim, n))
    if return_labels:
        return x, labels
    return x


def lda_sample(model, n, seed=0):
    """Draw n documents as (D, n) count vectors of length `doc_length`."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    b = rng.dirichlet(np.full(model.k, model.alpha_b), size=n)  # (n, K)
    word_probs = b @ model.a.T  # (n, D)
    # Guard tiny negative round-off before the multinomial draw.
    word_probs = np.clip(word_probs, 0.0, None)
    word_probs /= word_probs.sum(axis=1, keepdims=True)
    docs = np.empty((model.dim, n))
    for i in range(n):
        docs[:, i] = rng.multinomial(model.doc_length, word_probs[i])
    return docs


def gmm_loglik(x, model):
    """Mixture log-likelihood of column observations, with d/dx.

    Returns (sum_n log sum_k w_k N(x_n | a_k, sigma2 I), gradient (D,N)).
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite observations")
    d = model.dim
    diff = x[:, None, :] - model.a[:, :, None]          # (D, K, N)
    sq = np.einsum("dkn,dkn->kn", diff, diff)
    log_w = np.log(np.maximum(model.weights, EPS_FLOOR))
    log_comp = (log_w[:, None] - 0.5 * sq / model.sigma2
                - 0.5 * d * np.log(2.0 * np.pi * model.sigma2))
    total = float(logsumexp(log_comp, axis=0).sum())
    resp = softmax(log_comp, axis=0)                    # (K, N)
    grad = -np.einsum("kn,dkn->dn", resp, diff) / model.sigma2
    return total, grad


def lda_surrogate_loglik(docs, model):
    """Surrogate count log-likelihood against the mean word distribution.

    Returns (sum_{n,d} c_{dn} log(abar_d + eps), gradient w.r.t. the soft
    counts). The gradient is constant in the counts.
    """
    docs = np.asarray(docs, dtype=np.float64)
    if np.any(docs < 0):
        raise ValueError("counts must be nonnegative")
    log_abar = np.log(model.mean_word_distribution + EPS_FLOOR)
    total = float(log_abar @ docs.sum(axis=1))
    grad = np.broadcast_to(log_abar[:, None], docs.shape).copy()
    return total, grad


def loglik(x, model):
    """Model-dispatched data log-likelihood with gradient."""
    if isinstance(model, GmmModel):
        return gmm_loglik(x, model)
    return lda_surrogate_loglik(x, model)


def heldout_eval(x, model):
    """Per-observation log-likelihood on held-out data."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise DegenerateDataError("held-out set is empty")
    total, _ = loglik(x, model)
    return total / x.shape[1]
