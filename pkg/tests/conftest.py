import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_force_doc_statistics(counts):
    """Independent oracle for the per-document estimators: enumerate every
    ordered tuple of distinct word positions explicitly."""
    counts = np.asarray(counts)
    d = counts.shape[0]
    words = np.repeat(np.arange(d), counts.astype(int))
    ell = len(words)
    m1 = np.zeros(d)
    pair = np.zeros((d, d))
    triple = np.zeros((d, d, d))
    for i in range(ell):
        m1[words[i]] += 1.0 / ell
        for j in range(ell):
            if j == i:
                continue
            pair[words[i], words[j]] += 1.0 / (ell * (ell - 1))
            for k in range(ell):
                if k == i or k == j:
                    continue
                triple[words[i], words[j], words[k]] += (
                    1.0 / (ell * (ell - 1) * (ell - 2)))
    return m1, pair, triple


def central_difference(f, x, step=1e-6):
    """Entrywise central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    flat = np.zeros(x.size)
    xf = x.flatten()
    for i in range(xf.size):
        probe = xf.copy()
        probe[i] = xf[i] + step
        up = f(probe.reshape(x.shape))
        probe[i] = xf[i] - step
        dn = f(probe.reshape(x.shape))
        flat[i] = (up - dn) / (2.0 * step)
    return flat.reshape(x.shape)


def random_orthonormal(rng, d, k):
    q, _ = np.linalg.qr(rng.standard_normal((d, k)))
    return q[:, :k]


def random_simplex_columns(rng, d, k, alpha=1.0):
    return rng.dirichlet(np.full(d, alpha), size=k).T
