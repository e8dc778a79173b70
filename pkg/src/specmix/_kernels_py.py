"""Pure-numpy implementations of the hot kernels.

Reference backend: the compiled extension in ``_kernels.pyx`` implements the
same functions with identical semantics; `specmix.backend` picks one at
import time. Everything here is deterministic (fixed summation order), so a
given backend always reproduces its own results bit-for-bit.

Power iterations use the shifted update u = t(I, v, v) + shift * v. A large
enough shift makes the iteration monotonically convergent on arbitrary
symmetric tensors (it leaves the eigenpairs unchanged), which keeps the
reverse pass through the unrolled iterations bounded; iterations stop early
once the update moves the vector by less than ``tol``.
"""

import numpy as np

COMPILED = False


def power_iteration_scan(t, theta0s, n_iters, shift=0.0, tol=0.0):
    """Run shifted power iterations on all restart columns at once.

    t: (K,K,K) symmetric tensor; theta0s: (K,L) unit columns.
    Returns (thetas (K,L), objectives (L,)) with objectives[l] = t(v,v,v).
    Columns stop updating once converged; zero-norm updates keep the
    previous vector.
    """
    th = np.array(theta0s, dtype=np.float64, copy=True)
    active = np.ones(th.shape[1], dtype=bool)
    for _ in range(n_iters):
        if not np.any(active):
            break
        cur = th[:, active]
        u = np.einsum("klm,ln,mn->kn", t, cur, cur) + shift * cur
        nrm = np.linalg.norm(u, axis=0)
        ok = nrm > 0.0
        new = cur.copy()
        new[:, ok] = u[:, ok] / nrm[ok]
        moved = np.linalg.norm(new - cur, axis=0)
        th[:, active] = new
        still = active.copy()
        still[active] = moved > tol
        active = still
    obj = np.einsum("klm,kn,ln,mn->n", t, th, th, th)
    return th, obj


def power_iteration_tape(t, theta0, n_iters, shift=0.0, tol=0.0):
    """Shifted power iterations on one vector, recording every iterate.

    Returns (thetas ((m+1, K)), norms (m,)) where m <= n_iters is the number
    of iterations actually run; norms[i] is the update norm before
    normalization, zero when the zero-update guard was taken.
    """
    k = t.shape[0]
    thetas = np.empty((n_iters + 1, k))
    norms = np.empty(n_iters)
    theta = np.array(theta0, dtype=np.float64, copy=True)
    thetas[0] = theta
    m = 0
    for i in range(n_iters):
        u = np.einsum("klm,l,m->k", t, theta, theta) + shift * theta
        nn = float(np.linalg.norm(u))
        norms[i] = nn
        new = u / nn if nn > 0.0 else theta
        thetas[i + 1] = new
        m = i + 1
        moved = float(np.linalg.norm(new - theta))
        theta = new
        if moved <= tol:
            break
    return thetas[:m + 1], norms[:m]


def power_iteration_backward(t, thetas, norms, vbar, shift=0.0):
    """Reverse pass through recorded power iterations.

    Accumulates the gradient with respect to the tensor; the initial vector
    and the shift are constants of the forward pass.
    """
    k = t.shape[0]
    tbar = np.zeros((k, k, k))
    tb = np.array(vbar, dtype=np.float64, copy=True)
    for i in range(len(norms) - 1, -1, -1):
        nn = norms[i]
        if nn == 0.0:
            continue
        th_prev = thetas[i]
        th_new = thetas[i + 1]
        ubar = (tb - th_new * float(th_new @ tb)) / nn
        tbar += ubar[:, None, None] * th_prev[None, :, None] * th_prev[None, None, :]
        tb = (np.einsum("klm,k,m->l", t, ubar, th_prev)
              + np.einsum("klm,k,l->m", t, ubar, th_prev)
              + shift * ubar)
    return tbar


def triple_mean(y, weights):
    """sum_n weights[n] * y[:,n] (x) y[:,n] (x) y[:,n]; y is (K,N)."""
    return np.einsum("kn,ln,mn,n->klm", y, y, y, weights, optimize=True)


def cross_pair_vec(c, rows, y, weights):
    """sum_n weights[n] * sum_d c[d,n] * rows[d] (x) rows[d] (x) y[:,n].

    c: (D,N) counts, rows: (D,K) projection rows, y: (K,N). Returns (K,K,K)
    with the vector factor in the last slot; other placements are axis
    transposes of the result.
    """
    s2 = np.einsum("dn,dk,dl->kln", c, rows, rows, optimize=True)
    return np.einsum("kln,mn,n->klm", s2, y, weights, optimize=True)
