"""Parity between the compiled kernels and the numpy reference backend."""

import numpy as np
import pytest

from specmix import backend
from specmix import _kernels_py

BACKENDS = backend.get_backends()
pairwise = pytest.mark.skipif(
    "compiled" not in BACKENDS,
    reason="compiled kernels not built in this environment")


def sym_tensor(rng, k):
    t = rng.standard_normal((k, k, k))
    acc = np.zeros_like(t)
    import itertools
    for perm in itertools.permutations(range(3)):
        acc += t.transpose(perm)
    return acc / 6.0


@pairwise
class TestParity:
    def test_power_iteration_scan(self, rng):
        compiled = BACKENDS["compiled"]
        for k in (1, 2, 4, 6):
            t = sym_tensor(rng, k)
            th0 = rng.standard_normal((k, 5))
            th0 /= np.linalg.norm(th0, axis=0)
            th_a, obj_a = _kernels_py.power_iteration_scan(t, th0, 25)
            th_b, obj_b = compiled.power_iteration_scan(t, th0, 25)
            assert np.allclose(th_a, th_b, atol=1e-12)
            assert np.allclose(obj_a, obj_b, atol=1e-12)

    def test_power_iteration_scan_zero_tensor(self, rng):
        compiled = BACKENDS["compiled"]
        th0 = rng.standard_normal((3, 4))
        th0 /= np.linalg.norm(th0, axis=0)
        th_a, obj_a = _kernels_py.power_iteration_scan(np.zeros((3, 3, 3)), th0, 5)
        th_b, obj_b = compiled.power_iteration_scan(np.zeros((3, 3, 3)), th0, 5)
        assert np.allclose(th_a, th_b)
        assert np.allclose(obj_a, obj_b)
        assert np.allclose(th_a, th0)

    def test_power_iteration_tape(self, rng):
        compiled = BACKENDS["compiled"]
        t = sym_tensor(rng, 4)
        th0 = rng.standard_normal(4)
        th0 /= np.linalg.norm(th0)
        ta, na = _kernels_py.power_iteration_tape(t, th0, 30)
        tb, nb = compiled.power_iteration_tape(t, th0, 30)
        assert np.allclose(ta, tb, atol=1e-12)
        assert np.allclose(na, nb, atol=1e-12)

    def test_power_iteration_backward(self, rng):
        compiled = BACKENDS["compiled"]
        t = sym_tensor(rng, 4)
        th0 = rng.standard_normal(4)
        th0 /= np.linalg.norm(th0)
        thetas, norms = _kernels_py.power_iteration_tape(t, th0, 20)
        vbar = rng.standard_normal(4)
        ga = _kernels_py.power_iteration_backward(t, thetas, norms, vbar)
        gb = compiled.power_iteration_backward(t, thetas, norms, vbar)
        assert np.allclose(ga, gb, atol=1e-12)

    def test_triple_mean(self, rng):
        compiled = BACKENDS["compiled"]
        y = rng.standard_normal((5, 40))
        w = rng.random(40)
        assert np.allclose(_kernels_py.triple_mean(y, w),
                           compiled.triple_mean(y, w), atol=1e-12)

    def test_cross_pair_vec(self, rng):
        compiled = BACKENDS["compiled"]
        c = rng.random((7, 30))
        c[c < 0.3] = 0.0
        rows = rng.standard_normal((7, 3))
        y = rows.T @ c
        w = rng.random(30)
        assert np.allclose(_kernels_py.cross_pair_vec(c, rows, y, w),
                           compiled.cross_pair_vec(c, rows, y, w), atol=1e-12)


def test_active_backend_exposes_kernels():
    for name in ("power_iteration_scan", "power_iteration_tape",
                 "power_iteration_backward", "triple_mean", "cross_pair_vec"):
        assert callable(getattr(backend, name))
