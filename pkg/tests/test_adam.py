import numpy as np
import pytest

from specmix import AdamParams, AdamState, adam_step


def test_zero_gradient_no_move():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    state = AdamState.zeros_like(x)
    x2, state2 = adam_step(x, np.zeros_like(x), state)
    assert np.array_equal(x2, x)
    assert state2.t == 1


def test_first_update_sign():
    x = np.zeros((2, 2))
    g = np.array([[1.0, -2.0], [0.5, -0.1]])
    x2, _ = adam_step(x, g, AdamState.zeros_like(x))
    assert np.all(np.sign(x2 - x) == -np.sign(g))


def test_constant_gradient_update_magnitude_approaches_step_size():
    # closed-form fixed point: with a constant gradient, m_hat -> g and
    # v_hat -> g^2, so |update| -> step_size
    params = AdamParams(step_size=0.01)
    x = np.zeros(3)
    g = np.array([5.0, -0.3, 80.0])
    state = AdamState.zeros_like(x)
    prev = x
    for _ in range(200):
        x, state = adam_step(x, g, state, params)
    step = np.abs(x - prev) / 1.0  # last step not isolated; do one more
    x2, _ = adam_step(x, g, state, params)
    assert np.allclose(np.abs(x2 - x), params.step_size, rtol=1e-3)


def test_deterministic():
    rng = np.random.default_rng(0)
    g = rng.standard_normal((3, 4))
    x = rng.standard_normal((3, 4))
    a1, _ = adam_step(x, g, AdamState.zeros_like(x))
    a2, _ = adam_step(x, g, AdamState.zeros_like(x))
    assert np.array_equal(a1, a2)


def test_invalid_params():
    with pytest.raises(ValueError):
        AdamParams(step_size=0.0)
    with pytest.raises(ValueError):
        AdamParams(beta1=1.0)


def test_shape_mismatch():
    x = np.zeros(3)
    with pytest.raises(ValueError):
        adam_step(x, np.zeros(4), AdamState.zeros_like(x))
