import math

import numpy as np
import pytest

from pg4d.optim import AdamState, adam_step
from pg4d.params import ParamLayout
from pg4d.splats import S_MIN


def reference_adam_scalar(grad_fn, p0, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook Adam on one scalar, written independently with plain floats."""
    p, m, v = p0, 0.0, 0.0
    history = [p]
    for t in range(1, steps + 1):
        g = grad_fn(p)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p = p - lr * m_hat / (math.sqrt(v_hat) + eps)
        history.append(p)
    return history


def test_first_step_closed_form():
    state = AdamState(n_params=4, lr=0.01)
    params = np.zeros(4)
    adam_step(state, params, np.ones(4))
    np.testing.assert_allclose(params, -0.01 * 1.0 / (1.0 + 1e-8), rtol=1e-12)


def test_zero_gradient_no_motion():
    state = AdamState(n_params=3, lr=0.5)
    params = np.array([1.0, -2.0, 3.0])
    adam_step(state, params.copy() if False else params, np.zeros(3))
    np.testing.assert_array_equal(params, [1.0, -2.0, 3.0])


def test_quadratic_convergence_matches_scalar_reference():
    steps = 200
    ref = reference_adam_scalar(lambda p: 2.0 * p, 1.0, lr=0.1, steps=steps)
    assert abs(ref[-1]) < 0.05

    state = AdamState(n_params=1, lr=0.1)
    params = np.array([1.0])
    for t in range(steps):
        adam_step(state, params, 2.0 * params)
        assert abs(params[0] - ref[t + 1]) <= 1e-12
    assert abs(params[0]) < 0.05


def test_projection_enforces_splat_invariants():
    layout = ParamLayout(n_splats=1)
    state = AdamState(n_params=layout.size, lr=10.0, layout=layout)
    params = layout.zeros()
    sp = layout.view(params, "splats")
    sp[0] = [0.0, 0.0, 0.01, 0.01, 0.0, 0.5, 0.5, 0.5, 0.5]
    grads = layout.zeros()
    g = layout.view(grads, "splats")
    g[0] = [0.0, 0.0, 1.0, -1.0, 0.0, 1.0, -1.0, 1.0, -1.0]
    adam_step(state, params, grads)
    assert sp[0, 2] >= S_MIN       # pushed down, clamped at the floor
    assert sp[0, 3] >= 0.01        # pushed up, unclamped
    assert 0.0 <= sp[0, 5] <= 1.0
    assert np.all(sp[0, 6:9] >= 0.0) and np.all(sp[0, 6:9] <= 1.0)


def test_nonfinite_gradient_rejected_with_index():
    state = AdamState(n_params=4)
    grads = np.zeros(4)
    grads[2] = np.nan
    with pytest.raises(ValueError, match="index 2"):
        adam_step(state, np.zeros(4), grads)


def test_shape_mismatch_rejected():
    state = AdamState(n_params=4)
    with pytest.raises(ValueError):
        adam_step(state, np.zeros(3), np.zeros(3))
