import numpy as np
import pytest

from cascadenet.optim import Adam, warmup_constant_lr


def test_zero_gradient_leaves_params_unchanged():
    params = {"w": np.array([1.0, -2.0])}
    opt = Adam(lr=0.1)
    opt.step(params, {"w": np.zeros(2)})
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])
    assert opt.step_count == 1


def test_single_step_matches_hand_computed_adam():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    w0, g = 1.0, 0.5
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    expected = w0 - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)

    params = {"w": np.array([w0])}
    opt = Adam(lr=lr, beta1=b1, beta2=b2, eps=eps)
    opt.step(params, {"w": np.array([g])})
    np.testing.assert_allclose(params["w"], [expected], rtol=1e-15)


def test_identical_params_stay_identical():
    rng = np.random.default_rng(3)
    init = rng.standard_normal(5)
    params = {"a": init.copy(), "b": init.copy()}
    opt = Adam(lr=0.05)
    for step in range(25):
        g = rng.standard_normal(5)
        opt.step(params, {"a": g.copy(), "b": g.copy()})
        np.testing.assert_array_equal(params["a"], params["b"])


def test_nan_gradient_names_parameter():
    params = {"bad": np.array([1.0])}
    opt = Adam()
    with pytest.raises(FloatingPointError, match="bad"):
        opt.step(params, {"bad": np.array([np.nan])})


def test_warmup_schedule():
    assert warmup_constant_lr(1.0, 4, 0) == 0.25
    assert warmup_constant_lr(1.0, 4, 3) == 1.0
    assert warmup_constant_lr(1.0, 4, 100) == 1.0
    assert warmup_constant_lr(1.0, 0, 0) == 1.0
