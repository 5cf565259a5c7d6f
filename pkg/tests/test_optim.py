import math

import numpy as np
import pytest

from autodiff.optim import clip_grad_norm, init_optimizer, lr_at_epoch, optimizer_step
from autodiff.tensor import Tensor
from utils.errors import NumericalError


def make_params(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "w": Tensor(rng.normal(size=(3, 2)), requires_grad=True, name="w"),
        "b": Tensor(rng.normal(size=2), requires_grad=True, name="b"),
    }


def test_zero_gradients_leave_params_unchanged():
    params = make_params()
    before = {k: p.data.copy() for k, p in params.items()}
    state = init_optimizer(params)
    optimizer_step(params, {k: np.zeros_like(p.data) for k, p in params.items()}, state)
    for k, p in params.items():
        assert np.array_equal(p.data, before[k])
    assert state.step == 1


def test_first_step_moves_by_lr():
    params = {"x": Tensor(np.array([2.0]), requires_grad=True)}
    state = init_optimizer(params, lr=0.001)
    optimizer_step(params, {"x": np.array([1.0])}, state)
    assert params["x"].data[0] == pytest.approx(2.0 - 0.001, abs=1e-9)


def test_identical_inputs_give_identical_updates():
    a, b = make_params(1), make_params(1)
    grads = {k: np.full_like(p.data, 0.3) for k, p in a.items()}
    sa, sb = init_optimizer(a), init_optimizer(b)
    for _ in range(3):
        optimizer_step(a, {k: g.copy() for k, g in grads.items()}, sa)
        optimizer_step(b, {k: g.copy() for k, g in grads.items()}, sb)
    for k in a:
        assert np.array_equal(a[k].data, b[k].data)


def test_nan_gradient_is_refused_and_named():
    params = make_params()
    before = {k: p.data.copy() for k, p in params.items()}
    state = init_optimizer(params)
    grads = {"w": np.zeros((3, 2)), "b": np.array([0.0, np.nan])}
    with pytest.raises(NumericalError, match="'b'"):
        optimizer_step(params, grads, state)
    assert state.step == 0
    for k, p in params.items():
        assert np.array_equal(p.data, before[k])


def test_moment_shapes_match_params():
    params = make_params()
    state = init_optimizer(params)
    for k, p in params.items():
        assert state.first_moment[k].shape == p.data.shape
        assert state.second_moment[k].shape == p.data.shape


@pytest.mark.parametrize("epoch, expected", [(0, 0.001), (1, 0.001), (2, 0.00095), (3, 0.00095), (4, 0.0009025)])
def test_lr_schedule_values(epoch, expected):
    assert lr_at_epoch(0.001, epoch) == pytest.approx(expected, rel=1e-12)


def test_lr_schedule_is_non_increasing():
    values = [lr_at_epoch(0.001, e) for e in range(200)]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert all(values[2 * i] == values[2 * i + 1] for i in range(100))


def test_lr_schedule_rejects_negative_epoch():
    with pytest.raises(ValueError):
        lr_at_epoch(0.001, -1)


def test_clip_grad_norm_scales_globally():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    norm = clip_grad_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    assert math.hypot(grads["a"][0], grads["b"][0]) == pytest.approx(1.0)
    assert grads["a"][0] / grads["b"][0] == pytest.approx(0.75)


def test_clip_grad_norm_leaves_small_gradients():
    grads = {"a": np.array([0.3, 0.4])}
    assert clip_grad_norm(grads, 5.0) == pytest.approx(0.5)
    assert np.array_equal(grads["a"], [0.3, 0.4])
