import json

import numpy as np
import pytest

from plr import datagen, trainer
from plr.model import (
    AdamState,
    Gradients,
    NonFiniteGradientError,
    RegressionModel,
    adam_step,
    backward_batch,
    forward_batch,
    init_model,
    load_model,
    n_params,
    param_path,
    save_model,
)
from plr.numeric import ShapeError, make_rng

from _gradcheck import analytic_gradient, max_relative_error, numeric_gradient, random_problem


def test_init_is_deterministic_with_zero_biases():
    a = init_model("linear", 3, make_rng(4))
    b = init_model("linear", 3, make_rng(4))
    assert np.array_equal(a.theta, b.theta)
    m = init_model("mlp", 8, make_rng(0))
    # 8*20+20 + 20*30+30 + 30*10+10 + 10*1+1
    assert m.theta.size == n_params(m.dims) == 1131
    assert m.dims == (8, 20, 30, 10, 1)
    assert all(np.all(b == 0) for _, b in m.layers)
    for W, _ in m.layers:
        limit = np.sqrt(6 / sum(W.shape))
        assert np.all(np.abs(W) <= limit)
    with pytest.raises(ValueError):
        init_model("mlp", 0, make_rng(0))


def test_forward_examples():
    lin = RegressionModel("linear", (1, 1), np.array([2.0, 1.0]))
    assert forward_batch(lin, [[3.0]])[0] == 7
    zero = RegressionModel("mlp", (3, 20, 30, 10, 1), np.zeros(n_params((3, 20, 30, 10, 1))))
    assert np.all(forward_batch(zero, np.random.default_rng(0).normal(size=(5, 3))) == 0)
    # one hidden unit: relu(1*3 - 1) * 2 = 4
    tiny = RegressionModel("mlp", (1, 1, 1), np.array([1.0, -1.0, 2.0, 0.0]))
    assert forward_batch(tiny, [[3.0]])[0] == 4
    with pytest.raises(ShapeError):
        forward_batch(lin, np.ones((2, 2)))


def test_batch_and_single_rows_agree_exactly():
    m = init_model("mlp", 4, make_rng(1))
    X = make_rng(2).normal(size=(7, 4))
    full = forward_batch(m, X)
    assert all(forward_batch(m, X[i])[0] == full[i] for i in range(7))


def test_backward_examples():
    m = init_model("mlp", 3, make_rng(0))
    X = np.ones((2, 3))
    assert np.all(backward_batch(m, X, np.zeros(2)).values == 0)
    lin = RegressionModel("linear", (3, 1), np.array([0.5, -1.0, 2.0, 0.3]))
    g = backward_batch(lin, [[1.0, 2.0, 3.0]], [1.0])
    assert np.array_equal(g.layers[0][0][:, 0], [1, 2, 3]) and g.layers[0][1][0] == 1
    with pytest.raises(ShapeError):
        backward_batch(lin, [[1.0, 2.0, 3.0]], [1.0, 2.0])


def test_relu_at_zero_passes_no_gradient():
    tiny = RegressionModel("mlp", (1, 1, 1), np.array([1.0, -3.0, 2.0, 0.0]))
    g = backward_batch(tiny, [[3.0]], [1.0]).values
    assert g[0] == 0 and g[1] == 0 and g[2] == 0 and g[3] == 1


@pytest.mark.parametrize("i", range(0, 20, 3))
def test_kernel_gradient_matches_finite_differences(backend, i):
    model, X, C, y, setup = random_problem(i, seed=11)
    err, checked = max_relative_error(analytic_gradient(backend, model, X, C, y, setup),
                                      numeric_gradient(model, X, C, y, setup))
    assert checked > 0 and err < 1e-4


def test_kernels_agree_with_model_backprop(backend):
    m = init_model("mlp", 5, make_rng(3))
    X = make_rng(4).normal(size=(9, 5))
    y = make_rng(5).normal(size=9)
    # supervised MSE: upstream is 2 r / n
    _, grad = backend.loss_and_grad(m.theta, m.dims, X, y[:, None].copy(), y, 0, 0, 1.0, 0.5, 1.0)
    up = 2 * (forward_batch(m, X) - y) / 9
    assert np.allclose(grad, backward_batch(m, X, up).values, rtol=1e-12, atol=1e-14)
    assert np.allclose(backend.forward(m.theta, m.dims, X), forward_batch(m, X), rtol=0, atol=1e-13)


def test_adam_first_step_and_zero_gradient():
    m = RegressionModel("linear", (1, 1), np.array([0.0, 0.0]))
    st = AdamState.for_model(m, 0.01)
    m1, st1 = adam_step(m, Gradients(m.dims, np.array([1.0, 0.0])), st)
    assert m1.theta[0] == pytest.approx(-0.01 / (1 + 1e-8), abs=1e-15)
    assert m1.theta[1] == 0 and st1.step == 1
    assert m.theta[0] == 0  # input untouched
    m2, st2 = adam_step(m1, Gradients(m.dims, np.zeros(2)), st1)
    assert st2.m[0] == pytest.approx(0.9 * st1.m[0])
    assert m2.theta[1] == 0


def test_adam_kernel_matches_reference(backend):
    rng = make_rng(8)
    theta = rng.normal(size=10)
    m, v = np.zeros(10), np.zeros(10)
    ref = RegressionModel("linear", (9, 1), theta.copy())
    st = AdamState.for_model(ref, 0.01)
    for step in range(5):
        g = rng.normal(size=10)
        backend.adam_update(theta, m, v, g, step + 1, 0.01)
        ref, st = adam_step(ref, Gradients(ref.dims, g), st)
    assert np.allclose(theta, ref.theta, rtol=0, atol=1e-15)


def test_adam_rejects_non_finite_gradient_with_path():
    m = init_model("mlp", 2, make_rng(0))
    g = np.zeros_like(m.theta)
    g[2 * 20 + 20 + 5] = np.nan
    with pytest.raises(NonFiniteGradientError, match=r"layers\[1\]\.weight\[0, 5\]"):
        adam_step(m, Gradients(m.dims, g), AdamState.for_model(m, 0.01))
    assert param_path(m.dims, 2 * 20 + 3) == "layers[0].bias[3]"


def test_checkpoint_round_trip(tmp_path):
    m = init_model("mlp", 4, make_rng(9))
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.kind == "mlp" and back.dims == m.dims and np.array_equal(back.theta, m.theta)
    assert set(json.loads((tmp_path / "m.json").read_text())) == {"kind", "dims", "layers"}


def test_linear_adam_recovers_least_squares():
    rng = make_rng(21)
    X, y = datagen.synth_linear(500, [1.5, -2.0, 0.5], 0.7, (-1, 1), rng)
    ds = datagen.PartialDataset(X, y[:, None], y)
    cfg = trainer.config_for("supervised", model_kind="linear", learning_rate=0.01, batch_size=500, epochs=2000)
    out = trainer.fit(cfg, ds, ds)
    oracle = np.linalg.lstsq(np.column_stack([X, np.ones(500)]), y, rcond=None)[0]
    assert np.max(np.abs(out.model.theta - oracle)) < 1e-2
