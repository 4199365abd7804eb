import numpy as np
import pytest

from plr import _backend, datagen
from plr.datagen import PartialDataset
from plr.model import RegressionModel
from plr.numeric import make_rng
from plr.trainer import DivergenceError, SelectionError, config_for, evaluate, fit, method_grid, select


def _synth(n=500, num_false=4, seed=0):
    X, y = datagen.synth_linear(n, [2.0], 1.0, (-1, 1), make_rng(seed, 0))
    return datagen.partial_from_labels(X, y, num_false, make_rng(seed, 1))


def _oracle(ds):
    return np.linalg.lstsq(np.column_stack([ds.X, np.ones(len(ds))]), ds.y_true, rcond=None)[0]


def test_config_validation():
    with pytest.raises(ValueError):
        config_for("nope")
    with pytest.raises(ValueError):
        config_for("ident", learning_rate=0)
    with pytest.raises(ValueError):
        config_for("pident", beta1=0)
    assert config_for("supervised").selection_target == "true_labels"
    assert config_for("ident").selection_target == "min_candidate"
    assert config_for("ident", validation_metric="true_mse").selection_target == "true_labels"


def test_method_grids():
    assert len(method_grid("ident")) == 2
    assert len(method_grid("avgl-huber")) == 4
    pid = method_grid("pident")
    assert len(pid) == 10 and [c.beta2 for c in pid[:5]] == [10, 100, 500, 1000, 10000]


def test_supervised_recovers_linear_oracle():
    ds = _synth()
    out = fit(config_for("supervised", model_kind="linear", learning_rate=0.01, epochs=1000), ds, ds)
    assert np.max(np.abs(out.model.theta - _oracle(ds))) < 1e-2


def test_min_loss_recovers_linear_oracle_from_partial_labels():
    ds = _synth()
    out = fit(config_for("ident", model_kind="linear", learning_rate=0.01, epochs=1000), ds, ds)
    assert np.max(np.abs(out.model.theta - _oracle(ds))) < 0.05


def test_weighted_zero_beta2_matches_avg_loss_first_epoch():
    ds = _synth(200)
    a = fit(config_for("pident", beta2=0.0, epochs=1), ds, ds)
    b = fit(config_for("avgl-mse", epochs=1), ds, ds)
    assert a.train_loss[0] == b.train_loss[0]


def test_fit_is_deterministic():
    ds = _synth(300)
    cfg = config_for("pident", epochs=5, seed=3)
    a, b = fit(cfg, ds, ds), fit(cfg, ds, ds)
    assert np.array_equal(a.model.theta, b.model.theta) and np.array_equal(a.train_loss, b.train_loss)


def test_full_batch_supervised_trace_is_non_increasing():
    ds = _synth(400)
    out = fit(config_for("supervised", model_kind="linear", learning_rate=0.01, batch_size=400, epochs=300), ds, ds)
    assert np.all(np.diff(out.train_loss[10:]) <= 1e-6)


def test_sandwich_holds_at_every_parameter_state(backend):
    ds = _synth(256)
    out = fit(config_for("ident", epochs=3), ds, ds)
    for theta in (out.model.theta, np.zeros_like(out.model.theta) + 0.01):
        pred = backend.forward(theta, out.model.dims, ds.X)
        args = (0, 1.0, 0.5, 100.0, pred, ds.candidates, ds.y_true)
        lo = backend.batch_loss(3, *args)[0]
        mid = backend.batch_loss(4, *args)[0]
        hi = backend.batch_loss(1, *args)[0]
        assert np.all(lo <= mid + 1e-12) and np.all(mid <= hi + 1e-12)


def test_evaluate_examples():
    ds = _synth(50, num_false=0)
    perfect = RegressionModel("linear", (1, 1), np.array([2.0, 1.0]))
    assert evaluate(perfect, ds) < 1e-24
    const = RegressionModel("linear", (1, 1), np.array([0.0, 1.0]))
    labels = PartialDataset(np.zeros((2, 1)), np.array([[0.0], [2.0]]), np.array([0.0, 2.0]))
    assert evaluate(const, labels) == 1.0
    cands = PartialDataset(np.zeros((2, 1)), np.array([[0.0, 1.5], [2.0, 9.0]]), np.array([0.0, 2.0]))
    assert evaluate(const, cands, "min_candidate") == pytest.approx((0.25 + 1.0) / 2)
    with pytest.raises(ValueError):
        evaluate(const, cands, "median")


def test_select_singleton_and_divergence_exclusion():
    ds = _synth(200)
    cfg = config_for("ident", epochs=5)
    assert select([cfg], ds, ds)[0] == cfg
    bad = config_for("ident", learning_rate=1e6, epochs=5)
    chosen, out = select([bad, cfg], ds, ds)
    assert chosen == cfg and len(out.extra["grid_failures"]) == 1
    with pytest.raises(SelectionError, match="diverged"):
        select([bad], ds, ds)
    with pytest.raises(DivergenceError):
        fit(bad, ds, ds)


def test_select_picks_lower_validation_metric():
    tr, va = _synth(300, seed=1), _synth(100, seed=2)
    grid = method_grid("ident", learning_rates=(0.01, 0.0001), model_kind="linear", epochs=20)
    chosen, out = select(grid, tr, va)
    runs = [fit(c, tr, va).final_validation for c in grid]
    assert out.final_validation == min(runs) and chosen == grid[int(np.argmin(runs))]


def test_backends_give_matching_fits(monkeypatch):
    from plr import _fallback

    if _backend.kernels is _fallback:
        pytest.skip("compiled kernels not built")
    ds = _synth(300)
    cfg = config_for("pident", epochs=20)
    a = fit(cfg, ds, ds)
    monkeypatch.setattr(_backend, "kernels", _fallback)
    b = fit(cfg, ds, ds)
    assert np.allclose(a.model.theta, b.model.theta, rtol=1e-9, atol=1e-11)


@pytest.mark.slow
def test_parameter_error_shrinks_with_sample_size():
    sizes = (125, 250, 500, 1000, 2000, 4000)
    means = []
    for n in sizes:
        errs = []
        for seed in range(5):
            ds = _synth(n, seed=seed)
            out = fit(config_for("ident", model_kind="linear", learning_rate=0.01, epochs=400, seed=seed), ds, ds)
            errs.append(np.max(np.abs(out.model.theta - [2.0, 1.0])))
        means.append(np.mean(errs))
    inversions = int(np.sum(np.diff(means) > 0))
    assert inversions <= 1, means
