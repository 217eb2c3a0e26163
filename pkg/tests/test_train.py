import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qifsnn.train import loop
from qifsnn.train.config import TrainConfig, default_config
from qifsnn.train.data import (Dataset, burgers_reference, make_datasets, poisson_solve_oracle,
                               rbf_kernel, sample_grf_source)
from qifsnn.train.metrics import compute_metrics
from qifsnn.train.optim import AdamState, adam_step, mse_loss, scheduled_lr


def test_mse_examples():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=17), rng.normal(size=17)
    assert mse_loss(a, a) == 0.0
    assert mse_loss(a + 1, a) == pytest.approx(1.0)
    assert mse_loss(a, b) == pytest.approx(sum((x - y) ** 2 for x, y in zip(a, b)) / 17)
    with pytest.raises(ValueError):
        mse_loss(a, b[:3])


def test_adam_zero_gradient_leaves_params():
    cfg = TrainConfig()
    p = [np.array([1.0, -2.0])]
    adam_step(p, [np.zeros(2)], AdamState(), cfg)
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adam_first_step_is_learning_rate():
    cfg = TrainConfig(learning_rate=1e-3)
    p = [np.array([0.0, 0.0, 0.0])]
    adam_step(p, [np.array([1e-4, -3.0, 250.0])], AdamState(), cfg)
    np.testing.assert_allclose(p[0], [-1e-3, 1e-3, -1e-3], rtol=1e-3)


def test_adam_two_step_trace():
    cfg = TrainConfig(learning_rate=0.1, beta1=0.9, beta2=0.999, adam_eps=1e-8)
    p = [np.array([0.5, -1.0])]
    gs = [np.array([0.2, -0.4]), np.array([-0.1, 0.3])]
    st_ = AdamState()
    for g in gs:
        adam_step(p, [g], st_, cfg)
    # scripted oracle
    x, m, v = np.array([0.5, -1.0]), np.zeros(2), np.zeros(2)
    for k, g in enumerate(gs, 1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.1 * (m / (1 - 0.9 ** k)) / (np.sqrt(v / (1 - 0.999 ** k)) + 1e-8)
    np.testing.assert_allclose(p[0], x, rtol=0, atol=1e-15)
    assert st_.step == 2


def test_lr_schedule():
    assert scheduled_lr(1.0, 0, 100) == 1.0
    assert scheduled_lr(1.0, 60, 100) == 0.5
    assert scheduled_lr(1.0, 99, 100) == 0.25


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)


def test_task_defaults():
    c = default_config("parabola")
    assert (c.hidden, c.n_train, c.n_test, c.trial_T, c.epochs) == ((64,) * 4, 100, 1000, 2.0, 10000)
    d = default_config("deeponet_poisson")
    assert (d.hidden, d.latent, d.n_train, d.n_test, d.batch_size, d.epochs, d.trial_T) == \
        ((64, 64), 128, 800, 800, 50, 1500, 3.0)
    q = default_config("pinn_poisson")
    assert (q.hidden, q.n_train, q.batch_size, q.epochs) == ((64, 64), 1000, 50, 500)


def test_metrics_examples():
    ref = np.array([1.0, -2.0, 3.0])
    m = compute_metrics(ref, ref)
    assert (m.mae, m.rmse, m.rel_l2, m.r2) == (0.0, 0.0, 0.0, 1.0)
    assert compute_metrics(2 * ref, ref).rel_l2 == pytest.approx(100.0)
    m = compute_metrics(ref + [0.5, 0.0, -1.0], ref)
    assert m.mae == 1.0 and m.mean_abs_error == pytest.approx(0.5)
    with pytest.raises(ValueError):
        compute_metrics(ref, np.zeros(3))


vec = arrays(np.float64, 12, elements=st.floats(-100, 100))


@given(vec, vec, st.floats(0.01, 100))
def test_metric_identities(pred, ref, c):
    if np.linalg.norm(ref) < 1e-6:
        return
    m = compute_metrics(pred, ref)
    assert 0 <= m.mean_abs_error <= m.rmse + 1e-12 <= m.mae + 2e-12
    assert m.rel_l2 >= 0 and m.r2 <= 1
    assert compute_metrics(c * pred, c * ref).rel_l2 == pytest.approx(m.rel_l2, rel=1e-9, abs=1e-9)


def test_grf_samples():
    x = np.linspace(-1, 1, 51)
    K = rbf_kernel(x)
    np.testing.assert_allclose(np.diag(K), 1.0)
    draws = sample_grf_source(seed=3, n_samples=10_000)
    cov = draws.T @ draws / draws.shape[0]
    assert np.max(np.abs(cov - K)) <= 0.05
    np.testing.assert_array_equal(sample_grf_source(seed=1), sample_grf_source(seed=1))
    assert not np.array_equal(sample_grf_source(seed=1), sample_grf_source(seed=2))


def test_poisson_oracle():
    x = np.linspace(-1, 1, 201)
    np.testing.assert_array_equal(poisson_solve_oracle(np.zeros(201), x), 0.0)
    assert np.max(np.abs(poisson_solve_oracle(np.ones(201), x) - (1 - x ** 2) / 2)) <= 1e-4
    x = np.linspace(0, 1, 201)
    u = poisson_solve_oracle(2 * np.pi ** 2 * np.sin(np.pi * x), x)
    assert np.max(np.abs(u - 2 * np.sin(np.pi * x))) <= 2 * (np.pi * (x[1] - x[0])) ** 2
    with pytest.raises(ValueError):
        poisson_solve_oracle(np.ones(3), np.array([0.0, 0.1, 0.3]))


def _burgers_fd(x_eval, t_eval, nu, n=4001):
    """Method of lines: central differences in x, classical RK4 in t."""
    x = np.linspace(-1, 1, n)
    dx = x[1] - x[0]
    u = -np.sin(np.pi * x)
    dt = 0.2 * dx * dx / nu

    def rhs(u):
        out = np.zeros_like(u)
        out[1:-1] = (-u[1:-1] * (u[2:] - u[:-2]) / (2 * dx)
                     + nu * (u[2:] - 2 * u[1:-1] + u[:-2]) / dx ** 2)
        return out

    t, results = 0.0, {}
    for te in sorted(set(t_eval)):
        while t < te - 1e-14:
            h = min(dt, te - t)
            k1 = rhs(u)
            k2 = rhs(u + 0.5 * h * k1)
            k3 = rhs(u + 0.5 * h * k2)
            k4 = rhs(u + h * k3)
            u = u + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        results[te] = u.copy()
    return np.array([np.interp(xe, x, results[te]) for xe, te in zip(x_eval, t_eval)])


def test_burgers_reference():
    nu = 0.01 / np.pi
    x = np.linspace(-1, 1, 9)
    np.testing.assert_allclose(burgers_reference(x, 1e-12), -np.sin(np.pi * x), atol=1e-8)
    np.testing.assert_allclose(burgers_reference(0.0, np.linspace(0.1, 1, 5)), 0.0, atol=1e-12)
    xs = np.array([-0.8, -0.5, -0.3, 0.2, 0.45, 0.7, -0.6, 0.35, 0.6, -0.9])
    ts = np.array([0.1, 0.1, 0.1, 0.2, 0.2, 0.2, 0.3, 0.3, 0.3, 0.3])
    np.testing.assert_allclose(burgers_reference(xs, ts, nu), _burgers_fd(xs, ts, nu), atol=1e-4)


@pytest.mark.parametrize("task", ["parabola", "ricker", "ripple", "pinn_poisson"])
def test_dataset_splits(task):
    tr, te = make_datasets(task, default_config(task))
    assert tr.split == "train" and te.split == "test"
    assert len(tr) == default_config(task).n_train or task in ("ricker", "ripple")
    assert np.all(np.isfinite(tr.inputs)) and np.all(np.isfinite(te.targets))


def test_seed_determinism():
    cfg = default_config("parabola", epochs=3, hidden=(8, 8), n_train=20, n_test=30, seed=5)
    a = loop.train_task("parabola", cfg)
    b = loop.train_task("parabola", cfg)
    la = np.array([h[1] for h in a.history])
    lb = np.array([h[1] for h in b.history])
    np.testing.assert_allclose(la, lb, rtol=1e-9, atol=0)
    assert a.metrics == b.metrics


def test_threaded_matches_sequential():
    cfg = default_config("parabola", epochs=2, hidden=(8,), n_train=20, n_test=20, seed=1)
    a = loop.train_task("parabola", cfg)
    b = loop.train_task("parabola", cfg.__class__(**{**cfg.__dict__, "threads": 3,
                                                    "deterministic": False}))
    np.testing.assert_allclose([h[1] for h in a.history], [h[1] for h in b.history], rtol=1e-9)


def test_nan_loss_aborts(monkeypatch):
    real = loop.make_datasets

    def poisoned(task, cfg):
        tr, te = real(task, cfg)
        y = tr.targets.copy()
        y[3] = np.nan
        return Dataset(tr.inputs, y, tr.split, tr.note), te

    monkeypatch.setattr(loop, "make_datasets", poisoned)
    cfg = default_config("parabola", epochs=2, hidden=(4,), n_train=10, n_test=10)
    with pytest.raises(loop.TrainingDiverged, match="sample 3"):
        loop.train_task("parabola", cfg)


def test_artifacts_written(tmp_path):
    cfg = default_config("parabola", epochs=2, hidden=(4,), n_train=10, n_test=12)
    res = loop.train_task("parabola", cfg, out_dir=tmp_path)
    for name in ("checkpoint.bin", "loss_history.csv", "predictions.csv", "metrics.json"):
        assert (tmp_path / name).exists()
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert m["rel_l2"] == res.metrics.rel_l2 and m["task"] == "parabola"
    head = (tmp_path / "loss_history.csv").read_text().splitlines()[0]
    assert head == "epoch,loss,wallclock"
    header, rows = loop.read_predictions(tmp_path / "predictions.csv")
    assert header[0].startswith("x") or header[0].startswith("in")
    assert rows.shape == (12, len(header))


def test_lif_task_rejects_operator_learning():
    with pytest.raises(ValueError):
        loop.train_task("pinn_poisson", default_config("pinn_poisson", epochs=1), "lif_direct")
