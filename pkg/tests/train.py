import numpy as np
import pytest
import schema

import darkproxy.train
from darkproxy.decouple import PixelNoiseSamples
from darkproxy.loss import SortedSamples
from darkproxy.loss import sample_queries
from darkproxy.proxy import branch_forward
from darkproxy.proxy import init_model
from darkproxy.proxy import input_fields
from darkproxy.train import LOG_COLUMNS
from darkproxy.train import NonFiniteGradientError
from darkproxy.train import OptimizerState
from darkproxy.train import TrainConfig
from darkproxy.train import adam_step
from darkproxy.train import grad_check
from darkproxy.train import heldout_loss
from darkproxy.train import loss_and_grads
from darkproxy.train import lr_schedule
from darkproxy.train import train
from darkproxy.train import write_train_log


@pytest.fixture
def small_cfg():
    return TrainConfig(
        steps_per_iso=60,
        patch=32,
        queries_per_step=256,
        lr_base=5e-2,
        lr_min=1e-4,
        seed=3,
    )


@pytest.fixture
def pool():
    samples = np.random.default_rng(0).normal(0.0, 3.0, 20_000)
    return PixelNoiseSamples(iso=800, samples=samples)


def test_config_from_section():
    cfg = TrainConfig.from_config(None, seed=4)
    assert cfg.steps_per_iso == 1000 and cfg.patch == 1024
    assert cfg.queries_per_step == 10**6
    assert cfg.betas == (0.9, 0.999)
    assert cfg.seed == 4
    cfg = TrainConfig.from_config({"patch": 64, "lr_base": 0.1})
    assert cfg.batch_size == 64 * 64 and cfg.lr_base == 0.1
    with pytest.raises(schema.SchemaError):
        TrainConfig.from_config({"patch": 0})
    with pytest.raises(ValueError):
        TrainConfig(lr_base=1e-5, lr_min=1e-3)


def test_lr_schedule_endpoints():
    cfg = TrainConfig(lr_base=1e-2, lr_min=1e-5)
    assert lr_schedule(0, 100, cfg) == pytest.approx(1e-2)
    assert lr_schedule(99, 100, cfg) == pytest.approx(1e-5)
    mid = lr_schedule(50, 101, cfg)
    assert mid == pytest.approx(0.5 * (1e-2 + 1e-5))
    rates = [lr_schedule(k, 100, cfg) for k in range(100)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert lr_schedule(0, 1, cfg) == 1e-2
    for step in (-1, 100):
        with pytest.raises(ValueError):
            lr_schedule(step, 100, cfg)


def test_adam_first_step():
    params = {"a": np.array([1.0, 2.0]), "b": np.array([5.0])}
    grads = {"a": np.array([0.5, -2.0])}
    new, state = adam_step(params, grads, OptimizerState(), lr=0.1)
    assert state.step == 1
    # bias correction makes the first move lr * sign(g)
    assert np.allclose(new["a"], [0.9, 2.1], atol=1e-6)
    assert new["b"] is params["b"]
    assert np.array_equal(params["a"], [1.0, 2.0])
    new2, state2 = adam_step(new, grads, state, lr=0.1)
    assert state2.step == 2
    assert np.allclose(new2["a"], [0.8, 2.2], atol=1e-6)


def test_adam_rejects_bad_gradients():
    params = {"a": np.zeros(2)}
    with pytest.raises(NonFiniteGradientError):
        adam_step(params, {"a": np.array([np.nan, 0.0])}, OptimizerState(), lr=0.1)
    with pytest.raises(NonFiniteGradientError):
        adam_step(params, {"a": np.array([np.inf, 0.0])}, OptimizerState(), lr=0.1)
    with pytest.raises(ValueError):
        adam_step(params, {"a": np.zeros(3)}, OptimizerState(), lr=0.1)


def test_training_reduces_heldout_loss(small_cfg, pool):
    model = init_model([800], {800: 2.0}, seed=0)
    initial = {k: v.copy() for k, v in model.params.items()}
    before = heldout_loss(model, pool, 800, small_cfg, seed=99).total
    trained, log = train(model, {800: pool}, small_cfg)
    after = heldout_loss(trained, pool, 800, small_cfg, seed=99).total
    assert after < 0.8 * before
    assert trained.steps_trained == 60
    assert len(log) == 60
    assert [row["step"] for row in log] == list(range(60))
    assert log[0]["lr"] == pytest.approx(small_cfg.lr_base)
    assert log[-1]["lr"] == pytest.approx(small_cfg.lr_min)
    assert all(np.array_equal(model.params[k], v) for k, v in initial.items())


def test_training_is_deterministic(pool):
    cfg = TrainConfig(steps_per_iso=5, patch=16, queries_per_step=64, seed=1)
    model = init_model([800], {800: 2.0}, seed=0)
    a, log_a = train(model, {800: pool}, cfg)
    b, log_b = train(model, {800: pool}, cfg)
    assert log_a == log_b
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_training_needs_every_pool(small_cfg, pool):
    model = init_model([800, 1600], {800: 2.0, 1600: 4.0}, seed=0)
    with pytest.raises(ValueError):
        train(model, {800: pool}, small_cfg)


def test_training_visits_isos_in_order(pool):
    cfg = TrainConfig(steps_per_iso=3, patch=16, queries_per_step=64)
    other = PixelNoiseSamples(iso=1600, samples=2.0 * pool.samples)
    model = init_model([800, 1600], {800: 2.0, 1600: 4.0}, seed=0)
    trained, log = train(model, {800: pool, 1600: other}, cfg)
    assert [row["iso"] for row in log] == [800] * 3 + [1600] * 3
    assert trained.gain(800) != 2.0 and trained.gain(1600) != 4.0


def test_write_train_log(tmp_path):
    log = [{"step": 0, "iso": 800, "L_cdf": 1.5, "L_quantile": 0.25, "lr": 0.01}]
    path = tmp_path / "train_log.csv"
    write_train_log(log, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(LOG_COLUMNS)
    assert lines[1] == "0,800,1.5,0.25,0.01"


def test_grad_check_passes():
    model = init_model([800], {800: 1.5}, seed=2, width=4, blocks=1)
    gen = np.random.default_rng(1)
    params = {k: v + 0.1 * gen.standard_normal(v.shape) for k, v in model.params.items()}
    model = model.with_params(params)
    target = gen.normal(0.0, 1.5, 512)
    queries = sample_queries(64, seed=0, scale=1.5)
    result = grad_check(model, target, queries, size=4)
    assert result.checked > 0
    assert result.passed and result.failures == 0


def test_grad_check_flags_small_absolute_errors(monkeypatch):
    # fc2 starts at zero, so every fc1 gradient of a fresh model is exactly zero
    model = init_model([800], {800: 1.5}, seed=2, width=4, blocks=1)
    target = np.random.default_rng(1).normal(0.0, 1.5, 512)
    queries = sample_queries(64, seed=0, scale=1.5)
    assert grad_check(model, target, queries, size=4).passed

    def shifted(*args, **kwargs):
        result, grads = loss_and_grads(*args, **kwargs)
        return result, {k: g + 1e-6 for k, g in grads.items()}

    monkeypatch.setattr(darkproxy.train, "loss_and_grads", shifted)
    result = grad_check(model, target, queries, size=4)
    assert not result.passed
    assert result.failures > 0
    assert result.max_abs_error == pytest.approx(1e-6, rel=0.05)
    assert grad_check(model, target, queries, size=4, atol=1e-5).passed


def test_grad_check_rejects_negative_tolerances():
    model = init_model([800], {800: 1.5}, seed=2, width=2, blocks=1)
    target = np.random.default_rng(1).normal(size=100)
    queries = sample_queries(16, seed=0)
    with pytest.raises(ValueError):
        grad_check(model, target, queries, size=4, rtol=-1.0)


def test_grad_check_limits():
    model = init_model([800], {800: 1.5}, seed=2, width=2, blocks=1)
    target = np.random.default_rng(1).normal(size=100)
    queries = sample_queries(16, seed=0)
    with pytest.raises(ValueError):
        grad_check(model, target, queries, size=65)
    with pytest.raises(ValueError):
        grad_check(model, target, queries, size=4, eps=1.0)


def test_gain_gradient_closed_form():
    model = init_model([800], {800: 1.5}, seed=2, width=4, blocks=1)
    target = SortedSamples.from_samples(np.random.default_rng(3).normal(0.0, 1.5, 256))
    queries = sample_queries(32, seed=1, scale=1.5)
    n1, n2 = input_fields((8, 8), 800, seed=4)
    result, grads = loss_and_grads(model, target, queries, n1, n2, 800)
    dep = branch_forward(model.params, "dep", n1, model.blocks)
    expected = float(np.dot(result.grad.ravel(), dep))
    assert grads["gain.800"][0] == pytest.approx(expected, rel=1e-10, abs=1e-10)

    params = dict(model.params)
    params["dep.out.weight"] = np.zeros_like(params["dep.out.weight"])
    params["dep.out.bias"] = np.zeros_like(params["dep.out.bias"])
    _, grads = loss_and_grads(model.with_params(params), target, queries, n1, n2, 800)
    assert grads["gain.800"][0] == 0.0
