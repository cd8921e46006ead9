import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aircade.config import (
    ConfigError,
    ModelConfig,
    TrainConfig,
    apply_overrides,
    config_digest,
    format_config,
    load_config,
    parse_config_text,
)
from aircade.data import generate_synthetic
from aircade.metrics import compute_metrics
from aircade.model import AirCadeModel
from aircade.optim import RMSprop, rmsprop_step
from aircade.train import NumericError, evaluate, mean_abs_error, noisy, prepare_data, train, write_log

from conftest import TINY
from oracles import brute_force_metrics


# --- RMSprop ------------------------------------------------------------


def test_zero_gradient_no_change():
    p, s = np.array([1.0, -2.0]), np.zeros(2)
    rmsprop_step([p], [np.zeros(2)], [s], lr=0.1)
    assert p.tolist() == [1.0, -2.0]


def test_first_step_without_decay_is_sign_step():
    p = np.array([1.0, 1.0, 1.0])
    g = np.array([3.0, -0.5, 1e-3])
    rmsprop_step([p], [g], [np.zeros(3)], lr=0.01, decay=0.0, eps=1e-8)
    np.testing.assert_allclose(p, 1.0 - 0.01 * g / (np.abs(g) + 1e-8), rtol=0, atol=1e-15)
    np.testing.assert_allclose(p, 1.0 - 0.01 * np.sign(g), atol=1e-7)


def test_closed_form_two_steps():
    p, s = np.array([0.0]), np.zeros(1)
    rmsprop_step([p], [np.array([2.0])], [s], lr=0.1, decay=0.9, eps=0.0)
    rmsprop_step([p], [np.array([1.0])], [s], lr=0.1, decay=0.9, eps=0.0)
    s1 = 0.1 * 4.0
    s2 = 0.9 * s1 + 0.1 * 1.0
    assert s[0] == pytest.approx(s2, abs=1e-15)
    assert p[0] == pytest.approx(-0.1 * 2 / math.sqrt(s1) - 0.1 / math.sqrt(s2), abs=1e-14)


def test_scalar_descent():
    theta, state = np.array([1.0]), np.zeros(1)
    prev = abs(theta[0])
    for _ in range(10):
        rmsprop_step([theta], [2 * theta.copy()], [state], lr=0.1)
        assert abs(theta[0]) < prev
        prev = abs(theta[0])


def test_rmsprop_shape_mismatch():
    with pytest.raises(ValueError):
        rmsprop_step([np.zeros(2)], [np.zeros(3)], [np.zeros(2)], 0.1)


def test_optimizer_updates_parameters(tiny_model):
    opt = RMSprop(tiny_model.parameters(), lr=0.01)
    p = tiny_model.predictor.weight
    before = p.data.copy()
    p.grad[...] = 1.0
    opt.step()
    assert np.all(p.data < before)
    opt.zero_grad()
    assert not np.any(p.grad)


# --- metrics ------------------------------------------------------------


def test_perfect_prediction():
    truth = np.array([10.0, 80.0, 120.0, 50.0])
    r = compute_metrics(truth, truth)
    assert (r.mae, r.rmse, r.mape_percent) == (0.0, 0.0, 0.0)
    assert (r.csi_percent, r.pod_percent, r.far_percent) == (100.0, 100.0, 0.0)


def test_hand_confusion_counts():
    # 3 hits, 1 miss, 1 false alarm, 1 correct negative
    truth = np.array([100.0, 90.0, 80.0, 100.0, 10.0, 10.0])
    pred = np.array([100.0, 90.0, 80.0, 10.0, 100.0, 10.0])
    r = compute_metrics(pred, truth, 75.0)
    assert (r.hits, r.misses, r.false_alarms) == (3, 1, 1)
    assert (r.csi_percent, r.pod_percent, r.far_percent) == (60.0, 75.0, 25.0)


def test_threshold_is_strict():
    r = compute_metrics(np.array([75.0]), np.array([75.0]), 75.0)
    assert r.hits == 0 and "pod_undefined" in r.flags


def test_no_events_flags():
    r = compute_metrics(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    assert r.csi_percent == r.pod_percent == r.far_percent == 0.0
    assert {"csi_undefined", "pod_undefined", "far_undefined"} <= set(r.flags)


def test_mape_excludes_small_truths():
    r = compute_metrics(np.array([2.0, 0.5]), np.array([4.0, 0.1]))
    assert r.mape_percent == 50.0
    r = compute_metrics(np.array([2.0]), np.array([0.5]))
    assert r.mape_percent == 0.0 and "mape_undefined" in r.flags


def test_metrics_errors():
    with pytest.raises(ValueError):
        compute_metrics(np.ones(2), np.ones(3))
    with pytest.raises(ValueError):
        compute_metrics(np.ones(2), np.ones(2), threshold=0.0)


def test_metrics_brute_force_2x3x4x1(rng):
    pred, truth = rng.uniform(0, 150, size=(2, 2, 3, 4, 1))
    r = compute_metrics(pred, truth)
    for key, value in brute_force_metrics(pred, truth, 75.0).items():
        assert getattr(r, key) == value, key


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 30))
def test_metrics_invariants(seed, n):
    rng = np.random.default_rng(seed)
    pred, truth = rng.uniform(0, 150, size=(2, n))
    r = compute_metrics(pred, truth)
    assert r.mae <= r.rmse + 1e-12
    for v in (r.csi_percent, r.pod_percent, r.far_percent):
        assert 0.0 <= v <= 100.0
    assert r.csi_percent <= r.pod_percent
    if r.hits + r.false_alarms:
        assert r.csi_percent <= 100.0 * r.hits / (r.hits + r.false_alarms)


# --- config -------------------------------------------------------------


def test_parse_config_text():
    items = parse_config_text("# comment\nlearning_rate = 0.01  # inline\n\nK=2\n")
    assert items == {"learning_rate": "0.01", "K": "2"}


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        apply_overrides(ModelConfig(), TrainConfig(), {"bogus": "1"})


def test_bad_value_rejected():
    with pytest.raises(ConfigError):
        apply_overrides(ModelConfig(), TrainConfig(), {"K": "three"})
    with pytest.raises(ConfigError):
        apply_overrides(ModelConfig(), TrainConfig(), {"no_intv": "maybe"})


def test_load_config_round_trip(tmp_path):
    m, t = load_config(None, {"N": "5", "no_prompt": "true", "beta": "0.5"})
    path = tmp_path / "c.txt"
    path.write_text(format_config(m, t))
    m2, t2 = load_config(path)
    assert (m2, t2) == (m, t)
    assert config_digest(m2, t2) == config_digest(m, t) != config_digest(ModelConfig(), t)


def test_defaults_match_reported_hyperparameters():
    m, t = ModelConfig(), TrainConfig()
    assert (m.T, m.T_P, m.L1, m.L2, m.K_h, m.N, m.f) == (24, 24, 3, 3, 8, 184, 13)
    assert (t.learning_rate, t.K, t.rmsprop_decay, t.batch_size) == (5e-4, 3, 0.99, 8)


@pytest.mark.parametrize("change", [dict(batch_size=0), dict(keep_prob=0.0), dict(beta=-1.0), dict(K=0)])
def test_train_config_rejects(change):
    with pytest.raises(ConfigError):
        dataclasses.replace(TrainConfig(), **change).validate()


# --- training -----------------------------------------------------------


@pytest.fixture(scope="module")
def small_data():
    # 59 steps -> 28 training windows, so batches of 4 divide evenly
    series = generate_synthetic(5, 59, 1, 3, seed=1)
    mcfg = ModelConfig(**TINY)
    return mcfg, prepare_data(series, mcfg, TrainConfig(batch_size=4))


def _train(small_data, **kw):
    mcfg, data = small_data
    cfg = TrainConfig(**{"batch_size": 4, "max_epochs": 2, **kw})
    model = AirCadeModel(mcfg, seed=cfg.seed)
    return model, train(model, data.train, data.val, cfg)


def test_zero_learning_rate_leaves_parameters(small_data):
    mcfg, _ = small_data
    init = AirCadeModel(mcfg, seed=0).state_dict()
    model, result = _train(small_data, learning_rate=0.0)
    assert result.steps > 0
    for name, value in model.state_dict().items():
        assert np.array_equal(value, init[name]), name


def test_training_is_deterministic(small_data, tmp_path):
    _, a = _train(small_data, seed=3)
    _, b = _train(small_data, seed=3)
    write_log(a.log, tmp_path / "a.csv")
    write_log(b.log, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_log_columns(small_data, tmp_path):
    _, r = _train(small_data)
    write_log(r.log, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,step,env,train_loss,val_mae"
    assert len(lines) == 1 + r.steps
    assert all(0 <= int(row["env"]) < 3 for row in r.log)


def test_no_intv_matches_trivial_intervention(small_data):
    _, plain = _train(small_data, no_intv=True, beta=1.0)
    _, masked = _train(small_data, K=1, keep_prob=1.0, beta=1.0)
    assert [r["train_loss"] for r in plain.log] == [r["train_loss"] for r in masked.log]
    assert {r["env"] for r in plain.log} == {-1}


def test_max_steps(small_data):
    _, r = _train(small_data, max_steps=3, max_epochs=10)
    assert r.steps == 3


def test_early_stopping_and_best_restore(small_data):
    mcfg, data = small_data
    cfg = TrainConfig(batch_size=4, max_epochs=30, early_stop_patience=1, learning_rate=0.05)
    model = AirCadeModel(mcfg, seed=0)
    r = train(model, data.train, data.val, cfg)
    epochs = sorted({row["epoch"] for row in r.log})
    assert len(epochs) < 30
    val_by_epoch = {row["epoch"]: row["val_mae"] for row in r.log}
    assert r.best_val_mae == min(val_by_epoch.values()) == val_by_epoch[r.best_epoch]
    assert mean_abs_error(model, noisy(data.val, cfg.noise_sigma, cfg.seed)) == r.best_val_mae


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(small_data):
    mcfg, data = small_data
    model = AirCadeModel(mcfg, seed=0)
    model.predictor.bias.data[...] = np.inf
    with pytest.raises(NumericError, match="epoch 0, batch 0"):
        train(model, data.train, data.val, TrainConfig(batch_size=4, max_epochs=1))


def test_evaluate_is_side_effect_free(small_data):
    mcfg, data = small_data
    model = AirCadeModel(mcfg, seed=0)
    a = evaluate(model, data.test, data.stats, sigma=1.0, seed=0)
    b = evaluate(model, data.test, data.stats, sigma=1.0, seed=0)
    assert a == b and a.count == len(data.test) * 4 * 5


def test_prepare_data_checks_dimensions(small_data):
    series = generate_synthetic(6, 59, 1, 3, seed=1)
    with pytest.raises(ValueError, match="N, c, f"):
        prepare_data(series, ModelConfig(**TINY), TrainConfig())
