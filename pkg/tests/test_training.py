import numpy as np
import pytest

from quadnet import numerics as nx
from quadnet.data import Dataset, SynthConfig, generate_synthetic, split
from quadnet.errors import ConfigError, DataError, TrainingError
from quadnet.losses import LossConfig
from quadnet.sampling import SamplerConfig
from quadnet.training import (
    AdamWState,
    TrainConfig,
    adamw_step,
    fit,
    train_epoch,
    write_history_csv,
)
import quadnet.training as training

import oracles
from conftest import make_model


def small_data(seed=3):
    ds = generate_synthetic(SynthConfig(num_classes=4, input_dim=8, samples_per_class=40, outlier_count=60, seed=seed))
    return split(ds, (0.6, 0.2, 0.2), seed=1)


def small_config(**kw):
    sampler = SamplerConfig(batch_size=24, quads_per_batch=32)
    return TrainConfig(sampler=sampler, **kw)


def small_model(seed=0):
    return make_model(input_dim=8, embed_dim=5, num_classes=4, backbone_hidden=[16], seed=seed)


# ---------------------------------------------------------------- AdamW


def test_adamw_first_step_spot_value():
    theta = np.array([1.0])
    adamw_step([theta], [np.array([1.0])], AdamWState(), TrainConfig(lr=0.005, weight_decay=0.01))
    assert theta[0] == pytest.approx(0.99495, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_adamw_without_decay_is_adam(seed):
    rng = np.random.default_rng(seed)
    grads = rng.normal(size=25).tolist()
    cfg = TrainConfig(lr=0.01, weight_decay=0.0)
    theta, state = np.array([0.7]), AdamWState()
    for g in grads:
        adamw_step([theta], [np.array([g])], state, cfg)
    assert abs(theta[0] - oracles.adam_scalar(0.7, grads, 0.01, 0.9, 0.999, 1e-8)) <= 1e-15


@pytest.mark.parametrize("seed", range(3))
def test_adamw_matches_scalar_oracle_with_decay(seed):
    rng = np.random.default_rng(100 + seed)
    grads = rng.normal(size=40).tolist()
    cfg = TrainConfig(lr=0.02, weight_decay=0.1)
    theta, state = np.array([-1.3]), AdamWState()
    for g in grads:
        adamw_step([theta], [np.array([g])], state, cfg)
    assert theta[0] == pytest.approx(oracles.adam_scalar(-1.3, grads, 0.02, 0.9, 0.999, 1e-8, 0.1), abs=1e-14)


def test_adamw_zero_gradient_applies_decay_only():
    theta = np.array([2.0, -4.0])
    adamw_step([theta], [np.zeros(2)], AdamWState(), TrainConfig(lr=0.1, weight_decay=0.5))
    assert np.allclose(theta, [2.0 * 0.95, -4.0 * 0.95], rtol=0, atol=1e-15)


def test_adamw_descends_convex_quadratic(rng):
    target = rng.normal(size=5)
    theta = nx.Tensor(np.zeros(5), requires_grad=True)
    loss = lambda: nx.reduce_sum(nx.mul(nx.sub(theta, nx.Tensor(target)), nx.sub(theta, nx.Tensor(target))))  # noqa: E731
    state, cfg = AdamWState(), TrainConfig(lr=0.05, weight_decay=0.0)
    before = loss().item()
    for _ in range(50):
        nx.backward(loss(), [theta])
        adamw_step([theta], [theta.grad], state, cfg)
    assert loss().item() < before


def test_adamw_non_finite_gradient_names_parameter():
    theta = nx.Tensor([1.0], requires_grad=True, name="head.2.weight")
    with pytest.raises(TrainingError, match="head.2.weight"):
        adamw_step([theta], [np.array([np.nan])], AdamWState(), TrainConfig())
    assert theta.data[0] == 1.0


# ---------------------------------------------------------------- epochs


def test_train_epoch_is_deterministic():
    train, _, _ = small_data()
    reports, states = [], []
    for _ in range(2):
        m = small_model()
        reports.append(train_epoch(m, train, small_config(seed=4), 1))
        states.append(m.state())
    assert reports[0].train_loss == reports[1].train_loss
    for a, b in zip(*states):
        assert a.tobytes() == b.tobytes()


def test_epoch_randomness_depends_on_seed():
    train, _, _ = small_data()
    a = train_epoch(small_model(), train, small_config(seed=1), 1).train_loss
    b = train_epoch(small_model(), train, small_config(seed=2), 1).train_loss
    assert a != b


def test_step_count_is_ceil_n_over_b():
    train, _, _ = small_data()
    report = train_epoch(small_model(), train, small_config(), 1)
    assert report.steps == -(-train.n // 24)


def test_loss_trends_down_early():
    train, _, _ = small_data()
    m, cfg, opt = small_model(), small_config(), AdamWState()
    losses = [train_epoch(m, train, cfg, e, opt).train_loss for e in (1, 2, 3)]
    # the mining schedule is flat over epochs 1-2; allow 5% noise thereafter
    for a, b in zip(losses, losses[1:]):
        assert b <= a * 1.05


def test_one_class_dataset_rejected():
    ds = Dataset.from_arrays(np.random.default_rng(0).normal(size=(10, 8)), [0] * 10, num_classes=4)
    with pytest.raises(DataError):
        train_epoch(small_model(), ds, small_config(), 1)


def test_outlier_free_training_data_is_accepted():
    ds = generate_synthetic(SynthConfig(num_classes=3, input_dim=8, samples_per_class=20, outlier_count=0, seed=1))
    m = make_model(input_dim=8, embed_dim=4, num_classes=3, backbone_hidden=[8])
    report = train_epoch(m, ds, small_config(), 1)
    assert np.isfinite(report.train_loss)


# ---------------------------------------------------------------- fit


def test_fit_stops_after_patience_on_frozen_metric(monkeypatch):
    train, val, _ = small_data()
    monkeypatch.setattr(training, "validation_score", lambda model, data: 0.5)
    _, history = fit(small_model(), train, val, small_config(max_epochs=10, patience=1))
    assert len(history) == 2
    assert history.best_epoch == 1 and history.stopped_early


def test_fit_zero_epochs_returns_initial_model():
    train, val, _ = small_data()
    m = small_model()
    before = [a.copy() for a in m.state()]
    m2, history = fit(m, train, val, small_config(max_epochs=0))
    assert len(history) == 0 and history.best_epoch is None
    assert not m2.training
    for a, b in zip(before, m2.state()):
        assert np.array_equal(a, b)


def test_fit_restores_best_weights(monkeypatch):
    train, val, _ = small_data()
    scores = iter([0.2, 0.9, 0.3, 0.4])
    snapshots = []
    real_epoch = training.train_epoch

    def spy(model, *a, **kw):
        out = real_epoch(model, *a, **kw)
        snapshots.append([s.copy() for s in model.state()])
        return out

    monkeypatch.setattr(training, "train_epoch", spy)
    monkeypatch.setattr(training, "validation_score", lambda model, data: next(scores))
    m, history = fit(small_model(), train, val, small_config(max_epochs=4, patience=5))
    assert history.best_epoch == 2 and history.best_metric == 0.9
    for a, b in zip(snapshots[1], m.state()):
        assert np.array_equal(a, b)


def test_fit_rejects_overlapping_ids():
    train, val, _ = small_data()
    with pytest.raises(DataError):
        fit(small_model(), train, train, small_config(max_epochs=1))


def test_fit_validates_config():
    train, val, _ = small_data()
    with pytest.raises(ConfigError, match="train.lr"):
        fit(small_model(), train, val, small_config(lr=0.0))


def test_history_csv_has_no_timing(tmp_path):
    train, val, _ = small_data()
    _, history = fit(small_model(), train, val, small_config(max_epochs=2))
    write_history_csv(history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_balanced_accuracy,mining_fraction"
    assert len(lines) == 3


def test_fit_improves_validation_accuracy():
    train, val, _ = small_data()
    m, history = fit(small_model(), train, val, small_config(max_epochs=20, patience=20, loss=LossConfig()))
    assert history.records[0].val_balanced_accuracy < 0.6
    assert history.best_metric >= 0.9
