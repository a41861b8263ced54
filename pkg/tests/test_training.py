import logging
import math
import os

import numpy as np
import pytest

from underwater_dal.datastore.checkpoint import TrainingState, load_checkpoint
from underwater_dal.lib.errors import ConfigError, InvalidInputError, NumericError, ShapeError
from underwater_dal.models.networks import build_model
from underwater_dal.training.losses import (
    check_distribution,
    loss_adversarial,
    loss_nuisance,
    loss_reconstruction,
)
from underwater_dal.training.procedure import (
    Mode,
    TrainConfig,
    apply_routed_update,
    checkpoint_path,
    decide_epoch_mode,
    evaluate_validation,
    iterate_batches,
    read_epoch_log,
    run_training,
    run_warmup,
    train_model,
)

LN6 = math.log(6.0)


def first_batch(samples, size=6, seed=0):
    return next(iterate_batches(samples, size, np.random.default_rng(seed)))


def params_of(registry):
    return {k: t.data.copy() for k, t in registry.items()}


def assert_same(a, b):
    assert set(a) == set(b)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k], err_msg=k)


def test_reconstruction_loss():
    x = np.random.default_rng(0).uniform(size=(2, 3, 4, 4))
    assert loss_reconstruction(x, x) == 0.0
    assert loss_reconstruction(np.zeros((1, 3, 2, 2)), np.full((1, 3, 2, 2), 0.5)) == pytest.approx(0.25)


def test_nuisance_loss_values():
    one_hot = np.eye(6)[2]
    assert loss_nuisance(one_hot, 2) == 0.0
    assert loss_nuisance(np.full(6, 1 / 6), 4) == pytest.approx(LN6, abs=1e-12)
    assert loss_nuisance(one_hot, 3) == pytest.approx(-math.log(1e-12), abs=1e-9)
    assert loss_nuisance(one_hot, 3) == pytest.approx(27.631, abs=1e-3)
    batch = np.stack([np.full(6, 1 / 6), one_hot])
    assert loss_nuisance(batch, np.array([0, 2])) == pytest.approx(LN6 / 2, abs=1e-12)


def test_nuisance_loss_rejects_bad_class():
    with pytest.raises(InvalidInputError):
        loss_nuisance(np.full(6, 1 / 6), 6)


def test_adversarial_loss_bounds():
    assert loss_adversarial(np.full(6, 1 / 6)) == pytest.approx(-LN6, abs=1e-12)
    assert loss_adversarial(np.eye(6)[0]) == 0.0
    rng = np.random.default_rng(1)
    for _ in range(100):
        p = rng.dirichlet(np.full(6, 0.5))
        value = loss_adversarial(p)
        assert -LN6 - 1e-12 <= value <= 1e-12


def test_invalid_distributions():
    with pytest.raises(NumericError):
        check_distribution(np.array([0.5, 0.6]))
    with pytest.raises(NumericError):
        check_distribution(np.array([1.5, -0.5]))
    with pytest.raises(NumericError):
        loss_adversarial(np.array([np.nan, 1.0]))


@pytest.mark.parametrize(
    "val_g, val_d, expected",
    [
        (0.85, 0.99, Mode.ADV_EG),
        (0.95, 0.80, Mode.TRAIN_D),
        (0.95, 0.90, Mode.ADV_EG),
        (0.85, 0.50, Mode.ADV_EG),
        (0.92, 0.70, Mode.TRAIN_D),
        (0.92, 0.88, Mode.ADV_EG),
        (0.90, 0.80, Mode.TRAIN_D),
        (0.95, 0.85, Mode.ADV_EG),
        (0.95, None, Mode.ADV_EG),
    ],
)
def test_epoch_mode(val_g, val_d, expected):
    decision = decide_epoch_mode(val_g, val_d, TrainConfig())
    assert decision.mode == expected
    assert decision.val_g == val_g


@pytest.mark.parametrize("val_g", [0.5, 0.9, 0.95, 1.0])
@pytest.mark.parametrize("val_d", [0.0, 0.5, 0.84, 0.85, 1.0, None])
def test_zero_weight_never_trains_the_classifier(val_g, val_d):
    assert decide_epoch_mode(val_g, val_d, TrainConfig(lambda_a=0.0)).mode == Mode.ADV_EG


@pytest.mark.parametrize("kwargs", [dict(threshold_g=1.2), dict(threshold_d=-0.1), dict(lambda_a=-1), dict(batch_size=0), dict(lr=0)])
def test_invalid_train_config(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs).validate()


def test_unknown_train_config_key():
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 0.1})


def test_train_d_touches_only_the_classifier(tiny_config, tiny_sets):
    train, _ = tiny_sets
    bundle = build_model(tiny_config, seed=0)
    eg, d = params_of(bundle.eg_params), params_of(bundle.d_params)
    losses = apply_routed_update(bundle, first_batch(train), Mode.TRAIN_D, 1.0, TrainingState())
    assert math.isfinite(losses.l_n)
    assert_same(params_of(bundle.eg_params), eg)
    for t in bundle.eg_params.values():
        np.testing.assert_array_equal(t.grad, 0.0)
    assert any(not np.array_equal(t.data, d[k]) for k, t in bundle.d_params.items())


def test_adv_eg_never_touches_the_classifier(tiny_config, tiny_sets):
    train, _ = tiny_sets
    bundle = build_model(tiny_config, seed=1)
    eg, d = params_of(bundle.eg_params), params_of(bundle.d_params)
    state = TrainingState()
    apply_routed_update(bundle, first_batch(train), Mode.ADV_EG, 1.0, state)
    assert_same(params_of(bundle.d_params), d)
    for t in bundle.d_params.values():
        np.testing.assert_array_equal(t.grad, 0.0)
    assert state.adam_d.t == 0 and state.adam_eg.t == 1
    assert any(not np.array_equal(t.data, eg[k]) for k, t in bundle.eg_params.items())


def test_adversarial_term_reaches_only_the_encoder(tiny_config, tiny_sets):
    train, _ = tiny_sets
    batch = first_batch(train)
    plain, adversarial = build_model(tiny_config, seed=2), build_model(tiny_config, seed=2)
    state_plain, state_adv = TrainingState(), TrainingState()
    apply_routed_update(plain, batch, Mode.ADV_EG, 0.0, state_plain)
    apply_routed_update(adversarial, batch, Mode.ADV_EG, 1.0, state_adv)
    assert_same(params_of(plain.decoder.params), params_of(adversarial.decoder.params))
    apply_routed_update(plain, batch, Mode.ADV_EG, 0.0, state_plain)
    apply_routed_update(adversarial, batch, Mode.ADV_EG, 1.0, state_adv)
    assert any(
        not np.array_equal(t.data, adversarial.encoder.params[k].data) for k, t in plain.encoder.params.items()
    )


def test_zero_weight_matches_classifier_free_training(tiny_config, tiny_sets):
    train, _ = tiny_sets
    with_d = build_model(tiny_config, seed=3)
    without_d = build_model(tiny_config, seed=3, with_classifier=False)
    state_a, state_b = TrainingState(), TrainingState()
    rng = np.random.default_rng(3)
    for batch in iterate_batches(train, 6, rng):
        apply_routed_update(with_d, batch, Mode.ADV_EG, 0.0, state_a)
        apply_routed_update(without_d, batch, Mode.WARMUP_EG, 0.0, state_b)
    assert_same(params_of(with_d.eg_params), params_of(without_d.eg_params))


def test_train_d_needs_a_classifier(tiny_config, tiny_sets):
    bundle = build_model(tiny_config, seed=4, with_classifier=False)
    with pytest.raises(ShapeError):
        apply_routed_update(bundle, first_batch(tiny_sets[0]), Mode.TRAIN_D, 1.0, TrainingState())


def test_adversarial_loss_stays_in_range_during_training(tiny_config, tiny_sets):
    train, _ = tiny_sets
    bundle = build_model(tiny_config, seed=5)
    state = TrainingState()
    rng = np.random.default_rng(5)
    for step in range(12):
        mode = Mode.ADV_EG if step % 2 else Mode.TRAIN_D
        losses = apply_routed_update(bundle, first_batch(train, seed=int(rng.integers(100))), mode, 1.0, state)
        assert -LN6 - 1e-6 <= losses.l_a <= 1e-6
        assert losses.l_n >= 0


def test_non_finite_loss_stops_before_update(tiny_config, tiny_sets):
    bundle = build_model(tiny_config, seed=6)
    before = params_of(bundle.registry)
    images, targets, labels = first_batch(tiny_sets[0])
    images = images.copy()
    images[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericError):
        apply_routed_update(bundle, (images, targets, labels), Mode.ADV_EG, 1.0, TrainingState())
    assert_same(params_of(bundle.registry), before)


def test_reconstruction_loss_decreases(tiny_config, tiny_sets):
    bundle = build_model(tiny_config, seed=7, with_classifier=False)
    batch = first_batch(tiny_sets[0])
    state = TrainingState()
    config = TrainConfig(lr=3e-3)
    first = apply_routed_update(bundle, batch, Mode.WARMUP_EG, 0.0, state, config).l_r
    for _ in range(50):
        last = apply_routed_update(bundle, batch, Mode.WARMUP_EG, 0.0, state, config).l_r
    assert last < first


def test_validation_scores(tiny_config, tiny_sets):
    _, val = tiny_sets
    val_g, val_d = evaluate_validation(build_model(tiny_config, seed=8), val)
    assert -1.0 <= val_g <= 1.0
    assert 0.0 <= val_d <= 1.0
    val_g2, val_d2 = evaluate_validation(build_model(tiny_config, seed=8, with_classifier=False), val)
    assert val_g2 == val_g and val_d2 is None


def test_zero_threshold_skips_warmup(tiny_config, tiny_sets):
    bundle = build_model(tiny_config, seed=9)
    before = params_of(bundle.registry)
    state = TrainingState(seed=9)
    run_warmup(bundle, *tiny_sets, TrainConfig(threshold_g=0.0), state)
    assert state.warmup_done and state.warmup_epochs == 0
    assert state.val_g is not None and state.val_d is not None
    assert_same(params_of(bundle.registry), before)


def test_warmup_guard_and_frozen_classifier(tiny_config, tiny_sets, caplog):
    bundle = build_model(tiny_config, seed=10)
    d_before, eg_before = params_of(bundle.d_params), params_of(bundle.eg_params)
    state = TrainingState(seed=10)
    config = TrainConfig(threshold_g=1.0, max_warmup_epochs=2, batch_size=8)
    with caplog.at_level(logging.WARNING):
        run_warmup(bundle, *tiny_sets, config, state)
    assert state.warmup_epochs == 2
    assert any("Warmup stopped" in r.message for r in caplog.records)
    assert_same(params_of(bundle.d_params), d_before)
    assert state.adam_d.t == 0
    assert any(not np.array_equal(t.data, eg_before[k]) for k, t in bundle.eg_params.items())


def small_run_config(**kwargs):
    defaults = dict(threshold_g=0.0, threshold_d=0.5, epochs=4, batch_size=8, checkpoint_every=2, seed=5)
    defaults.update(kwargs)
    return TrainConfig(**defaults).validate()


def test_training_writes_log_and_checkpoints(tiny_config, tiny_sets, tmp_path):
    config = small_run_config()
    bundle = build_model(tiny_config, seed=config.seed)
    _, state, log = train_model(bundle, *tiny_sets, config, out_dir=str(tmp_path))
    assert [e.epoch for e in log] == [1, 2, 3, 4]
    assert all(e.mode in (Mode.ADV_EG, Mode.TRAIN_D) for e in log)
    assert state.epoch == 4
    for name in ("epoch_0000.ckpt", "epoch_0002.ckpt", "epoch_0004.ckpt", "final.ckpt", "epochs.csv"):
        assert os.path.exists(tmp_path / name), name
    assert checkpoint_path(str(tmp_path), 2) == str(tmp_path / "epoch_0002.ckpt")
    reread = read_epoch_log(str(tmp_path / "epochs.csv"))
    assert [e.mode for e in reread] == [e.mode for e in log]
    assert [e.val_g for e in reread] == [e.val_g for e in log]
    assert [e.losses.l_r for e in reread] == [e.losses.l_r for e in log]


def test_training_is_deterministic(tiny_config, tiny_sets):
    config = small_run_config(epochs=2)
    a, _, log_a = train_model(build_model(tiny_config, 5), *tiny_sets, config)
    b, _, log_b = train_model(build_model(tiny_config, 5), *tiny_sets, config)
    assert_same(a.state_dict(), b.state_dict())
    assert [e.val_g for e in log_a] == [e.val_g for e in log_b]


def test_zero_weight_run_matches_classifier_free_run(tiny_config, tiny_sets):
    config = small_run_config(threshold_d=0.85, lambda_a=0.0)
    with_d, _, log_with = train_model(build_model(tiny_config, 5), *tiny_sets, config)
    without_d, _, log_without = train_model(build_model(tiny_config, 5, with_classifier=False), *tiny_sets, config)
    assert [e.mode for e in log_with] == [Mode.ADV_EG] * 4
    assert [e.mode for e in log_without] == [Mode.ADV_EG] * 4
    assert_same(params_of(with_d.eg_params), params_of(without_d.eg_params))
    assert [e.val_g for e in log_with] == [e.val_g for e in log_without]
    assert [e.losses.l_r for e in log_with] == [e.losses.l_r for e in log_without]


def test_classifier_free_run_resumes(tiny_config, tiny_sets, tmp_path):
    config = small_run_config(lambda_a=0.0)
    full, _, _ = train_model(build_model(tiny_config, 5, with_classifier=False), *tiny_sets, config, out_dir=str(tmp_path / "a"))
    ckpt = load_checkpoint(str(tmp_path / "a" / "epoch_0002.ckpt"))
    assert not ckpt.with_classifier
    bundle = ckpt.to_bundle()
    assert bundle.classifier is None
    resumed, state, log = train_model(bundle, *tiny_sets, config, ckpt.state)
    assert state.val_d is None and all(e.val_d is None for e in log)
    assert_same(resumed.state_dict(), full.state_dict())


def test_resume_matches_uninterrupted_run(tiny_config, tiny_sets, tmp_path):
    config = small_run_config()
    full, full_state, full_log = train_model(build_model(tiny_config, 5), *tiny_sets, config, out_dir=str(tmp_path / "a"))

    ckpt = load_checkpoint(str(tmp_path / "a" / "epoch_0002.ckpt"))
    assert ckpt.state.epoch == 2
    resumed, state, log = train_model(ckpt.to_bundle(), *tiny_sets, config, ckpt.state, out_dir=str(tmp_path / "b"))
    assert [e.epoch for e in log] == [3, 4]
    assert_same(resumed.state_dict(), full.state_dict())
    assert state.val_g == full_state.val_g and state.val_d == full_state.val_d
    assert [e.mode for e in log] == [e.mode for e in full_log[2:]]


def test_resume_in_place_keeps_earlier_log(tiny_config, tiny_sets, tmp_path):
    config = small_run_config()
    out = str(tmp_path)
    train_model(build_model(tiny_config, 5), *tiny_sets, small_run_config(epochs=2), out_dir=out)
    ckpt = load_checkpoint(os.path.join(out, "final.ckpt"))
    _, _, log = train_model(ckpt.to_bundle(), *tiny_sets, config, ckpt.state, out_dir=out)
    assert [e.epoch for e in log] == [1, 2, 3, 4]


def test_main_loop_needs_a_finished_state(tiny_config, tiny_sets):
    bundle = build_model(tiny_config, 5)
    state = TrainingState(seed=5)
    run_warmup(bundle, *tiny_sets, small_run_config(), state)
    _, log = run_training(bundle, *tiny_sets, small_run_config(epochs=1), state)
    assert len(log) == 1 and state.epoch == 1


@pytest.mark.slow
def test_warmup_memorizes_a_small_set(tiny_config, tiny_sets):
    train, _ = tiny_sets
    few = train.subset(np.arange(10))
    bundle = build_model(tiny_config, seed=11, with_classifier=False)
    state = TrainingState(seed=11)
    config = TrainConfig(threshold_g=0.9, max_warmup_epochs=500, batch_size=10, lr=3e-3)
    run_warmup(bundle, few, few, config, state)
    assert state.val_g >= 0.9
