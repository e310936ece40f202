import math

import numpy as np
import pytest

from momrank.autodiff import Tensor, gradients
from momrank.data import gen_synthetic, StockPanel, trading_days
from momrank.errors import ContractError, TrainingError
from momrank.losses import RankLossConfig, classification_loss, expected_level, make_rank_batch, mse_loss
from momrank.model import Architecture, forward, init_params
from momrank.momentum import MomentumConfig
from momrank.training import (MODE_EW, MODE_STL, TrainConfig, _GroupOptimizer, adapted_beta,
                              adapted_decay, balance_gradients, balanced_parts, build_batches,
                              class_labels_for, converge_ratio, ema_update, fit, log_grad)


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


# ---- converge rate ----

def test_converge_rate_early_epochs_are_one():
    hist = [1.0] * 30
    assert converge_ratio(hist, hist, 5, 6) == 1.0
    assert converge_ratio(hist, hist, 11, 6) == 1.0


def test_converge_rate_healthy_and_overfit():
    b = 2
    # baseline window mean 1.0; recent train 0.8 (down 0.2), valid 0.9 (down 0.1)
    train = [1.0, 1.0, 1.0, 0.8]
    valid = [1.0, 1.0, 1.0, 0.9]
    assert converge_ratio(train, valid, 5, b) == pytest.approx(0.5)
    valid_up = [1.0, 1.0, 1.0, 1.1]
    assert converge_ratio(train, valid_up, 5, b) == pytest.approx(-0.5)


def test_converge_rate_clamped_and_floored():
    b = 2
    train = [1.0, 1.0, 1.0, 1.0]       # no train change -> floor 1e-8
    valid = [1.0, 1.0, 1.0, 0.9]
    assert converge_ratio(train, valid, 5, b) == -5.0  # clamped
    valid_up = [1.0, 1.0, 1.0, 1.2]
    assert converge_ratio(train, valid_up, 5, b) == 5.0


def test_converge_rate_uses_available_history_at_boundary():
    b = 6
    train = list(np.linspace(2.0, 1.0, 11))
    valid = list(np.linspace(2.0, 1.5, 11))
    v = converge_ratio(train, valid, 12, b)  # needs epochs -< only 11 available
    assert np.isfinite(v) and v != 1.0


# ---- beta / decay adaptation ----

def test_adapted_beta_at_zero():
    assert adapted_beta(0.5, 0.0) == pytest.approx(0.5 ** 0.5, abs=1e-12)
    assert adapted_beta(0.5, 0.0) == pytest.approx(0.70711, abs=1e-5)


def test_adapted_beta_at_one():
    assert adapted_beta(0.5, 1.0) == pytest.approx(0.5 ** sigmoid(1.0), abs=1e-12)
    assert adapted_beta(0.5, 1.0) == pytest.approx(0.60246, abs=1e-4)


def test_adapted_beta_bounds_and_monotonicity():
    beta = 0.5
    grid = np.linspace(-5.0, 5.0, 101)
    vals = [adapted_beta(beta, v) for v in grid]
    assert all(beta < b < 1.0 for b in vals)
    assert all(a > b for a, b in zip(vals, vals[1:]))  # decreasing in the rate
    assert adapted_beta(beta, -50.0) == pytest.approx(1.0, abs=1e-12)


def test_adapted_decay():
    assert adapted_decay(1e-3, 0.0) == pytest.approx(5e-4)
    assert adapted_decay(1e-3, 50.0) == pytest.approx(0.0, abs=1e-12)
    assert adapted_decay(1e-3, -50.0) == pytest.approx(1e-3, abs=1e-12)
    grid = np.linspace(-5, 5, 50)
    vals = [adapted_decay(1e-3, v) for v in grid]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert all(0.0 <= v <= 1e-3 for v in vals)


# ---- EMA ----

def test_ema_update_examples():
    assert ema_update(np.array([2.0]), np.array([0.0]), 0.5)[0] == 1.0
    np.testing.assert_allclose(ema_update(np.array([2.0]), np.array([0.0]), 0.999999),
                               [2.0], atol=1e-5)
    np.testing.assert_allclose(ema_update(np.array([2.0]), np.array([0.0]), 1e-9),
                               [0.0], atol=1e-8)


def test_ema_first_call_adopts_gradient():
    g = np.array([1.0, -2.0])
    np.testing.assert_array_equal(ema_update(None, g, 0.5), g)


# ---- balancing ----

def test_balance_identical_directions():
    g = np.array([1.0, 2.0])
    np.testing.assert_allclose(balance_gradients(g, g), 2.0 * g)


def test_balance_hand_example():
    out = balance_gradients(np.array([3.0, 4.0]), np.array([0.0, 1.0]))
    np.testing.assert_allclose(out, [3.0, 9.0])


def test_balance_opposite_unit_vectors_cancel():
    g = np.array([1.0, 0.0])
    np.testing.assert_allclose(balance_gradients(g, -g), [0.0, 0.0], atol=1e-15)


def test_balance_zero_norm_guard():
    g = np.array([3.0, 4.0])
    out = balance_gradients(g, np.zeros(2))
    np.testing.assert_allclose(out, g)
    np.testing.assert_allclose(balance_gradients(np.zeros(2), np.zeros(2)), np.zeros(2))


def test_balanced_parts_have_equal_norms():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.normal(size=8), rng.normal(size=8) * rng.uniform(0.01, 100)
        pa, pb = balanced_parts(a, b)
        target = max(np.linalg.norm(a), np.linalg.norm(b))
        assert np.linalg.norm(pa) == pytest.approx(target, abs=1e-9)
        assert np.linalg.norm(pb) == pytest.approx(target, abs=1e-9)
        total = balance_gradients(a, b)
        assert np.linalg.norm(total) <= 2.0 * target + 1e-12


# ---- log-gradient ----

def test_log_grad_is_scaled_gradient():
    x = Tensor(np.array([1.0, 0.0]))
    loss = (x * x).sum()  # L = 1, dL/dx = (2, 0)
    (g,) = log_grad(loss, [x])
    np.testing.assert_allclose(g, [2.0 / (1.0 + 1e-8), 0.0], atol=1e-9)


def test_log_grad_epsilon_floor_at_zero_loss():
    x = Tensor(np.array([0.0]))
    loss = (x * x).sum()  # L = 0, plain grad 0; the floor keeps it finite
    (g,) = log_grad(loss, [x])
    assert np.isfinite(g).all() and g[0] == 0.0
    x2 = Tensor(np.array([1e-6]))
    (g2,) = log_grad((x2 * x2).sum(), [x2])
    # scale is 1/(L+1e-8): ~ 2e-6/(1e-12+1e-8)
    assert g2[0] == pytest.approx(2e-6 / (1e-12 + 1e-8), rel=1e-6)


def test_log_grad_nonfinite_loss_raises():
    x = Tensor(np.array([np.inf]))
    with pytest.raises(TrainingError):
        log_grad((x * x).sum(), [x])


# ---- optimizer ----

def test_sgd_step_formula():
    opt = _GroupOptimizer("sgd", 2, lr=0.1)
    out = opt.step(np.array([1.0, -1.0]), np.array([0.5, 0.5]), decay=0.0)
    np.testing.assert_allclose(out, [0.95, -1.05])


def test_sgd_decoupled_decay():
    opt = _GroupOptimizer("sgd", 1, lr=0.1)
    out = opt.step(np.array([2.0]), np.array([0.0]), decay=0.5)
    np.testing.assert_allclose(out, [2.0 - 0.1 * 0.5 * 2.0])


def test_adam_decay_shrinks_params_without_gradient():
    opt = _GroupOptimizer("adam", 1, lr=0.01)
    p = np.array([5.0])
    for _ in range(10):
        p = opt.step(p, np.zeros(1), decay=0.1)
    assert 0 < p[0] < 5.0


# ---- batches / config ----

def small_mom_cfg():
    return MomentumConfig(gap=1, length=1)


def test_build_batches_filters_days():
    panel = gen_synthetic(20, 6, 0.5, seed=0)
    labels = class_labels_for(panel, "momentum", small_mom_cfg())
    batches = build_batches(panel, labels, window=3)
    # labels need anchor t+2 <= 19 and span >= 2; window needs t >= 2; y needs t <= 18
    ts = [b.t for b in batches]
    assert min(ts) >= 2 and max(ts) <= 17
    for b in batches:
        assert b.rows.size >= 2
        assert b.feats.shape == (b.rows.size, 3, panel.n_features)


def test_train_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(mode="nope")
    with pytest.raises(ContractError):
        TrainConfig(lr=0.0)
    with pytest.raises(ContractError):
        TrainConfig(beta=1.0)
    with pytest.raises(ContractError):
        TrainConfig(optimizer="rmsprop")


# ---- fit: oracle equivalence, determinism, modes ----

def tiny_panels(n_dates=8, n_tickers=5, seed=42):
    panel = gen_synthetic(20, n_tickers, 0.8, seed=seed)
    return panel.subpanel(0, n_dates), panel.subpanel(n_dates, min(20, n_dates + 6))


def test_ew_mode_matches_hand_rolled_joint_loop():
    train, valid = tiny_panels(n_dates=8)
    mom_cfg = small_mom_cfg()
    loss_cfg = RankLossConfig()
    cfg = TrainConfig(mode=MODE_EW, lr=0.05, epochs=1, optimizer="sgd", decay=0.0,
                      window=1, hidden=(6, 6), patience=1)
    result = fit(train, valid, mom_cfg, loss_cfg, cfg, seed=3)

    # independent reference: plain joint training, same data and init
    labels = class_labels_for(train, "momentum", mom_cfg)
    batches = build_batches(train, labels, window=1)
    assert len(batches) >= 2
    arch = Architecture(window=1, n_features=train.n_features, hidden=(6, 6),
                        trunk="mlp", n_classes=5)
    ref = init_params(arch, seed=3)
    tensors = ref.trunk_tensors() + ref.reg_tensors() + ref.cls_tensors()
    for b in batches:
        out = forward(ref, b.feats)
        scores = expected_level(out.class_logits) * loss_cfg.score_scale
        rank_batch = make_rank_batch(scores, b.labels, 5, loss_cfg)
        joint = mse_loss(out.pred_return, b.y) + classification_loss(
            out.class_logits, b.labels, rank_batch, loss_cfg)
        grads = gradients(joint, tensors)
        for tensor, grad in zip(tensors, grads):
            tensor.data = tensor.data - 0.05 * grad

    got = result.params.all_named()
    want = ref.all_named()
    for name in want:
        np.testing.assert_allclose(got[name].data, want[name].data, atol=1e-9, err_msg=name)


def test_fit_deterministic_logs():
    train, valid = tiny_panels()
    cfg = TrainConfig(lr=1e-3, epochs=3, window=2, hidden=(6, 6), patience=30)
    a = fit(train, valid, small_mom_cfg(), RankLossConfig(), cfg, seed=11)
    b = fit(train, valid, small_mom_cfg(), RankLossConfig(), cfg, seed=11)
    assert a.epoch_log == b.epoch_log
    assert a.best_epoch == b.best_epoch
    for name, tensor in a.params.all_named().items():
        np.testing.assert_array_equal(tensor.data, b.params.all_named()[name].data)


def test_fit_stl_leaves_classification_head_untouched():
    train, valid = tiny_panels()
    cfg = TrainConfig(mode=MODE_STL, lr=1e-3, epochs=2, window=2, hidden=(6, 6))
    result = fit(train, valid, small_mom_cfg(), RankLossConfig(), cfg, seed=5)
    fresh = init_params(result.params.arch, seed=5)
    for name in ("w", "b"):
        np.testing.assert_array_equal(result.params.cls_head[name].data,
                                      fresh.cls_head[name].data)
    assert any(not np.array_equal(result.params.trunk[n].data, fresh.trunk[n].data)
               for n in result.params.trunk)
    # stl logs only regression rows and records no ranking depths
    assert {r.task for r in result.epoch_log} == {"regression"}
    assert result.k_counts == {}


def test_fit_rise_fall_task_uses_two_classes():
    train, valid = tiny_panels()
    cfg = TrainConfig(task="rise_fall", lr=1e-3, epochs=2, window=2, hidden=(6, 6))
    result = fit(train, valid, small_mom_cfg(), RankLossConfig(), cfg, seed=6)
    assert result.params.arch.n_classes == 2
    assert result.params.cls_head["w"].data.shape == (6, 2)


def test_fit_records_k_and_epochs():
    train, valid = tiny_panels()
    cfg = TrainConfig(lr=1e-3, epochs=2, window=2, hidden=(6, 6))
    result = fit(train, valid, small_mom_cfg(), RankLossConfig(), cfg, seed=7)
    assert sum(result.k_counts.values()) >= 2  # one k per usable training day
    epochs_logged = {r.epoch for r in result.epoch_log}
    assert epochs_logged == {1, 2}
    splits = {(r.epoch, r.split, r.task) for r in result.epoch_log}
    assert (1, "train", "classification") in splits and (2, "valid", "regression") in splits


def test_fit_early_stops_on_stale_validation():
    train, _ = tiny_panels()
    # flat-price validation: returns are all zero, so the daily IC is undefined
    # and the early-stop score can never improve
    t, n = 8, train.n_tickers
    flat = StockPanel(trading_days(t, start="2030-01-01"), list(train.tickers),
                      np.full((t, n), 50.0),
                      np.random.default_rng(0).normal(size=(t, n, train.n_features)),
                      np.ones((t, n), dtype=bool))
    cfg = TrainConfig(lr=1e-3, epochs=50, window=2, hidden=(6, 6), patience=3)
    result = fit(train, flat, small_mom_cfg(), RankLossConfig(), cfg, seed=8)
    assert result.epochs_run == 3
    assert result.best_epoch == 1


def test_fit_no_usable_days_raises():
    panel = gen_synthetic(20, 5, 0.5, seed=1)
    short = panel.subpanel(0, 20)
    cfg = TrainConfig(lr=1e-3, epochs=1, window=30, hidden=(4, 4))  # window longer than panel
    with pytest.raises(TrainingError):
        fit(short, short, small_mom_cfg(), RankLossConfig(), cfg, seed=0)
