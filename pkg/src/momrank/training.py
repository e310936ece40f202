"""Training loop with convergence-aware multi-task gradient balancing.

One mini-batch is one trading day's full cross-section (the list-wise ranking
loss needs a coherent per-day list). The full pipeline, per task: take the
gradient of log(loss + 1e-8) on the shared trunk, smooth it with an
exponential moving average whose forgetting rate adapts per epoch, rescale
both task gradients to the larger L2 norm, and feed the sum to a first-order
adaptive optimizer with decoupled weight decay whose rate also adapts.

The adaptation signal is the relative converge rate: the recent change of
validation loss divided by the recent change of training loss, per task. A
negative value means validation loss is rebounding while training loss still
falls, i.e. overfitting; the forgetting rate then rises toward 1 (new
gradients get discounted) and weight decay grows toward its initial setting.

Modes:
    full         the whole pipeline (default)
    ew           plain joint training: raw gradients of L_r + L_c, no EMA,
                 no balancing, constant decay
    stl          regression only, through the log-grad/EMA pipeline
    fixed_beta   pipeline with the forgetting rate pinned at its initial value
    fixed_decay  pipeline with weight decay pinned at its initial value
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, gradients, sigmoid_np
from .data import StockPanel, compute_return
from .errors import ContractError, TrainingError
from .losses import (SCORES_REG, RankLossConfig, classification_loss, expected_level,
                     make_rank_batch, mse_loss)
from .metrics import daily_ic, daily_rank_ic
from .model import (Architecture, BackboneParams, day_window, forward, init_params, window_ok)
from .momentum import UNLABELED, MomentumConfig, label_dataset, rise_fall_label

MODE_FULL, MODE_EW, MODE_STL = "full", "ew", "stl"
MODE_FIXED_BETA, MODE_FIXED_DECAY = "fixed_beta", "fixed_decay"
MODES = (MODE_FULL, MODE_EW, MODE_STL, MODE_FIXED_BETA, MODE_FIXED_DECAY)
TASK_MOMENTUM, TASK_RISE_FALL = "momentum", "rise_fall"
LOG_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    mode: str = MODE_FULL
    task: str = TASK_MOMENTUM
    lr: float = 2e-4
    epochs: int = 100
    beta: float = 0.5            # initial EMA forgetting rate
    decay: float = 1e-3          # initial decoupled weight decay
    loss_window: int = 6         # epochs averaged in the converge-rate window
    patience: int = 30
    optimizer: str = "adam"      # adam | sgd
    window: int = 20             # feature window length W
    hidden: tuple[int, int] = (64, 64)
    trunk: str = "mlp"
    standardize_y: bool = True   # z-score the return target per day (unit-scale MSE)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"unknown mode {self.mode!r}")
        if self.task not in (TASK_MOMENTUM, TASK_RISE_FALL):
            raise ContractError(f"unknown task {self.task!r}")
        if self.lr <= 0 or self.epochs < 1 or self.decay < 0:
            raise ContractError("need lr > 0, epochs >= 1, decay >= 0")
        if not 0.0 < self.beta < 1.0:
            raise ContractError("beta must lie in (0, 1)")
        if self.loss_window < 1 or self.patience < 1 or self.window < 1:
            raise ContractError("loss_window, patience and window must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochRecord:
    epoch: int
    split: str      # train | valid
    task: str       # regression | classification
    loss: float
    converge: float  # relative converge rate in force during this epoch
    beta: float      # forgetting rate in force during this epoch
    decay: float
    ic: float
    rank_ic: float


@dataclass
class FitResult:
    params: BackboneParams
    best_epoch: int
    epochs_run: int
    epoch_log: list[EpochRecord] = field(default_factory=list)
    k_counts: dict[int, int] = field(default_factory=dict)


# ---- pipeline primitives ----

def log_grad(loss: Tensor, wrt: list[Tensor]) -> list[np.ndarray]:
    """Gradient of log(loss + 1e-8) w.r.t. each tensor."""
    if not np.isfinite(loss.data).all():
        raise TrainingError("loss is not finite")
    return gradients((loss + LOG_EPS).log(), wrt)


def ema_update(prev: np.ndarray | None, grad: np.ndarray, beta: float) -> np.ndarray:
    """Exponential moving average; the first call adopts the gradient as-is."""
    if prev is None:
        return grad.copy()
    return beta * prev + (1.0 - beta) * grad


def balanced_parts(g_reg: np.ndarray, g_cls: np.ndarray,
                   eps: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Each task gradient rescaled to the larger of the two L2 norms."""
    n_reg = float(np.linalg.norm(g_reg))
    n_cls = float(np.linalg.norm(g_cls))
    scale = max(n_reg, n_cls)
    part_reg = g_reg * (scale / n_reg) if n_reg > eps else np.zeros_like(g_reg)
    part_cls = g_cls * (scale / n_cls) if n_cls > eps else np.zeros_like(g_cls)
    return part_reg, part_cls


def balance_gradients(g_reg: np.ndarray, g_cls: np.ndarray) -> np.ndarray:
    part_reg, part_cls = balanced_parts(g_reg, g_cls)
    return part_reg + part_cls


def converge_ratio(train_hist, valid_hist, epoch: int, window: int) -> float:
    """Relative converge rate for ``epoch`` from losses of epochs 1..epoch-1.

    Change of loss = last epoch's loss minus the mean over the window of
    epochs one window earlier; the ratio valid/train is floored at |1e-8| in
    the denominator (sign kept) and clamped to [-5, 5]. Before two full
    windows of history exist the rate is defined as 1.
    """
    if epoch < 2 * window:
        return 1.0

    def change(hist) -> float | None:
        if len(hist) < epoch - 1 or epoch - 2 < 0:
            return None
        recent = hist[epoch - 2]
        lo, hi = max(1, epoch - 2 * window), epoch - window - 1
        if hi < lo:
            return None
        baseline = float(np.mean(hist[lo - 1: hi]))
        return recent - baseline

    d_train = change(train_hist)
    d_valid = change(valid_hist)
    if d_train is None or d_valid is None or not (np.isfinite(d_train) and np.isfinite(d_valid)):
        return 1.0
    if abs(d_train) < 1e-8:
        d_train = 1e-8 if d_train >= 0 else -1e-8
    return float(np.clip(d_valid / d_train, -5.0, 5.0))


def adapted_beta(beta: float, converge: float) -> float:
    """Forgetting rate for the epoch: beta ** sigmoid(converge rate)."""
    return float(beta ** sigmoid_np(converge))


def adapted_decay(decay: float, mean_converge: float) -> float:
    """Weight decay for the epoch: decay * sigmoid(-mean converge rate)."""
    return float(decay * sigmoid_np(-mean_converge))


# ---- optimizer over flat parameter groups ----

class _GroupOptimizer:
    """First-order step on one flat parameter group with decoupled decay."""

    def __init__(self, kind: str, dim: int, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.kind = kind
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, flat: np.ndarray, grad: np.ndarray, decay: float) -> np.ndarray:
        if self.kind == "sgd":
            return flat - self.lr * grad - self.lr * decay * flat
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return flat - self.lr * m_hat / (np.sqrt(v_hat) + self.eps) - self.lr * decay * flat


def _flatten(arrays) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays]) if arrays else np.empty(0)


def _flat_data(tensors) -> np.ndarray:
    return _flatten([t.data for t in tensors])


def _assign_flat(tensors, flat: np.ndarray) -> None:
    offset = 0
    for t in tensors:
        size = t.data.size
        t.data = flat[offset: offset + size].reshape(t.data.shape).copy()
        offset += size


# ---- batches ----

@dataclass
class _DayBatch:
    t: int
    rows: np.ndarray
    feats: np.ndarray
    y: np.ndarray
    labels: np.ndarray


def class_labels_for(panel: StockPanel, task: str, mom_cfg: MomentumConfig) -> np.ndarray:
    if task == TASK_RISE_FALL:
        return rise_fall_label(compute_return(panel))
    return label_dataset(panel, mom_cfg)


def build_batches(panel: StockPanel, labels: np.ndarray, window: int,
                  standardize_y: bool = True) -> list[_DayBatch]:
    """One batch per trading day with >= 2 stocks carrying window, y and label.

    With ``standardize_y`` the regression target is the day's return z-scored
    across the batch, putting the MSE on unit scale like the class loss.
    Per-day IC against the raw return is unchanged (affine invariance).
    """
    y = compute_return(panel).y
    ok = window_ok(panel, window)
    batches: list[_DayBatch] = []
    for t in range(window - 1, panel.n_dates):
        rows = np.flatnonzero(ok[t] & np.isfinite(y[t]) & (labels[t] != UNLABELED))
        if rows.size < 2:
            continue
        target = y[t, rows]
        if standardize_y:
            sd = target.std()
            target = (target - target.mean()) / sd if sd > 1e-12 else np.zeros_like(target)
        batches.append(_DayBatch(t=t, rows=rows,
                                 feats=day_window(panel, t, window, rows),
                                 y=target, labels=labels[t, rows]))
    return batches


def _batch_losses(params: BackboneParams, batch: _DayBatch, loss_cfg: RankLossConfig,
                  n_classes: int, need_cls: bool):
    """Forward one day and build the task losses (and the rank batch)."""
    out = forward(params, batch.feats)
    loss_r = mse_loss(out.pred_return, batch.y)
    if not need_cls:
        return out, loss_r, None, None
    if loss_cfg.score_source == SCORES_REG:
        scores = out.pred_return * loss_cfg.score_scale
    else:
        scores = expected_level(out.class_logits) * loss_cfg.score_scale
    rank_batch = make_rank_batch(scores, batch.labels, n_classes, loss_cfg)
    loss_c = classification_loss(out.class_logits, batch.labels, rank_batch, loss_cfg)
    return out, loss_r, loss_c, rank_batch


def _split_metrics(params: BackboneParams, batches: list[_DayBatch],
                   loss_cfg: RankLossConfig, n_classes: int, need_cls: bool):
    """Mean per-day losses plus IC/RankIC of the regression head on a split."""
    if not batches:
        return float("nan"), float("nan"), float("nan"), float("nan")
    loss_r_sum = loss_c_sum = 0.0
    ics, rics = [], []
    for batch in batches:
        out, loss_r, loss_c, _ = _batch_losses(params, batch, loss_cfg, n_classes, need_cls)
        loss_r_sum += loss_r.item()
        if need_cls:
            loss_c_sum += loss_c.item()
        ics.append(daily_ic(out.pred_return.data, batch.y))
        rics.append(daily_rank_ic(out.pred_return.data, batch.y))
    n = len(batches)
    finite_ics = [v for v in ics if np.isfinite(v)]
    finite_rics = [v for v in rics if np.isfinite(v)]
    ic = float(np.mean(finite_ics)) if finite_ics else float("nan")
    ric = float(np.mean(finite_rics)) if finite_rics else float("nan")
    return loss_r_sum / n, (loss_c_sum / n if need_cls else float("nan")), ic, ric


def fit(train_panel: StockPanel, valid_panel: StockPanel, mom_cfg: MomentumConfig,
        loss_cfg: RankLossConfig, cfg: TrainConfig, seed: int) -> FitResult:
    """Train on the train split, adapt and early-stop on the valid split.

    Returns the parameters of the epoch with the highest validation IC of the
    regression head, the per-epoch log, and the training-day k histogram.
    """
    need_cls = cfg.mode != MODE_STL
    n_classes = 2 if cfg.task == TASK_RISE_FALL else 5
    train_batches = build_batches(train_panel, class_labels_for(train_panel, cfg.task, mom_cfg),
                                  cfg.window, cfg.standardize_y)
    valid_batches = build_batches(valid_panel, class_labels_for(valid_panel, cfg.task, mom_cfg),
                                  cfg.window, cfg.standardize_y)
    if not train_batches:
        raise TrainingError("no usable training days (window/label/return constraints)")

    arch = Architecture(window=cfg.window, n_features=train_panel.n_features,
                        hidden=cfg.hidden, trunk=cfg.trunk, n_classes=n_classes)
    params = init_params(arch, seed)
    theta = params.trunk_tensors()
    psi_r = params.reg_tensors()
    psi_c = params.cls_tensors()
    opt_theta = _GroupOptimizer(cfg.optimizer, _flat_data(theta).size, cfg.lr)
    opt_reg = _GroupOptimizer(cfg.optimizer, _flat_data(psi_r).size, cfg.lr)
    opt_cls = _GroupOptimizer(cfg.optimizer, _flat_data(psi_c).size, cfg.lr)

    ema_reg: np.ndarray | None = None
    ema_cls: np.ndarray | None = None
    hist = {("train", "r"): [], ("valid", "r"): [], ("train", "c"): [], ("valid", "c"): []}
    v_reg = v_cls = 1.0
    k_counts: dict[int, int] = {}
    log: list[EpochRecord] = []
    best_ic = -np.inf
    best_epoch = 0
    best_snapshot = params.copy_data()
    stale = 0
    epochs_run = 0

    for epoch in range(1, cfg.epochs + 1):
        epochs_run = epoch
        if cfg.mode in (MODE_FULL, MODE_FIXED_DECAY):
            beta_reg_e = adapted_beta(cfg.beta, v_reg)
            beta_cls_e = adapted_beta(cfg.beta, v_cls)
        else:  # fixed_beta keeps the initial rate; stl adapts its single task
            beta_reg_e = adapted_beta(cfg.beta, v_reg) if cfg.mode == MODE_STL else cfg.beta
            beta_cls_e = cfg.beta
        if cfg.mode == MODE_EW or cfg.mode == MODE_FIXED_DECAY:
            decay_e = cfg.decay
        elif cfg.mode == MODE_STL:
            decay_e = adapted_decay(cfg.decay, v_reg)
        else:
            decay_e = adapted_decay(cfg.decay, 0.5 * (v_reg + v_cls))

        for batch in train_batches:
            out, loss_r, loss_c, rank_batch = _batch_losses(params, batch, loss_cfg,
                                                            n_classes, need_cls)
            if not np.isfinite(loss_r.data).all() or (need_cls and not np.isfinite(loss_c.data).all()):
                raise TrainingError(f"training diverged at epoch {epoch}, day index {batch.t}")
            if epoch == 1 and rank_batch is not None:
                k_counts[rank_batch.k] = k_counts.get(rank_batch.k, 0) + 1

            if cfg.mode == MODE_EW:
                joint = loss_r + loss_c
                grads = gradients(joint, theta + psi_r + psi_c)
                g_theta = _flatten(grads[: len(theta)])
                g_reg = _flatten(grads[len(theta): len(theta) + len(psi_r)])
                g_cls = _flatten(grads[len(theta) + len(psi_r):])
                _assign_flat(theta, opt_theta.step(_flat_data(theta), g_theta, decay_e))
                _assign_flat(psi_r, opt_reg.step(_flat_data(psi_r), g_reg, decay_e))
                _assign_flat(psi_c, opt_cls.step(_flat_data(psi_c), g_cls, decay_e))
                continue

            grads_r = log_grad(loss_r, theta + psi_r)
            g_r_theta = _flatten(grads_r[: len(theta)])
            g_r_psi = _flatten(grads_r[len(theta):])
            ema_reg = ema_update(ema_reg, g_r_theta, beta_reg_e)
            if need_cls:
                grads_c = log_grad(loss_c, theta + psi_c)
                g_c_theta = _flatten(grads_c[: len(theta)])
                g_c_psi = _flatten(grads_c[len(theta):])
                ema_cls = ema_update(ema_cls, g_c_theta, beta_cls_e)
                g_tilde = balance_gradients(ema_reg, ema_cls)
            else:
                g_tilde = ema_reg
            _assign_flat(theta, opt_theta.step(_flat_data(theta), g_tilde, decay_e))
            _assign_flat(psi_r, opt_reg.step(_flat_data(psi_r), g_r_psi, decay_e))
            if need_cls:
                _assign_flat(psi_c, opt_cls.step(_flat_data(psi_c), g_c_psi, decay_e))

        # epoch-end evaluation on both splits
        tr_r, tr_c, tr_ic, tr_ric = _split_metrics(params, train_batches, loss_cfg,
                                                   n_classes, need_cls)
        va_r, va_c, va_ic, va_ric = _split_metrics(params, valid_batches, loss_cfg,
                                                   n_classes, need_cls)
        hist[("train", "r")].append(tr_r)
        hist[("valid", "r")].append(va_r)
        if need_cls:
            hist[("train", "c")].append(tr_c)
            hist[("valid", "c")].append(va_c)

        log.append(EpochRecord(epoch, "train", "regression", tr_r, v_reg, beta_reg_e,
                               decay_e, tr_ic, tr_ric))
        if need_cls:
            log.append(EpochRecord(epoch, "train", "classification", tr_c, v_cls, beta_cls_e,
                                   decay_e, tr_ic, tr_ric))
        log.append(EpochRecord(epoch, "valid", "regression", va_r, v_reg, beta_reg_e,
                               decay_e, va_ic, va_ric))
        if need_cls:
            log.append(EpochRecord(epoch, "valid", "classification", va_c, v_cls, beta_cls_e,
                                   decay_e, va_ic, va_ric))

        # the converge rate is always computed (it documents overfitting even in
        # ew mode) but only the adaptive modes feed it back into beta/decay
        if valid_batches:
            v_reg = converge_ratio(hist[("train", "r")], hist[("valid", "r")],
                                   epoch + 1, cfg.loss_window)
            if need_cls:
                v_cls = converge_ratio(hist[("train", "c")], hist[("valid", "c")],
                                       epoch + 1, cfg.loss_window)

        score = va_ic
        if np.isfinite(score) and score > best_ic + 1e-12:
            best_ic = score
            best_epoch = epoch
            best_snapshot = params.copy_data()
            stale = 0
        else:
            if best_epoch == 0:  # keep something sensible even without a valid IC
                best_epoch = epoch
                best_snapshot = params.copy_data()
            stale += 1
        if stale >= cfg.patience:
            break

    params.load_data(best_snapshot)
    return FitResult(params=params, best_epoch=best_epoch, epochs_run=epochs_run,
                     epoch_log=log, k_counts=dict(sorted(k_counts.items())))
