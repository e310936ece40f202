"""Price momentum lines and their 5-level trend classification.

The momentum at day T with gap g is ``close[T] - close[T - g]``. A line is the
trailing sequence of ``length + 1`` momentum values ending at an anchor day.
Lines are bucketed into five trend levels used as the classification target:

    4 Bounce    starts negative, ends positive
    3 Positive  every value above the dead zone
    2 Volatile  oscillates around zero (everything else, incl. all-zero)
    1 Negative  every value below the dead zone
    0 Sink      starts positive, ends negative

"Starts"/"ends" refer to the first/last value whose sign survives the dead
zone. The dead zone defaults to 0.01 x the per-date population std of the
cross-section's line values, so flat noise lands in Volatile.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ReturnLabel, StockPanel
from .errors import ContractError

LEVEL_SINK, LEVEL_NEGATIVE, LEVEL_VOLATILE, LEVEL_POSITIVE, LEVEL_BOUNCE = 0, 1, 2, 3, 4
N_LEVELS = 5
UNLABELED = -1


@dataclass(frozen=True)
class MomentumConfig:
    gap: int = 4                     # days between the two closes in one momentum value
    length: int = 6                  # line has length + 1 values
    dead_zone: float | None = None   # absolute |value| treated as zero; None = scaled rule
    dead_zone_scale: float = 0.01    # scale vs per-date std when dead_zone is None
    anchor_offset: int = 2           # line for sample date t ends at t + anchor_offset

    def __post_init__(self):
        if self.gap < 1 or self.length < 1:
            raise ContractError("momentum gap and length must be >= 1")
        if self.dead_zone is not None and self.dead_zone < 0:
            raise ContractError("dead_zone must be >= 0")
        if self.anchor_offset < 0:
            raise ContractError("anchor_offset must be >= 0")


def momentum_value(close: np.ndarray, t: int, gap: int) -> float:
    """close[t] - close[t - gap] on a single price series."""
    if t - gap < 0 or t >= len(close):
        raise ContractError(f"momentum at index {t} with gap {gap} is out of range")
    return float(close[t] - close[t - gap])


def momentum_line(close: np.ndarray, anchor: int, cfg: MomentumConfig) -> np.ndarray:
    """The length+1 momentum values ending at ``anchor``."""
    lo = anchor - cfg.length
    if lo - cfg.gap < 0 or anchor >= len(close):
        raise ContractError(f"momentum line at anchor {anchor} is out of range")
    idx = np.arange(lo, anchor + 1)
    return close[idx] - close[idx - cfg.gap]


def classify_line(values: np.ndarray, dead_zone: float = 0.0) -> int:
    """Map one momentum line to its trend level via its dead-zoned sign pattern."""
    values = np.asarray(values, dtype=np.float64)
    signs = np.where(values > dead_zone, 1, np.where(values < -dead_zone, -1, 0))
    nonzero = signs[signs != 0]
    if nonzero.size == 0:
        return LEVEL_VOLATILE
    if np.all(signs == 1):
        return LEVEL_POSITIVE
    if np.all(signs == -1):
        return LEVEL_NEGATIVE
    if nonzero[0] == -1 and nonzero[-1] == 1:
        return LEVEL_BOUNCE
    if nonzero[0] == 1 and nonzero[-1] == -1:
        return LEVEL_SINK
    return LEVEL_VOLATILE


def label_dataset(panel: StockPanel, cfg: MomentumConfig) -> np.ndarray:
    """Momentum level per (date, ticker); -1 where history/future is missing.

    The line for sample date t is anchored ``anchor_offset`` days ahead, so the
    label looks at the prices immediately after t (the trend being predicted).
    """
    t_total, n = panel.n_dates, panel.n_tickers
    labels = np.full((t_total, n), UNLABELED, dtype=np.int64)
    span = cfg.length + cfg.gap
    for t in range(t_total):
        anchor = t + cfg.anchor_offset
        lo = anchor - span
        if lo < 0 or anchor >= t_total:
            continue
        ok = panel.valid[lo:anchor + 1].all(axis=0) & panel.valid[t]
        if not ok.any():
            continue
        closes = panel.close[lo:anchor + 1, :]
        # rows are the length+1 line values m[anchor-length..anchor] per ticker
        lines = closes[cfg.gap:, :] - closes[: closes.shape[0] - cfg.gap, :]
        eps = cfg.dead_zone
        if eps is None:
            pool = lines[:, ok]
            sd = float(pool.std()) if pool.size else 0.0
            eps = cfg.dead_zone_scale * sd
        for i in np.flatnonzero(ok):
            labels[t, i] = classify_line(lines[:, i], eps)
    return labels


def rise_fall_label(labels: ReturnLabel) -> np.ndarray:
    """Binary up/flat-down target from return labels; -1 where undefined.

    Zero return counts as "fall" so class 1 means strictly profitable.
    """
    y = labels.y
    out = np.full(y.shape, UNLABELED, dtype=np.int64)
    defined = np.isfinite(y)
    out[defined] = (y[defined] > 0).astype(np.int64)
    return out
