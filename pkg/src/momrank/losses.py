"""Objective functions: MSE, cross-entropy, smooth list-wise NDCG, pair-wise hinge.

The ranking term treats each trading day as one list. Item ranks are made
differentiable by replacing the pairwise comparison indicator with a sigmoid,
truncation depth k is chosen per day by accumulating whole label groups from
the top level down until a floor is met (so a level is never split), and the
final loss is ``exp(-NDCG@k)``. The classification objective averages
cross-entropy and that ranking loss 50/50.

Ranking scores derived from class probabilities (the expected level) are
multiplied by a fixed scale so that confidently separated classes land in the
regime where smooth ranks are numerically close to exact ranks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ContractError

GAIN_STANDARD = "standard"   # 2^w - 1: zero gain at level 0
GAIN_SHIFTED = "shifted"     # 2^(w-1): literal alternative reading
RANK_NDCG, RANK_PAIRWISE, RANK_NONE = "ndcg", "pairwise", "none"
SCORES_CLS, SCORES_REG = "classification", "regression"

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class RankLossConfig:
    threshold_frac: float = 0.2        # k floor as a fraction of the day's pool
    fixed_k: int | None = None         # pin k instead of the adaptive rule
    gain: str = GAIN_STANDARD
    ce_weight: float = 0.5
    rank_weight: float = 0.5
    ranking: str = RANK_NDCG
    score_source: str = SCORES_CLS     # which head feeds the ranking term
    score_scale: float = 10.0          # spread applied to expected-level scores

    def __post_init__(self):
        if not 0.0 < self.threshold_frac <= 1.0:
            raise ContractError("threshold_frac must lie in (0, 1]")
        if self.fixed_k is not None and self.fixed_k < 1:
            raise ContractError("fixed_k must be >= 1")
        if self.gain not in (GAIN_STANDARD, GAIN_SHIFTED):
            raise ContractError(f"unknown gain variant {self.gain!r}")
        if self.ranking not in (RANK_NDCG, RANK_PAIRWISE, RANK_NONE):
            raise ContractError(f"unknown ranking term {self.ranking!r}")
        if self.score_source not in (SCORES_CLS, SCORES_REG):
            raise ContractError(f"unknown score source {self.score_source!r}")
        if self.score_scale <= 0:
            raise ContractError("score_scale must be positive")


@dataclass
class RankBatch:
    """One day's list: ranking scores, label gains, and the truncation depth."""

    scores: Tensor            # (n,) differentiable ranking scores
    gains: np.ndarray         # (n,) integer levels
    group_sizes: list[int]    # counts per level, highest level first
    threshold: int
    k: int


@dataclass(frozen=True)
class LossPair:
    regression: float
    classification: float


def adaptive_k(group_sizes, threshold: int) -> int:
    """Accumulate whole level groups from the top until the floor is met.

    Returns the full pool size when every group is needed; never splits a
    group. ``threshold`` is clamped up to 1.
    """
    sizes = [int(s) for s in group_sizes]
    if any(s < 0 for s in sizes):
        raise ContractError("group sizes must be non-negative")
    n = sum(sizes)
    if n == 0:
        raise ContractError("empty batch: no items in any group")
    threshold = max(1, int(threshold))
    k = 0
    for size in sizes:
        k += size
        if k >= threshold:
            return k
    return n


def make_rank_batch(scores: Tensor, levels: np.ndarray, n_levels: int,
                    cfg: RankLossConfig) -> RankBatch:
    levels = np.asarray(levels)
    n = levels.size
    if scores.data.shape != (n,):
        raise ContractError(f"scores shape {scores.data.shape} does not match {n} labels")
    group_sizes = [int((levels == lvl).sum()) for lvl in range(n_levels - 1, -1, -1)]
    threshold = max(1, math.ceil(cfg.threshold_frac * n))
    if cfg.fixed_k is not None:
        k = min(cfg.fixed_k, n)
    else:
        k = adaptive_k(group_sizes, threshold)
    return RankBatch(scores=scores, gains=levels.astype(np.int64),
                     group_sizes=group_sizes, threshold=threshold, k=k)


def approx_rank(scores: Tensor) -> Tensor:
    """Smooth rank of each item: 1 + sum of sigmoid(score_j - score_i) over j != i.

    Always sums to n(n+1)/2 because the indicator and its mirror add to one.
    """
    n = scores.data.shape[0] if scores.data.ndim else 1
    if scores.data.ndim != 1:
        raise ContractError(f"scores must be a vector, got shape {scores.data.shape}")
    col = scores.reshape(n, 1)
    row = scores.reshape(1, n)
    pair = (row - col).sigmoid()           # (i, j) -> sigmoid(f_j - f_i)
    off_diag = 1.0 - np.eye(n)
    return (pair * off_diag).sum(axis=1) + 1.0


def gain_values(levels: np.ndarray, gain: str = GAIN_STANDARD) -> np.ndarray:
    levels = np.asarray(levels, dtype=np.float64)
    if gain == GAIN_STANDARD:
        return np.exp2(levels) - 1.0
    if gain == GAIN_SHIFTED:
        return np.exp2(levels - 1.0)
    raise ContractError(f"unknown gain variant {gain!r}")


def dcg_at_k(ranks, levels: np.ndarray, k: int, gain: str = GAIN_STANDARD):
    """Discounted cumulative gain truncated at depth k.

    ``ranks`` may be exact (numpy, 1-based integers) or smooth (Tensor);
    membership is rank <= k + 0.5 either way, and with smooth ranks the
    gradient flows through the discount of the included items.
    """
    gains = gain_values(levels, gain)
    if isinstance(ranks, Tensor):
        member = (ranks.data <= k + 0.5).astype(np.float64)
        discount = (ranks + 1.0).log() / _LN2
        return (Tensor(gains * member) / discount).sum()
    ranks = np.asarray(ranks, dtype=np.float64)
    member = ranks <= k + 0.5
    return float(np.sum(gains[member] / np.log2(1.0 + ranks[member])))


def ideal_dcg_at_k(levels: np.ndarray, k: int, gain: str = GAIN_STANDARD) -> float:
    """DCG of the gain-sorted ordering with exact integer ranks."""
    gains = np.sort(gain_values(levels, gain))[::-1]
    ranks = np.arange(1, gains.size + 1, dtype=np.float64)
    top = ranks <= k + 0.5
    return float(np.sum(gains[top] / np.log2(1.0 + ranks[top])))


def exact_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks by descending score; ties broken by original index."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    ranks[order] = np.arange(1, scores.size + 1)
    return ranks


def exact_ndcg_at_k(scores: np.ndarray, levels: np.ndarray, k: int,
                    gain: str = GAIN_STANDARD) -> float:
    """Non-differentiable NDCG@k on plain arrays (evaluation use)."""
    levels = np.asarray(levels)
    if levels.size and levels.max() == levels.min():
        return 1.0
    ideal = ideal_dcg_at_k(levels, k, gain)
    if ideal <= 0.0:
        return 1.0
    return dcg_at_k(exact_ranks(scores), levels, k, gain) / ideal


def approx_ndcg_at_k(batch: RankBatch, gain: str = GAIN_STANDARD) -> Tensor:
    """Smooth NDCG@k of the batch's scores against its label gains.

    Days whose gains are all equal carry no ranking information; they are
    defined as a perfect 1 with zero gradient.
    """
    levels = batch.gains
    if levels.size == 0:
        raise ContractError("empty batch")
    if levels.max() == levels.min():
        return Tensor(1.0)
    ideal = ideal_dcg_at_k(levels, batch.k, gain)
    if ideal <= 0.0:
        return Tensor(1.0)
    smooth = dcg_at_k(approx_rank(batch.scores), levels, batch.k, gain)
    return smooth / ideal


def ndcg_loss(batch: RankBatch, gain: str = GAIN_STANDARD) -> Tensor:
    """exp(-NDCG@k): strictly decreasing in the NDCG value."""
    return (-approx_ndcg_at_k(batch, gain)).exp()


def mse_loss(pred: Tensor, y: np.ndarray) -> Tensor:
    y = np.asarray(y, dtype=np.float64)
    if pred.data.shape != y.shape:
        raise ContractError(f"pred shape {pred.data.shape} does not match y shape {y.shape}")
    diff = pred - Tensor(y)
    return (diff * diff).mean()


def log_softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - shifted.exp().sum(axis=1, keepdims=True).log()


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    n, n_classes = logits.data.shape
    if labels.shape != (n,):
        raise ContractError(f"labels shape {labels.shape} does not match {n} rows")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ContractError(f"labels must lie in [0, {n_classes - 1}]")
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    picked = (log_softmax(logits) * onehot).sum(axis=1)
    return -picked.mean()


def expected_level(logits: Tensor) -> Tensor:
    """Per-row expectation of the class index under softmax probabilities."""
    probs = log_softmax(logits).exp()
    levels = np.arange(logits.data.shape[1], dtype=np.float64)
    return (probs * levels).sum(axis=1)


def pairwise_loss(scores: Tensor, target: np.ndarray) -> Tensor:
    """Hinge on discordant pairs: sum over i<j of max(0, -(f_i-f_j)(y_i-y_j)) / n^2."""
    target = np.asarray(target, dtype=np.float64)
    n = target.size
    if n < 2:
        raise ContractError("pairwise loss needs at least 2 items")
    if scores.data.shape != (n,):
        raise ContractError(f"scores shape {scores.data.shape} does not match {n} targets")
    score_diff = scores.reshape(n, 1) - scores.reshape(1, n)
    target_diff = target[:, None] - target[None, :]
    upper = np.triu(np.ones((n, n)), k=1)
    hinge = (-(score_diff * Tensor(target_diff))).relu()
    return (hinge * upper).sum() / float(n * n)


def classification_loss(logits: Tensor, labels: np.ndarray, batch: RankBatch,
                        cfg: RankLossConfig) -> Tensor:
    """Combined classification objective: weighted cross-entropy + ranking term."""
    ce = cross_entropy(logits, labels)
    if cfg.ranking == RANK_NONE:
        return ce
    if cfg.ranking == RANK_PAIRWISE:
        rank_term = pairwise_loss(batch.scores, batch.gains.astype(np.float64))
    else:
        rank_term = ndcg_loss(batch, cfg.gain)
    return ce * cfg.ce_weight + rank_term * cfg.rank_weight
