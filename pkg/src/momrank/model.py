"""Two-head network: shared trunk plus regression and classification heads.

The trunk embeds one stock's feature window; a linear head predicts the
next-day return and another produces the class logits. Trunk variants: an MLP
over the flattened window (default) or a small recurrent net stepped over the
window. Parameters are partitioned into three disjoint groups (trunk,
regression head, classification head) so the trainer can route gradients per
task.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor
from .data import StockPanel
from .errors import ContractError, NumericError

TRUNK_MLP, TRUNK_RNN = "mlp", "rnn"


@dataclass(frozen=True)
class Architecture:
    window: int = 20
    n_features: int = 4
    hidden: tuple[int, int] = (64, 64)
    trunk: str = TRUNK_MLP
    n_classes: int = 5

    def __post_init__(self):
        if self.window < 1 or self.n_features < 1:
            raise ContractError("window and n_features must be >= 1")
        if any(h < 1 for h in self.hidden):
            raise ContractError(f"zero-width layer in hidden sizes {self.hidden}")
        if self.trunk not in (TRUNK_MLP, TRUNK_RNN):
            raise ContractError(f"unknown trunk kind {self.trunk!r}")
        if self.n_classes < 2:
            raise ContractError("need at least 2 classes")


@dataclass
class BackboneParams:
    arch: Architecture
    trunk: dict[str, Tensor]
    reg_head: dict[str, Tensor]
    cls_head: dict[str, Tensor]

    def trunk_tensors(self) -> list[Tensor]:
        return list(self.trunk.values())

    def reg_tensors(self) -> list[Tensor]:
        return list(self.reg_head.values())

    def cls_tensors(self) -> list[Tensor]:
        return list(self.cls_head.values())

    def all_named(self) -> dict[str, Tensor]:
        out = {}
        for group, tensors in (("trunk", self.trunk), ("reg_head", self.reg_head),
                               ("cls_head", self.cls_head)):
            for name, tensor in tensors.items():
                out[f"{group}.{name}"] = tensor
        return out

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.all_named().values())

    def copy_data(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.all_named().items()}

    def load_data(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, tensor in self.all_named().items():
            tensor.data = snapshot[name].copy()
            tensor.grad = np.zeros_like(tensor.data)


@dataclass
class BatchOutput:
    pred_return: Tensor   # (n,)
    class_logits: Tensor  # (n, n_classes)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(arch: Architecture, seed: int) -> BackboneParams:
    """Deterministic parameter initialization from the seed."""
    rng = np.random.Generator(np.random.Philox(seed))
    h0, h1 = arch.hidden
    trunk: dict[str, Tensor] = {}
    if arch.trunk == TRUNK_MLP:
        d_in = arch.window * arch.n_features
        trunk["w0"] = Tensor(_glorot(rng, d_in, h0))
        trunk["b0"] = Tensor(np.zeros(h0))
    else:
        trunk["wx"] = Tensor(_glorot(rng, arch.n_features, h0))
        trunk["wh"] = Tensor(_glorot(rng, h0, h0))
        trunk["b_rec"] = Tensor(np.zeros(h0))
    trunk["w1"] = Tensor(_glorot(rng, h0, h1))
    trunk["b1"] = Tensor(np.zeros(h1))
    reg_head = {"w": Tensor(_glorot(rng, h1, 1)), "b": Tensor(np.zeros(1))}
    cls_head = {"w": Tensor(_glorot(rng, h1, arch.n_classes)),
                "b": Tensor(np.zeros(arch.n_classes))}
    return BackboneParams(arch, trunk, reg_head, cls_head)


def forward(params: BackboneParams, day_features: np.ndarray) -> BatchOutput:
    """Score one trading day's cross-section.

    ``day_features`` is [stocks, window, features]; each stock is embedded
    independently, so outputs are permutation-equivariant in the stock axis.
    """
    arch = params.arch
    feats = np.asarray(day_features, dtype=np.float64)
    if feats.ndim != 3 or feats.shape[1] != arch.window or feats.shape[2] != arch.n_features:
        raise ContractError(
            f"day features must be [stocks, {arch.window}, {arch.n_features}], got {feats.shape}")
    if not np.isfinite(feats).all():
        rows = np.flatnonzero(~np.isfinite(feats).all(axis=(1, 2)))
        raise NumericError(f"non-finite features for stock rows {rows.tolist()}")
    n = feats.shape[0]
    if arch.trunk == TRUNK_MLP:
        x = Tensor(feats.reshape(n, arch.window * arch.n_features))
        h = (x @ params.trunk["w0"] + params.trunk["b0"]).tanh()
    else:
        h = Tensor(np.zeros((n, arch.hidden[0])))
        for t in range(arch.window):
            step = Tensor(feats[:, t, :])
            h = (step @ params.trunk["wx"] + h @ params.trunk["wh"] + params.trunk["b_rec"]).tanh()
    h = (h @ params.trunk["w1"] + params.trunk["b1"]).tanh()
    pred = (h @ params.reg_head["w"] + params.reg_head["b"]).reshape(n)
    logits = h @ params.cls_head["w"] + params.cls_head["b"]
    return BatchOutput(pred_return=pred, class_logits=logits)


def window_ok(panel: StockPanel, window: int) -> np.ndarray:
    """[T, N] mask: ticker has a full valid feature window ending at t."""
    t_total, n = panel.valid.shape
    ok = np.zeros((t_total, n), dtype=bool)
    for t in range(window - 1, t_total):
        ok[t] = panel.valid[t - window + 1: t + 1].all(axis=0)
    return ok


def day_window(panel: StockPanel, t: int, window: int, rows: np.ndarray) -> np.ndarray:
    """Feature windows [len(rows), window, F] for the given ticker rows at date t."""
    return panel.features[t - window + 1: t + 1, rows, :].transpose(1, 0, 2)


def predict_panel(params: BackboneParams, panel: StockPanel) -> np.ndarray:
    """Regression-head scores for every scoreable cell; NaN elsewhere."""
    arch = params.arch
    scores = np.full((panel.n_dates, panel.n_tickers), np.nan)
    ok = window_ok(panel, arch.window)
    for t in range(arch.window - 1, panel.n_dates):
        rows = np.flatnonzero(ok[t])
        if rows.size == 0:
            continue
        out = forward(params, day_window(panel, t, arch.window, rows))
        scores[t, rows] = out.pred_return.data
    return scores


def save_checkpoint(path, params: BackboneParams, extra: dict | None = None) -> None:
    """Write parameters as JSON named arrays with shapes (portable, diffable)."""
    blob = {
        "format": "momrank-checkpoint-v1",
        "arch": asdict(params.arch),
        "params": {name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
                   for name, t in params.all_named().items()},
        "extra": extra or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[BackboneParams, dict]:
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format") != "momrank-checkpoint-v1":
        raise ContractError(f"{path}: not a momrank checkpoint")
    arch_kw = dict(blob["arch"])
    arch_kw["hidden"] = tuple(arch_kw["hidden"])
    arch = Architecture(**arch_kw)
    params = init_params(arch, seed=0)
    named = params.all_named()
    if set(named) != set(blob["params"]):
        raise ContractError(f"{path}: parameter names do not match architecture")
    for name, spec in blob["params"].items():
        arr = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        named[name].data = arr
        named[name].grad = np.zeros_like(arr)
    return params, blob.get("extra", {})
