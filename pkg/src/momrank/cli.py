"""Command-line entry points: label, train, evaluate, backtest, reproduce.

Every artifact embeds the resolved configuration (and therefore the seed) as
``# key = value`` header lines in CSVs or a ``config`` object in JSON, so any
output is re-derivable from its own file. Exit codes: 0 success, 1 config
error, 2 runtime error. Nothing is written until the config has validated.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .backtest import cumulative_return, run_topn
from .config import ExperimentConfig, build_config, load_config, to_flat
from .data import StockPanel, fraction_split_spec, gen_synthetic, load_csv, normalize_features, split
from .data import SplitSpec
from .errors import ConfigError, ContractError, MomrankError
from .metrics import evaluate_predictions
from .model import load_checkpoint, predict_panel, save_checkpoint
from .momentum import UNLABELED, label_dataset
from .training import class_labels_for, fit

REPRODUCE_CELLS: list[tuple[str, dict[str, str]]] = [
    ("full", {}),
    ("equal_weight", {"train.mode": "ew"}),
    ("single_task", {"train.mode": "stl"}),
    ("rise_fall", {"train.task": "rise_fall"}),
    ("pairwise", {"loss.ranking": "pairwise"}),
    ("fixed_k", {}),  # loss.fixed_k filled from backtest.top_n at run time
    ("fixed_beta", {"train.mode": "fixed_beta"}),
    ("fixed_decay", {"train.mode": "fixed_decay"}),
]


def _fmt(value) -> str:
    if isinstance(value, float):  # incl. numpy floats; repr of builtin float roundtrips
        return repr(float(value))
    return str(value)


def _write_csv(path, provenance: dict[str, str], header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, value in provenance.items():
            fh.write(f"# {key} = {value}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _prepare_panel(cfg: ExperimentConfig) -> StockPanel:
    if cfg.data.source == "csv":
        panel = load_csv(cfg.data.csv_path)
    else:
        panel = gen_synthetic(cfg.data.n_dates, cfg.data.n_tickers, cfg.data.signal_strength,
                              seed=cfg.seed, n_features=cfg.data.n_features,
                              shift_after=cfg.data.shift_after,
                              shifted_signal_strength=cfg.data.shifted_signal_strength)
    if cfg.data.normalize:
        panel = normalize_features(panel)
    return panel


def _split_panels(cfg: ExperimentConfig, panel: StockPanel):
    if cfg.split.train is not None:
        spec = SplitSpec(cfg.split.train, cfg.split.valid, cfg.split.test)
    else:
        spec = fraction_split_spec(panel, cfg.split.train_frac, cfg.split.valid_frac)
    return split(panel, spec)


def _pick_split(cfg: ExperimentConfig, panel: StockPanel, name: str) -> StockPanel:
    train_p, valid_p, test_p = _split_panels(cfg, panel)
    return {"train": train_p, "valid": valid_p, "test": test_p}[name]


def _load_params(path):
    if not path:
        raise ContractError("a --checkpoint path is required")
    if not os.path.exists(path):
        raise ContractError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_label(cfg: ExperimentConfig, out_dir: str) -> None:
    panel = _prepare_panel(cfg)
    labels = label_dataset(panel, cfg.momentum)
    rows = []
    for t in range(panel.n_dates):
        for i in range(panel.n_tickers):
            if labels[t, i] != UNLABELED:
                rows.append((panel.dates[t], panel.tickers[i], int(labels[t, i])))
    _write_csv(os.path.join(out_dir, "labels.csv"), to_flat(cfg),
               ["date", "ticker", "level"], rows)


def cmd_train(cfg: ExperimentConfig, out_dir: str) -> None:
    panel = _prepare_panel(cfg)
    train_p, valid_p, _ = _split_panels(cfg, panel)
    result = fit(train_p, valid_p, cfg.momentum, cfg.loss, cfg.train, cfg.seed)
    flat = to_flat(cfg)
    save_checkpoint(os.path.join(out_dir, "checkpoint.json"), result.params,
                    extra={"config": flat, "best_epoch": result.best_epoch,
                           "epochs_run": result.epochs_run,
                           "k_counts": {str(k): c for k, c in result.k_counts.items()}})
    _write_csv(os.path.join(out_dir, "epochs.csv"), flat,
               ["epoch", "split", "task", "loss", "V", "beta", "decay", "ic", "rank_ic"],
               [(r.epoch, r.split, r.task, r.loss, r.converge, r.beta, r.decay, r.ic, r.rank_ic)
                for r in result.epoch_log])
    _write_csv(os.path.join(out_dir, "k_hist.csv"), flat, ["k", "count"],
               sorted(result.k_counts.items()))


def cmd_evaluate(cfg: ExperimentConfig, out_dir: str, checkpoint: str, split_name: str) -> None:
    params, _ = _load_params(checkpoint)
    panel = _prepare_panel(cfg)
    eval_panel = _pick_split(cfg, panel, split_name)
    scores = predict_panel(params, eval_panel)
    labels = class_labels_for(eval_panel, cfg.train.task, cfg.momentum)
    report = evaluate_predictions(scores, eval_panel, precision_ns=cfg.eval.precision_ns,
                                  class_labels=labels, loss_cfg=cfg.loss)
    _write_json(os.path.join(out_dir, "report.json"),
                {"config": to_flat(cfg), "split": split_name, "report": report.to_dict()})
    _write_csv(os.path.join(out_dir, "k_hist.csv"), to_flat(cfg), ["k", "count"],
               sorted(report.k_histogram.items()))


def cmd_backtest(cfg: ExperimentConfig, out_dir: str, checkpoint: str, split_name: str) -> None:
    params, _ = _load_params(checkpoint)
    panel = _prepare_panel(cfg)
    bt_panel = _pick_split(cfg, panel, split_name)
    scores = predict_panel(params, bt_panel)
    ledger = run_topn(bt_panel, scores, cfg.eval.top_n, cfg.eval.cost_bps)
    provenance = dict(to_flat(cfg))
    provenance["cumulative_return_pct"] = repr(cumulative_return(ledger))
    _write_csv(os.path.join(out_dir, "ledger.csv"), provenance,
               ["date", "balance", "daily_return"],
               [(d, b, r) for d, b, r in zip(ledger.dates, ledger.balance, ledger.daily_return)])


def cmd_reproduce(cfg: ExperimentConfig, out_dir: str) -> None:
    """Train and evaluate every ablation variant on the configured data."""
    base_flat = to_flat(cfg)
    header = ["variant", "ic", "rank_ic", "ic_std_e3", "rank_ic_std_e3"]
    precision_cols = [f"precision_at_{n}" for n in cfg.eval.precision_ns]
    header += precision_cols + ["cum_return_pct", "best_epoch", "epochs_run"]
    rows = []
    for name, delta in REPRODUCE_CELLS:
        overrides = dict(delta)
        if name == "fixed_k":
            overrides["loss.fixed_k"] = str(cfg.eval.top_n)
        flat = dict(base_flat)
        flat.update(overrides)
        cell_cfg = build_config(flat)
        cell_dir = os.path.join(out_dir, name)
        os.makedirs(cell_dir, exist_ok=True)
        panel = _prepare_panel(cell_cfg)
        train_p, valid_p, test_p = _split_panels(cell_cfg, panel)
        result = fit(train_p, valid_p, cell_cfg.momentum, cell_cfg.loss, cell_cfg.train,
                     cell_cfg.seed)
        save_checkpoint(os.path.join(cell_dir, "checkpoint.json"), result.params,
                        extra={"config": to_flat(cell_cfg), "best_epoch": result.best_epoch})
        scores = predict_panel(result.params, test_p)
        labels = class_labels_for(test_p, cell_cfg.train.task, cell_cfg.momentum)
        report = evaluate_predictions(scores, test_p, precision_ns=cell_cfg.eval.precision_ns,
                                      class_labels=labels, loss_cfg=cell_cfg.loss)
        ledger = run_topn(test_p, scores, cell_cfg.eval.top_n, cell_cfg.eval.cost_bps)
        row = [name, report.ic, report.rank_ic, report.ic_std, report.rank_ic_std]
        row += [report.precision_at.get(n, float("nan")) for n in cell_cfg.eval.precision_ns]
        row += [cumulative_return(ledger), result.best_epoch, result.epochs_run]
        rows.append(row)
    _write_csv(os.path.join(out_dir, "comparison.csv"), base_flat, header, rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="momrank",
                                     description="Momentum-labeled multi-task stock ranking")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_ckpt in (("label", False), ("train", False), ("evaluate", True),
                             ("backtest", True), ("reproduce", False)):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out-dir", default="momrank_out")
        if needs_ckpt:
            p.add_argument("--checkpoint", required=False, default=None)
            p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        if args.command == "label":
            cmd_label(cfg, args.out_dir)
        elif args.command == "train":
            cmd_train(cfg, args.out_dir)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.out_dir, args.checkpoint, args.split)
        elif args.command == "backtest":
            cmd_backtest(cfg, args.out_dir, args.checkpoint, args.split)
        elif args.command == "reproduce":
            cmd_reproduce(cfg, args.out_dir)
    except (MomrankError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
