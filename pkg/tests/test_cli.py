import json

import numpy as np

from momrank.cli import main

FAST = ["data.n_dates=40", "data.n_tickers=8", "data.n_features=3",
        "data.signal_strength=0.9", "train.epochs=2", "train.window=2",
        "train.hidden=6,6", "momentum.gap=1", "momentum.length=1",
        "eval.precision_ns=2,4", "backtest.top_n=3", "train.lr=1e-3"]


def run(args, tmp_path, name, extra=None):
    out = tmp_path / name
    argv = list(args) + ["--out-dir", str(out)]
    for kv in FAST + (extra or []):
        argv += ["--set", kv]
    code = main(argv)
    return code, out


def read_csv_lines(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    header_idx = next(i for i, ln in enumerate(lines) if not ln.startswith("#"))
    return lines[:header_idx], lines[header_idx], lines[header_idx + 1:]


def test_label_emits_csv(tmp_path):
    code, out = run(["label"], tmp_path, "lab")
    assert code == 0
    comments, header, rows = read_csv_lines(out / "labels.csv")
    assert header == "date,ticker,level"
    assert any(line.startswith("# seed") for line in comments)
    assert rows, "some cells should be labeled"
    levels = {int(r.split(",")[2]) for r in rows}
    assert levels <= {0, 1, 2, 3, 4}


def test_train_then_evaluate_then_backtest(tmp_path):
    code, train_out = run(["train"], tmp_path, "tr")
    assert code == 0
    ckpt = train_out / "checkpoint.json"
    assert ckpt.exists()
    comments, header, rows = read_csv_lines(train_out / "epochs.csv")
    assert header == "epoch,split,task,loss,V,beta,decay,ic,rank_ic"
    assert len(rows) == 2 * 2 * 2  # epochs x splits x tasks
    _, khead, krows = read_csv_lines(train_out / "k_hist.csv")
    assert khead == "k,count"
    assert sum(int(r.split(",")[1]) for r in krows) > 0

    code, eval_out = run(["evaluate", "--checkpoint", str(ckpt), "--split", "test"],
                         tmp_path, "ev")
    assert code == 0
    report = json.loads((eval_out / "report.json").read_text(encoding="utf-8"))
    assert "config" in report and report["split"] == "test"
    assert -1.0 <= report["report"]["ic"] <= 1.0
    assert report["config"]["backtest.top_n"] == "3"

    code, bt_out = run(["backtest", "--checkpoint", str(ckpt)], tmp_path, "bt")
    assert code == 0
    comments, header, rows = read_csv_lines(bt_out / "ledger.csv")
    assert header == "date,balance,daily_return"
    assert rows
    balances = [float(r.split(",")[1]) for r in rows]
    rets = [float(r.split(",")[2]) for r in rows]
    recomputed = np.cumprod([1.0 + r for r in rets])
    np.testing.assert_allclose(balances, recomputed, rtol=1e-12)


def test_train_determinism_byte_identical(tmp_path):
    code_a, out_a = run(["train"], tmp_path, "d1")
    code_b, out_b = run(["train"], tmp_path, "d2")
    assert code_a == code_b == 0
    assert (out_a / "epochs.csv").read_bytes() == (out_b / "epochs.csv").read_bytes()
    assert (out_a / "checkpoint.json").read_bytes() == (out_b / "checkpoint.json").read_bytes()


def test_malformed_config_key_exits_1_no_artifacts(tmp_path):
    out = tmp_path / "bad"
    code = main(["train", "--set", "train.lrr=1", "--out-dir", str(out)])
    assert code == 1
    assert not out.exists()


def test_bad_config_file_exits_1(tmp_path):
    cfgfile = tmp_path / "c.cfg"
    cfgfile.write_text("train.epochs = soon\n", encoding="utf-8")
    code = main(["train", "--config", str(cfgfile), "--out-dir", str(tmp_path / "x")])
    assert code == 1


def test_missing_checkpoint_exits_2(tmp_path):
    code, _ = run(["evaluate", "--checkpoint", str(tmp_path / "nope.json")], tmp_path, "e2")
    assert code == 2


def test_csv_source_roundtrip(tmp_path):
    # label on synthetic, dump a tiny csv panel, then label from csv
    csv_path = tmp_path / "panel.csv"
    lines = ["date,ticker,close,f0"]
    import momrank.data as data
    panel = data.gen_synthetic(25, 5, 0.0, seed=1, n_features=1)
    for t, d in enumerate(panel.dates):
        for i, tick in enumerate(panel.tickers):
            lines.append(f"{d},{tick},{float(panel.close[t, i])!r},{float(panel.features[t, i, 0])!r}")
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    out = tmp_path / "fromcsv"
    code = main(["label", "--set", "data.source=csv", "--set", f"data.csv_path={csv_path}",
                 "--set", "momentum.gap=1", "--set", "momentum.length=1",
                 "--out-dir", str(out)])
    assert code == 0
    assert (out / "labels.csv").exists()


def test_reproduce_emits_comparison_table(tmp_path):
    code, out = run(["reproduce"], tmp_path, "rep", extra=["train.epochs=1"])
    assert code == 0
    comments, header, rows = read_csv_lines(out / "comparison.csv")
    cols = header.split(",")
    assert cols[:3] == ["variant", "ic", "rank_ic"]
    variants = [r.split(",")[0] for r in rows]
    assert variants == ["full", "equal_weight", "single_task", "rise_fall",
                        "pairwise", "fixed_k", "fixed_beta", "fixed_decay"]
    for name in ("full", "fixed_k"):
        assert (out / name / "checkpoint.json").exists()
