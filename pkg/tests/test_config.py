import pytest

from momrank.config import ExperimentConfig, build_config, load_config, parse_kv_text, to_flat
from momrank.errors import ConfigError


def test_defaults_match_reference_settings():
    cfg = ExperimentConfig()
    assert cfg.momentum.gap == 4 and cfg.momentum.length == 6
    assert cfg.loss.threshold_frac == pytest.approx(0.20)
    assert cfg.train.lr == pytest.approx(2e-4)
    assert cfg.train.epochs == 100
    assert cfg.train.beta == pytest.approx(0.5)
    assert cfg.train.decay == pytest.approx(1e-3)
    assert cfg.train.loss_window == 6
    assert cfg.train.patience == 30
    assert cfg.eval.top_n == 50


def test_parse_kv_text_comments_and_blanks():
    raw = parse_kv_text("""
# experiment
seed = 9

train.lr = 1e-3  # inline comment
""")
    assert raw == {"seed": "9", "train.lr": "1e-3"}


def test_parse_kv_text_malformed_line():
    with pytest.raises(ConfigError):
        parse_kv_text("just words")


def test_build_config_typed_values():
    cfg = build_config({"seed": "3", "train.hidden": "8,4", "loss.fixed_k": "7",
                        "momentum.dead_zone": "none", "data.normalize": "false",
                        "split.train": "2020-01-01:2020-06-30",
                        "split.valid": "2020-07-01:2020-08-31",
                        "split.test": "2020-09-01:2020-12-31"})
    assert cfg.seed == 3
    assert cfg.train.hidden == (8, 4)
    assert cfg.loss.fixed_k == 7
    assert cfg.momentum.dead_zone is None
    assert cfg.data.normalize is False
    assert cfg.split.train == ("2020-01-01", "2020-06-30")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as exc:
        build_config({"train.lrr": "1"})
    assert "train.lrr" in str(exc.value)


def test_bad_value_names_key():
    with pytest.raises(ConfigError) as exc:
        build_config({"train.epochs": "many"})
    assert "train.epochs" in str(exc.value)


def test_contract_violation_becomes_config_error():
    with pytest.raises(ConfigError):
        build_config({"train.beta": "1.5"})
    with pytest.raises(ConfigError):
        build_config({"data.source": "csv"})  # csv_path missing


def test_load_config_file_and_overrides(tmp_path):
    f = tmp_path / "exp.cfg"
    f.write_text("seed = 5\ntrain.epochs = 10\n", encoding="utf-8")
    cfg = load_config(str(f), overrides=["train.epochs=20", "train.lr=1e-3"])
    assert cfg.seed == 5
    assert cfg.train.epochs == 20
    assert cfg.train.lr == pytest.approx(1e-3)


def test_to_flat_roundtrips():
    cfg = build_config({"seed": "13", "train.hidden": "8,4", "loss.ranking": "pairwise",
                        "data.shift_after": "100"})
    flat = to_flat(cfg)
    rebuilt = build_config(flat)
    assert rebuilt == cfg
    assert flat["seed"] == "13"
    assert flat["train.hidden"] == "8,4"
