"""Config parsing, seed derivation, and manifest tests."""

import json

import pytest

from caslu.config import (
    ConfigError,
    TrainConfig,
    build_manifest,
    derive_seed,
    file_digest,
    load_config,
    parse_config_file,
    write_manifest,
)


def test_defaults_are_the_published_values():
    cfg = TrainConfig().validate()
    assert cfg.max_len_text == 40
    assert cfg.max_len_phonemes == 80
    assert cfg.batch_size == 64
    assert cfg.epochs == 20
    assert cfg.lr == 0.001
    assert cfg.hidden == 150
    assert cfg.seeds == (1, 2, 3)


def test_validate_rejects_nonpositive():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(lr=-0.1).validate()
    with pytest.raises(ConfigError):
        TrainConfig(seeds=()).validate()


def test_validate_rejects_unknown_variant_and_arch():
    with pytest.raises(ConfigError):
        TrainConfig(variant="FANCY").validate()
    with pytest.raises(ConfigError):
        TrainConfig(arch="transformer").validate()


def test_validate_rejects_bad_boundaries():
    with pytest.raises(ConfigError):
        TrainConfig(wer_boundaries=(0.6, 0.3)).validate()


def test_parse_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# comment\n"
        "epochs = 5\n"
        "lr = 0.01   # inline comment\n"
        "seeds = 7,8\n"
        "premask = false\n"
        "\n",
        encoding="utf-8")
    assert parse_config_file(path) == {
        "epochs": "5", "lr": "0.01", "seeds": "7,8", "premask": "false"}
    cfg = load_config(path)
    assert cfg.epochs == 5 and cfg.lr == 0.01
    assert cfg.seeds == (7, 8) and cfg.premask is False


def test_overrides_beat_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("epochs = 5\nhidden = 64\n", encoding="utf-8")
    cfg = load_config(path, overrides={"epochs": "9"})
    assert cfg.epochs == 9 and cfg.hidden == 64


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(overrides={"learning_rate": "0.1"})
    path = tmp_path / "run.cfg"
    path.write_text("epoch = 5\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_bad_value_and_bad_line(tmp_path):
    with pytest.raises(ConfigError):
        load_config(overrides={"epochs": "many"})
    path = tmp_path / "run.cfg"
    path.write_text("no equals sign here\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        parse_config_file(path)


def test_resolved_is_json_ready():
    out = TrainConfig().resolved()
    assert json.loads(json.dumps(out)) == out
    assert out["seeds"] == [1, 2, 3]
    assert out["wer_boundaries"] == [0.3, 0.6]


def test_derive_seed_streams():
    a = derive_seed(42, "data")
    assert a == derive_seed(42, "data")
    assert a != derive_seed(42, "init")
    assert a != derive_seed(43, "data")
    assert derive_seed(42, "shuffle", 0) != derive_seed(42, "shuffle", 1)
    assert 0 <= a < 2 ** 64


def test_manifest_is_deterministic(tmp_path):
    inp = tmp_path / "in.jsonl"
    inp.write_text('{"x": 1}\n', encoding="utf-8")
    cfg = TrainConfig().resolved()
    m1 = build_manifest(cfg, [1, 2], {"train": inp})
    m2 = build_manifest(cfg, [1, 2], {"train": inp})
    assert m1 == m2
    assert m1["inputs"]["train"]["sha256"] == file_digest(inp)
    out1, out2 = tmp_path / "m1.json", tmp_path / "m2.json"
    write_manifest(out1, m1)
    write_manifest(out2, m2)
    assert out1.read_bytes() == out2.read_bytes()
    assert json.loads(out1.read_text())["version"]
