import pytest

from genrec.config import (
    ExperimentConfig,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    dump_toml,
    load_config,
    parse_override,
    preset_config,
)
from genrec.errors import ConfigError


def test_default_hyperparameters():
    cfg = preset_config("remote")
    assert (cfg.pool_size, cfg.iterations, cfg.interactions, cfg.shown) == (5, 15, 5000, 3)
    assert (cfg.click.temperature, cfg.click.rejection_score) == (1.5, 11.0)
    assert cfg.strategy.n == 1 and cfg.backend.kind == "remote"
    assert cfg.backend.remote.api_key_env == "OPENAI_API_KEY"


@pytest.mark.parametrize("name", ["remote", "length", "synthetic"])
def test_toml_round_trip(tmp_path, name):
    cfg = preset_config(name)
    path = tmp_path / "c.toml"
    path.write_text(dump_toml(cfg))
    assert load_config(path) == cfg


def test_secret_never_in_dump(monkeypatch):
    monkeypatch.setenv("OPENAI_API_KEY", "sk-should-not-appear")
    assert "sk-should-not-appear" not in dump_toml(preset_config("remote"))


@pytest.mark.parametrize(
    "item,path,value",
    [
        ("seed=7", ["seed"], 7),
        ("click.temperature=2.0", ["click", "temperature"], 2.0),
        ("strategy.kind=full-ctr", ["strategy", "kind"], "full-ctr"),
        ('personas=["price","quality"]', ["personas"], ["price", "quality"]),
        ("topic=Ada Lovelace", ["topic"], "Ada Lovelace"),
    ],
)
def test_parse_override(item, path, value):
    assert parse_override(item) == (path, value)


@pytest.mark.parametrize("item", ["seed", "=3", "a..b=1"])
def test_bad_override(item):
    with pytest.raises(ConfigError):
        parse_override(item)


def test_overrides_applied_and_validated(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(dump_toml(preset_config("length")))
    cfg = load_config(path, ["seed=9", "strategy.kind=partial-ctr"])
    assert cfg.seed == 9 and cfg.strategy.kind == "partial-ctr"
    with pytest.raises(ConfigError, match="strategy.kind"):
        load_config(path, ["strategy.kind=bogus"])
    with pytest.raises(ConfigError):
        apply_overrides({"seed": 1}, ["seed.x=2"])


@pytest.mark.parametrize(
    "patch",
    [
        {"interactions": 0},
        {"iterations": 0},
        {"shown": 6},
        {"personas": []},
        {"topic": " "},
        {"click": {"temperature": 0}},
        {"strategy": {"kind": "explore-exploit", "explore_exploit_mode": "dual-set", "n": 3}},
        {"backend": {"kind": "replay"}},
        {"backend": {"kind": "scripted-length", "remote": {}}},
        {"unknown_field": 1},
    ],
)
def test_invalid_configs(patch):
    data = config_to_dict(ExperimentConfig())
    data.update(patch)
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = [")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_json_config(tmp_path):
    import json

    path = tmp_path / "c.json"
    path.write_text(json.dumps(config_to_dict(preset_config("synthetic"))))
    assert load_config(path) == preset_config("synthetic")
