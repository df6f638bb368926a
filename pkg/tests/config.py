import argparse
import os

import pytest
import schema
import yaml

import darkproxy.config


def write_yaml(path, data):
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh)
    return str(path)


def namespace(**kwargs):
    defaults = {"config_file": None, "config_mods": None, "threads": None}
    defaults.update(kwargs)
    return argparse.Namespace(**defaults)


def test_config_defaults(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    config = darkproxy.config.Config()
    assert config["threads"] == 1
    assert config["debug"] is False
    assert config["train"]["steps_per_iso"] == 1000
    assert config["simulate"]["flat_levels"] == [200.0, 800.0, 3200.0]
    assert config["gradcheck"]["tolerance"] == 1e-4
    assert config["gradcheck"]["atol"] == 1e-7
    assert config["calibrate"]["gain"] == {}
    assert "gain_slope" not in config["calibrate"]


def test_config_scopes_merge(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    site = write_yaml(tmp_path / "site.yaml", {"threads": 2, "train": {"patch": 64}})
    glob = write_yaml(tmp_path / "global.yaml", {"train": {"patch": 128, "steps_per_iso": 7}})
    write_yaml(tmp_path / "darkproxy.yaml", {"darkproxy": {"train": {"steps_per_iso": 9}}})
    monkeypatch.setenv("DARKPROXY_SITE_CONFIG", site)
    monkeypatch.setenv("DARKPROXY_GLOBAL_CONFIG", glob)
    config = darkproxy.config.Config()
    assert config["threads"] == 2
    assert config["train"]["patch"] == 128
    assert config["train"]["steps_per_iso"] == 9
    assert config["train"]["lr_base"] == 1e-2


def test_config_main_options(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    file = write_yaml(tmp_path / "run.yaml", {"train": {"patch": 16, "steps_per_iso": 3}})
    config = darkproxy.config.Config()
    args = namespace(
        config_file=file,
        config_mods=["train:steps_per_iso:5", "simulate:flat_levels:[100, 400]"],
        threads=3,
    )
    config.set_main_options(args)
    assert config["train"]["patch"] == 16
    assert config["train"]["steps_per_iso"] == 5
    assert config["simulate"]["flat_levels"] == [100, 400]
    assert config["threads"] == 3
    assert "DARKPROXY_CFG64" in os.environ
    again = darkproxy.config.Config()
    assert again.data == config.data
    assert again.digest() == config.digest()


def test_config_main_options_errors(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    config = darkproxy.config.Config()
    with pytest.raises(FileNotFoundError):
        config.set_main_options(namespace(config_file=str(tmp_path / "missing.yaml")))
    with pytest.raises(ValueError):
        config.set_main_options(namespace(config_mods=["threads"]))
    with pytest.raises(schema.SchemaError):
        config.set_main_options(namespace(config_mods=["threads:0"]))
    bad = tmp_path / "list.yaml"
    bad.write_text("- 1\n- 2\n")
    with pytest.raises(ValueError):
        config.set_main_options(namespace(config_file=str(bad)))
    assert config["threads"] == 1


def test_config_empty_file(tmp_path):
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert darkproxy.config.read_config_file(str(empty)) is None
    assert darkproxy.config.read_config_file(str(tmp_path / "nope.yaml")) is None


def test_config_set_and_digest(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    config = darkproxy.config.Config()
    before = config.digest()
    assert before == darkproxy.config.Config().digest()
    config.set("train:steps_per_iso", 200)
    assert config["train"]["steps_per_iso"] == 200
    assert config.digest() != before
    with pytest.raises(schema.SchemaError):
        config.set("train:patch", -1)


def test_process_config_path():
    assert darkproxy.config.process_config_path("a:b:c") == ["a", "b", "c"]
    assert darkproxy.config.process_config_path("a:b:[1, 2]") == ["a", "b", "[1, 2]"]
    with pytest.raises(ValueError):
        darkproxy.config.process_config_path(":a")


def test_scope_filenames(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("DARKPROXY_GLOBAL_CONFIG")
    monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path))
    os.makedirs(tmp_path / "darkproxy")
    write_yaml(tmp_path / "darkproxy" / "config.yaml", {"threads": 4})
    assert darkproxy.config.get_scope_filename("global") == str(
        tmp_path / "darkproxy" / "config.yaml"
    )
    assert darkproxy.config.get_scope_filename("local") == str(tmp_path / "darkproxy.yaml")
    with pytest.raises(ValueError):
        darkproxy.config.get_scope_filename("user")


def test_get_config_is_shared(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    a = darkproxy.config.get_config()
    assert darkproxy.config.get_config() is a
    darkproxy.config.reset()
    assert darkproxy.config.get_config() is not a
