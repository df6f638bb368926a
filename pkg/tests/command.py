import os

import pytest
import yaml

import darkproxy.config
from darkproxy.command import main
from darkproxy.decouple import load_pools
from darkproxy.frames import read_frame_set_manifest
from darkproxy.manifest import read_manifest
from darkproxy.metrics import read_summary
from darkproxy.proxy import load_model

SPEC = {
    "height": 32,
    "width": 32,
    "gain_slope": 0.001,
    "isos": [800, 1600],
    "fpn_k_std": 5e-4,
    "fpn_b_std": 2.0,
    "ble": {800: 0.2, 1600: -0.3},
    "sigma_row": {800: 0.3, 1600: 0.4},
    "sigma_col": {800: 0.2, 1600: 0.3},
}


def run(*argv):
    # every invocation starts from a clean environment, as a separate process would
    darkproxy.config.reset()
    return main([str(a) for a in argv])


def pipeline(root, seed=7):
    root.mkdir(parents=True, exist_ok=True)
    spec = root / "spec.yaml"
    spec.write_text(yaml.safe_dump({"sensor": SPEC}))
    dirs = {name: root / name for name in ("sim", "cal", "dec", "trn", "syn", "ev")}
    darks, flats = dirs["sim"] / "darks.yaml", dirs["sim"] / "flats.yaml"
    profile = dirs["cal"] / "profile"
    stages = [
        ["simulate", "--spec", spec, "--darks", 3, "--truth-samples", 2000],
        ["calibrate", "--darks", darks, "--flats", flats],
        ["decouple", "--darks", darks, "--profile", profile],
        ["train", "--pools", dirs["dec"] / "pools", "--profile", profile, "--steps", 3,
         "--patch", 16, "--queries", 64, "--width", 4, "--blocks", 1],
        ["synth", "--model", dirs["trn"] / "model", "--profile", profile, "--samples", 2000],
        ["eval", "--a", dirs["syn"] / "pixel", "--b", dirs["sim"] / "truth" / "pixel",
         "--quantiles", 100, "--baselines"],
    ]
    for out, argv in zip(dirs.values(), stages):
        # the --darks flag wins over the configured frame count
        assert run("-c", "simulate:darks_per_iso:4", *argv, "--seed", seed, "--out", out) == 0
    return dirs


def test_full_pipeline(tmp_path):
    dirs = pipeline(tmp_path)
    kind, entries = read_frame_set_manifest(str(dirs["sim"] / "darks.yaml"))
    assert kind == "dark"
    assert [e.iso for e in entries] == [800, 1600]
    assert all(len(e.frame_set) == 3 for e in entries)
    assert set(load_pools(str(dirs["sim"] / "truth" / "pixel"))) == {800, 1600}
    assert os.path.exists(dirs["cal"] / "profile" / "profile.yaml")
    trace = yaml.safe_load((dirs["dec"] / "trace.yaml").read_text())
    assert set(trace[800]) == {"raw", "frame", "band", "pixel"}
    pools = load_pools(str(dirs["dec"] / "pools"))
    assert len(pools[1600]) == 3 * 32 * 32
    model = load_model(str(dirs["trn"] / "model"))
    assert model.steps_trained == 6
    assert model.lineage["seed"] == 7
    lines = (dirs["trn"] / "train_log.csv").read_text().splitlines()
    assert len(lines) == 7
    assert len(load_pools(str(dirs["syn"] / "pixel"))[800]) == 2000
    assert len(load_pools(str(dirs["syn"] / "dark"))[800]) == 2 * 32 * 32
    summary = read_summary(str(dirs["ev"] / "iso_800"))
    assert summary["n_a"] == 2000 and summary["kld"] >= 0.0
    assert os.path.exists(dirs["ev"] / "iso_1600" / "baseline_tukey_lambda" / "summary.csv")
    manifest = read_manifest(str(dirs["ev"]))
    assert manifest.command == "eval"
    assert "iso_800/summary.csv" in manifest.outputs


def test_pipeline_is_deterministic(tmp_path):
    a = pipeline(tmp_path / "a")
    b = pipeline(tmp_path / "b")
    for stage in a:
        ma, mb = read_manifest(str(a[stage])), read_manifest(str(b[stage]))
        assert ma.outputs == mb.outputs, stage
        assert ma.config_digest == mb.config_digest


def test_usage_errors(capsys):
    assert run() == 1
    with pytest.raises(SystemExit) as e:
        run("simulate", "--no-such-flag")
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        run("calibrate", "--flats", "x.yaml")
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        run("calibrate", "--darks", "x.yaml", "--flats", "y.yaml", "--gain-slope", 0.001)
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        run("--version")
    assert e.value.code == 0


def test_info(capsys):
    assert run("--info") == 0
    assert "darkproxy simulate" in capsys.readouterr().out


def test_calibrate_with_one_iso_is_a_data_error(tmp_path):
    spec = tmp_path / "spec.yaml"
    spec.write_text(yaml.safe_dump(SPEC))
    sim = tmp_path / "sim"
    assert run("simulate", "--out", sim, "--spec", spec, "--darks", 2, "--truth-samples", 100) == 0
    record = yaml.safe_load((sim / "darks.yaml").read_text())
    record["sets"] = record["sets"][:1]
    (sim / "one.yaml").write_text(yaml.safe_dump(record))
    flats = ["--flats", sim / "flats.yaml", "--out", tmp_path / "cal"]
    assert run("calibrate", "--darks", sim / "one.yaml", *flats) == 2
    assert run("calibrate", "--darks", tmp_path / "missing.yaml", *flats) == 2
    assert run("calibrate", "--darks", sim / "flats.yaml", *flats) == 2


def test_calibrate_without_flats(tmp_path):
    spec = tmp_path / "spec.yaml"
    spec.write_text(yaml.safe_dump(SPEC))
    sim = tmp_path / "sim"
    assert run("simulate", "--out", sim, "--spec", spec, "--darks", 2, "--truth-samples", 100) == 0
    darks = ["--darks", sim / "darks.yaml"]
    assert run("calibrate", *darks, "--out", tmp_path / "none") == 2
    assert not (tmp_path / "none" / "profile").exists()

    assert run("calibrate", *darks, "--gain-slope", 0.002, "--out", tmp_path / "slope") == 0
    gain = yaml.safe_load((tmp_path / "slope" / "profile" / "profile.yaml").read_text())["gain"]
    assert gain == {800: pytest.approx(1.6), 1600: pytest.approx(3.2)}
    manifest = read_manifest(str(tmp_path / "slope"))
    assert "flats" not in manifest.inputs

    table = "calibrate:gain:{800: 0.9, 1600: 1.7}"
    assert run("-c", table, "calibrate", *darks, "--out", tmp_path / "table") == 0
    gain = yaml.safe_load((tmp_path / "table" / "profile" / "profile.yaml").read_text())["gain"]
    assert gain == {800: 0.9, 1600: 1.7}
    partial = "calibrate:gain:{800: 0.9}"
    assert run("-c", partial, "calibrate", *darks, "--out", tmp_path / "partial") == 2


def test_bad_configuration_is_a_data_error(tmp_path):
    assert run("-c", "threads:0", "gradcheck", "--out", tmp_path, "--size", 2) == 2
    assert run("gradcheck", "--out", tmp_path, "--config", tmp_path / "missing.yaml") == 2


def test_synth_needs_work(tmp_path):
    assert run("synth", "--out", tmp_path, "--model", tmp_path, "--profile", tmp_path) == 2
    assert run(
        "synth", "--out", tmp_path, "--model", tmp_path, "--profile", tmp_path, "--iso", 800
    ) == 2


def test_gradcheck(tmp_path):
    out = tmp_path / "ok"
    args = ["--size", 4, "--queries", 32, "--width", 4, "--blocks", 1]
    assert run("gradcheck", "--out", out, *args) == 0
    record = yaml.safe_load((out / "gradcheck.yaml").read_text())
    assert record["passed"] is True
    assert record["iso"] == 1600
    assert record["checked"] > 0
    out = tmp_path / "strict"
    assert run("gradcheck", "--out", out, *args, "--tolerance", 1e-300, "--atol", 0) == 2
    assert yaml.safe_load((out / "gradcheck.yaml").read_text())["passed"] is False


def test_config_show(tmp_path, capsys):
    file = tmp_path / "cfg.yaml"
    file.write_text(yaml.safe_dump({"darkproxy": {"train": {"patch": 48}}}))
    assert run("-c", "threads:2", "config", "--config", file, "show") == 0
    shown = yaml.safe_load(capsys.readouterr().out)
    assert shown["threads"] == 2
    assert shown["train"]["patch"] == 48
    with pytest.raises(SystemExit) as e:
        run("config")
    assert e.value.code == 1
