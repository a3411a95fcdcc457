import json

import numpy as np
import pytest

from unrollrecon import cli, mri
from unrollrecon.config import PRESETS, RunConfig, build, load_config_file, preset
from unrollrecon.mri import ConfigError
from unrollrecon.phantom import read_dataset
from unrollrecon.pipeline import read_pgm, write_pgm
from unrollrecon.solvers import CSConfig
from unrollrecon.tensor import serialize

TINY_MODEL = {"model": {"base_channels": 4, "residual_blocks_per_stage": 1, "cg_iterations": 3}}


def test_config_round_trip():
    for cfg in [RunConfig(), preset("fast"), preset("reference")]:
        assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg
    assert preset("reference") == RunConfig()
    assert set(PRESETS) >= {"fast", "reference"}


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="unknown key model.depth"):
        RunConfig.from_dict({"model": {"depth": 3}})
    with pytest.raises(ConfigError, match="unknown section"):
        RunConfig.from_dict({"optim": {}})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config_file(bad)
    with pytest.raises(ConfigError):
        build(CSConfig, RunConfig().cs, tv_epsilon=0)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ds"
    assert cli.main(["simulate", "--out", str(out), "--slices", "10", "--size", "32,32", "--seed", "1"]) == 0
    return out


def test_simulate_writes_dataset_and_config(dataset_dir, tmp_path, capsys):
    ds = read_dataset(dataset_dir)
    assert {k: len(v) for k, v in ds.splits.items()} == {"train": 7, "val": 1, "test": 2}
    resolved = json.loads((dataset_dir / "resolved_config.json").read_text())
    assert resolved["dataset"]["slices"] == 10 and resolved["dataset"]["seed"] == 1
    # rerun with the same flags is bit-identical
    again = tmp_path / "again"
    cli.main(["simulate", "--out", str(again), "--slices", "10", "--size", "32,32", "--seed", "1"])
    for f in sorted(dataset_dir.glob("*.urtn")):
        assert (again / f.name).read_bytes() == f.read_bytes()
    one = tmp_path / "one"
    assert cli.main(["simulate", "--out", str(one), "--slices", "1", "--size", "32,32"]) == 0
    assert cli.main(["simulate", "--out", str(tmp_path / "x"), "--size", "30,30"]) == 2


def test_config_file_overrides_flags(dataset_dir, tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"dataset": {"slices": 2, "size": [32, 32]}}))
    out = tmp_path / "d"
    assert cli.main(["simulate", "--out", str(out), "--slices", "9", "--config", str(conf)]) == 0
    assert len(read_dataset(out).entries) == 2


def test_train_reconstruct_evaluate(dataset_dir, tmp_path, capsys):
    conf = tmp_path / "tiny.json"
    conf.write_text(json.dumps({**TINY_MODEL, "train": {"batch_size": 4}}))
    run = tmp_path / "train"
    code = cli.main(["train", "--dataset", str(dataset_dir), "--method", "edsr-unrolled", "--unroll-n", "1",
                     "--epochs", "1", "--config", str(conf), "--out", str(run)])
    assert code == 0
    assert (run / "checkpoint").exists() and (run / "train_log.jsonl").exists()
    assert json.loads((run / "resolved_config.json").read_text())["model"]["unroll_n"] == 1

    rec = tmp_path / "edsr"
    assert cli.main(["reconstruct", "--dataset", str(dataset_dir), "--checkpoint", str(run / "checkpoint"),
                     "--out", str(rec)]) == 0
    meta = json.loads((rec / "recon_meta.json").read_text())
    assert meta["method"] == "edsr-unrolled" and len(meta["slices"]) == 2
    img = serialize.load(rec / f"slice_{meta['slices'][0]}_recon.urtn")
    assert img.dtype == np.float32 and img.min() >= 0
    assert read_pgm(rec / f"slice_{meta['slices'][0]}_recon.pgm").shape == (32, 32)
    assert cli.main(["reconstruct", "--dataset", str(dataset_dir), "--checkpoint", str(run / "checkpoint"),
                     "--method", "unet-unrolled", "--out", str(tmp_path / "mm")]) == 2

    zf = tmp_path / "zf"
    assert cli.main(["reconstruct", "--dataset", str(dataset_dir), "--method", "zero-filled", "--out", str(zf)]) == 0
    capsys.readouterr()
    report = tmp_path / "rep" / "report"
    assert cli.main(["evaluate", "--dataset", str(dataset_dir), "--recon", str(rec), str(zf), "--out", str(report)]) == 0
    doc = json.loads(report.with_suffix(".json").read_text())
    assert [r["method"] for r in doc["rows"]] == ["edsr-unrolled", "zero-filled"]
    assert "Method" in capsys.readouterr().out
    code = cli.main(["evaluate", "--dataset", str(dataset_dir), "--recon", str(zf), str(tmp_path / "nowhere"),
                     "--out", str(tmp_path / "rep2" / "report")])
    assert code == 3
    assert json.loads((tmp_path / "rep2" / "report.json").read_text())["missing_dirs"]


def test_zero_filled_is_adjoint(dataset_dir, tmp_path):
    out = tmp_path / "zf"
    cli.main(["reconstruct", "--dataset", str(dataset_dir), "--method", "zero-filled", "--out", str(out)])
    ds = read_dataset(dataset_dir)
    i = ds.splits["test"][0]
    y, mask = ds.kspace(i, 4)
    ref = np.abs(mri.SenseSystem(mask, ds.coil_maps(i)).adjoint(y)).astype(np.float32)
    np.testing.assert_array_equal(serialize.load(out / f"slice_{i}_recon.urtn"), ref)


def test_cs_tune_records_lambda(dataset_dir, tmp_path):
    conf = tmp_path / "cs.json"
    conf.write_text(json.dumps({"cs": {"iterations": 5, "tune_grid": [1e-3, 1e-2], "tune_slices": 1}}))
    args = ["reconstruct", "--dataset", str(dataset_dir), "--method", "cs", "--slices", "1", "--jobs", "1",
            "--config", str(conf)]
    assert cli.main(args + ["--tune", "--out", str(tmp_path / "t")]) == 0
    tuned = json.loads((dataset_dir / "cs_tuning.json").read_text())["R=4"]["lambda_tv"]
    assert cli.main(args + ["--out", str(tmp_path / "u")]) == 0
    assert json.loads((tmp_path / "u" / "recon_meta.json").read_text())["lambda_tv"] == tuned


def test_dip_reconstruct_emits_log(dataset_dir, tmp_path):
    conf = tmp_path / "dip.json"
    conf.write_text(json.dumps({"dip": {"steps": 2, "base_channels": 4}}))
    out = tmp_path / "dip"
    assert cli.main(["reconstruct", "--dataset", str(dataset_dir), "--method", "dip", "--slices", "1", "--jobs", "1",
                     "--config", str(conf), "--out", str(out)]) == 0
    logs = list(out.glob("dip_log_slice_*.jsonl"))
    assert len(logs) == 1 and len(logs[0].read_text().splitlines()) == 2


def test_ablate_single_n(dataset_dir, tmp_path):
    conf = tmp_path / "tiny.json"
    conf.write_text(json.dumps({**TINY_MODEL, "train": {"batch_size": 4}}))
    out = tmp_path / "abl"
    assert cli.main(["ablate", "--dataset", str(dataset_dir), "--unroll-ns", "1", "--epochs", "1",
                     "--config", str(conf), "--out", str(out)]) == 0
    doc = json.loads((out / "ablation.json").read_text())
    assert [r["N"] for r in doc["rows"]] == [1] and doc["reference"]["7"][0] == 35.6
    assert {"params", "activations_per_sample"} <= set(doc["rows"][0])


def test_error_exit_codes(dataset_dir, tmp_path):
    assert cli.main(["train", "--dataset", str(dataset_dir), "--unroll-n", "0", "--out", str(tmp_path / "a")]) == 2
    assert cli.main(["train", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "b")]) == 3
    assert cli.main(["reconstruct", "--dataset", str(dataset_dir), "--method", "edsr-unrolled",
                     "--out", str(tmp_path / "c")]) == 2
    assert cli.main(["simulate", "--preset", "nope", "--out", str(tmp_path / "d")]) == 2


def test_default_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ROOT_ENV, str(tmp_path / "root"))
    assert cli.main(["simulate", "--slices", "1", "--size", "32,32"]) == 0
    assert (tmp_path / "root" / "dataset" / "manifest.json").exists()


def test_verify_passes(capsys):
    assert cli.main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "PASS sense_adjoint" in out and "FAIL" not in out


def test_verify_catches_adjoint_sign_flip(monkeypatch, capsys):
    original = mri.SenseSystem.adjoint
    monkeypatch.setattr(mri.SenseSystem, "adjoint", lambda self, y: -original(self, y))
    assert cli.main(["verify"]) == 1
    captured = capsys.readouterr()
    assert "FAIL sense_adjoint" in captured.out and "sense_adjoint" in captured.err


def test_pgm_round_trip(tmp_path):
    img = np.linspace(0, 2, 12).reshape(3, 4)
    write_pgm(tmp_path / "a.pgm", img)
    back = read_pgm(tmp_path / "a.pgm")
    assert back.shape == (3, 4) and back.max() == 255 and back[0, 0] == 0
    write_pgm(tmp_path / "z.pgm", np.zeros((2, 2)))
    assert not read_pgm(tmp_path / "z.pgm").any()
