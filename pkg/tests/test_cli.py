import json

import numpy as np
import pytest

from bridgediff.cli import main, parse_cond
from bridgediff.conditioning import ConditionPayload
from bridgediff.data import write_pnm_raw
from bridgediff.exceptions import BridgeError
from bridgediff.numerics import load_tensor

TINY_MODEL = {"hidden": 16, "token_dim": 8, "attn_dim": 8, "time_dim": 8}


def write_config(path, **kw):
    cfg = {"T": 20, "steps": 40, "batch": 16, "lr": 3e-3, "model": TINY_MODEL}
    cfg.update(kw)
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["make-data", "--kind", "points", "--n", "200", "--out", str(root / "pts.bbds"), "--seed", "1"]) == 0
    cfg = write_config(root / "cfg.json", checkpoint_every=20)
    assert main(["train", "--config", cfg, "--data", str(root / "pts.bbds"), "--out", str(root / "run")]) == 0
    return root


def test_selfcheck_passes(capsys):
    assert main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 6 and "FAIL" not in out


def test_selfcheck_detects_flipped_sign(capsys):
    assert main(["selfcheck", "--inject-fault", "flip-ceps"]) == 1
    captured = capsys.readouterr()
    assert "FAIL  posterior oracle" in captured.out and "posterior oracle" in captured.err


def test_train_outputs(trained):
    run = trained / "run"
    assert {p.name for p in run.iterdir()} >= {"metrics.csv", "final.bbck", "step0000020.bbck", "step0000040.bbck"}
    assert (run / "metrics.csv").read_text().splitlines()[0] == "step,loss,grad_norm"


def test_sample_is_byte_reproducible(trained, tmp_path):
    args = ["sample", "--ckpt", str(trained / "run" / "final.bbck"), "--data", str(trained / "pts.bbds"), "--n", "8", "--seed", "3", "--stochastic"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "samples.bbt").read_bytes() == (tmp_path / "b" / "samples.bbt").read_bytes()
    assert main(args[:-2] + ["5", "--stochastic", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "a" / "samples.bbt").read_bytes() != (tmp_path / "c" / "samples.bbt").read_bytes()


def test_sample_trace_full_length(trained, tmp_path):
    cfg = write_config(tmp_path / "cfg.json", T=200, steps=2)
    assert main(["train", "--config", cfg, "--data", str(trained / "pts.bbds"), "--out", str(tmp_path / "t200")]) == 0
    out = tmp_path / "s"
    argv = ["sample", "--ckpt", str(tmp_path / "t200" / "final.bbck"), "--data", str(trained / "pts.bbds"), "--n", "2", "--steps", "200", "--trace", "--out", str(out)]
    assert main(argv) == 0
    assert load_tensor(out / "trace.bbt").shape == (201, 2, 2)
    steps = json.loads((out / "trace_steps.json").read_text())
    assert steps == list(range(200, -1, -1))


def test_sample_from_pre_tensor_with_label(trained, tmp_path):
    from bridgediff.numerics import save_tensor

    save_tensor(tmp_path / "pre.bbt", np.array([0.5, -0.5]))
    out = tmp_path / "o"
    assert main(["sample", "--ckpt", str(trained / "run" / "final.bbck"), "--pre", str(tmp_path / "pre.bbt"), "--cond", "label:1", "--n", "3", "--out", str(out)]) == 0
    samples = load_tensor(out / "samples.bbt")
    assert samples.shape == (3, 2) and np.all(samples == samples[0])


def test_end_to_end_report(trained, tmp_path):
    report_path = tmp_path / "report.json"
    argv = ["eval", "--ckpt", str(trained / "run" / "final.bbck"), "--data", str(trained / "pts.bbds"), "--n", "50", "--metrics", "mmd,mode_accuracy", "--out", str(report_path)]
    assert main(argv) == 0
    report = json.loads(report_path.read_text())
    assert {"mode_accuracy", "mmd", "mmd_pre_baseline", "n"} <= report.keys()
    assert 0.0 <= report["mode_accuracy"] <= 1.0 and report["n"] == 50


def test_scene_pipeline_writes_images(tmp_path):
    data = tmp_path / "scn.bbds"
    assert main(["make-data", "--kind", "scenes", "--n", "20", "--size", "8", "--out", str(data)]) == 0
    cfg = write_config(tmp_path / "cfg.json", steps=2, model={**TINY_MODEL, "patch": 4})
    assert main(["train", "--config", cfg, "--data", str(data), "--out", str(tmp_path / "run")]) == 0
    assert main(["sample", "--ckpt", str(tmp_path / "run" / "final.bbck"), "--data", str(data), "--n", "2", "--out", str(tmp_path / "s")]) == 0
    assert sorted(p.name for p in (tmp_path / "s").glob("*.pgm")) == ["sample_0000.pgm", "sample_0001.pgm"]
    assert main(["eval", "--ckpt", str(tmp_path / "run" / "final.bbck"), "--data", str(data), "--metrics", "layout_iou", "--out", str(tmp_path / "r.json")]) == 0
    assert "layout_iou" in json.loads((tmp_path / "r.json").read_text())


def test_exit_codes(trained, tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "missing.bbds"), "--out", str(tmp_path / "x")]) == 2
    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text(json.dumps({"T": 20, "learnin_rate": 1}))
    assert main(["train", "--config", str(bad_cfg), "--data", str(trained / "pts.bbds"), "--out", str(tmp_path / "x")]) == 1
    assert "learnin_rate" in capsys.readouterr().err
    (tmp_path / "junk.bbds").write_bytes(b"junk")
    assert main(["train", "--data", str(tmp_path / "junk.bbds"), "--out", str(tmp_path / "x")]) == 1
    assert main(["eval", "--ckpt", str(trained / "run" / "final.bbck"), "--data", str(trained / "pts.bbds"), "--metrics", "fid", "--out", str(tmp_path / "r.json")]) == 1
    assert main(["sample", "--ckpt", str(trained / "run" / "final.bbck"), "--data", str(trained / "pts.bbds"), "--cond", "text:hi", "--out", str(tmp_path / "y")]) == 1


def test_parse_cond(tmp_path):
    assert parse_cond("none") == ConditionPayload.none()
    assert parse_cond("label:3") == ConditionPayload("label", label=3)
    write_pnm_raw(tmp_path / "m.pgm", np.eye(4, dtype=np.uint8))
    assert parse_cond(f"mask:{tmp_path / 'm.pgm'}").kind == "layout"
    assert parse_cond(f"semantic:{tmp_path / 'm.pgm'}").kind == "semantic"
    for bad in ("label:x", "label", "blob:1"):
        with pytest.raises(BridgeError):
            parse_cond(bad)
