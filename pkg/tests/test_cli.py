import json

import numpy as np
import pytest

from surfseg.cli import main
from surfseg.core import Kind, read_grid_csv, read_lines_csv, read_trace_csv, write_grid_csv, write_lines_csv
from surfseg.pipeline import infer
from surfseg.predictor import load_model

CONFIG = {
    "synth": {"n_cols": 16, "n_rows": 48, "amplitude": 6.0, "ridge_width": 2.0, "seed": 3},
    "dataset": {"n_samples": 10, "split": [0.6, 0.2, 0.2]},
    "oracle": {"corrupt_fraction": 0.3, "position_noise_std": 3.0, "seed": 1},
    "predictor": {"patch_rows": 3, "patch_cols": 3},
    "pretrain": {"lr": 0.05, "epochs": 3, "batch_size": 2},
    "train": {"rounds": 1, "ep_unet": 1, "ep_sb": 2, "lr_predictor": 1e-3, "sigma_rel": 0.05},
}


@pytest.fixture
def work(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(CONFIG))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "data")]) == 0
    return tmp_path, str(cfg)


def tree_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_synth_split_and_rerun(work):
    tmp, cfg = work
    manifest = json.loads((tmp / "data" / "manifest.json").read_text())
    assert [s["split"] for s in manifest["samples"]].count("train") == 6
    assert main(["synth", "--config", cfg, "--out", str(tmp / "again")]) == 0
    assert tree_bytes(tmp / "data") == tree_bytes(tmp / "again")


def test_bad_config_names_key(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"lr_sbb": 0.1}}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "train.lr_sbb" in capsys.readouterr().err
    bad.write_text(json.dumps({"synth": {"n_rows": "many"}}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "synth.n_rows" in capsys.readouterr().err


def test_training_and_inference_chain(work, capsys):
    tmp, cfg = work
    manifest = str(tmp / "data" / "manifest.json")
    ck0, ck1 = str(tmp / "pre.ckpt"), str(tmp / "fine.ckpt")
    assert main(["pretrain", "--config", cfg, "--manifest", manifest, "--out", ck0]) == 0
    assert main(["finetune", "--config", cfg, "--manifest", manifest, "--checkpoint", ck0, "--out", ck1]) == 0
    same = str(tmp / "same.ckpt")
    assert main(["finetune", "--config", cfg, "--manifest", manifest, "--checkpoint", ck1,
                 "--out", same, "--rounds", "0"]) == 0
    assert open(same, "rb").read() == open(ck1, "rb").read()

    image = tmp / "data" / "samples" / "s0000_image.csv"
    outs = {}
    for name, extra in (("sb", []), ("nosb", ["--no-sb"]), ("w0", ["--w", "0"])):
        outs[name] = tmp / f"{name}.csv"
        assert main(["infer", "--config", cfg, "--model", ck1, "--image", str(image),
                     "--out", str(outs[name])] + extra) == 0
    np.testing.assert_array_equal(read_trace_csv(outs["w0"]).x, read_trace_csv(outs["nosb"]).x)

    scorer, log_w = load_model(ck1)
    manual = infer(scorer, read_grid_csv(image, Kind.IMAGE), np.exp(log_w), wrap=False)
    np.testing.assert_array_equal(read_trace_csv(outs["sb"]).x, manual.x)

    pm = tmp / "pm.csv"
    write_grid_csv(pm, manual.probmap)
    assert main(["fit-gauss", "--input", str(pm), "--out", str(tmp / "fit.csv"), "--report"]) == 0
    gamma, sigma, flags = read_lines_csv(tmp / "fit.csv")
    np.testing.assert_array_equal(gamma, read_trace_csv(outs["nosb"]).x)
    assert set(flags) <= {0.0, 1.0}


def test_probmap_finetune_and_manifest_infer(work):
    tmp, cfg = work
    manifest = str(tmp / "data" / "manifest.json")
    ck0, ck1 = str(tmp / "pre.ckpt"), str(tmp / "fine.ckpt")
    assert main(["pretrain", "--config", cfg, "--manifest", manifest, "--out", ck0]) == 0
    assert main(["finetune", "--config", cfg, "--manifest", manifest, "--checkpoint", ck0,
                 "--out", ck1, "--probmap"]) == 0
    assert main(["infer", "--config", cfg, "--model", ck1, "--manifest", manifest, "--probmap",
                 "--out", str(tmp / "pred")]) == 0
    assert len(list((tmp / "pred").glob("*.csv"))) == 2


def test_eval_identity(work, capsys):
    tmp, cfg = work
    truth = str(tmp / "data" / "samples" / "s0001_truth.csv")
    capsys.readouterr()
    assert main(["eval", "--pred", truth, "--truth", truth]) == 0
    summary = json.loads(capsys.readouterr().out)["summary"]
    assert summary["umsp"]["mean"] == 0 and summary["jm"]["mean"] == 1
    assert summary["pad"]["mean"] == 0 and summary["hd"]["mean"] == 0


def test_smooth_fixture(tmp_path, capsys):
    src = tmp_path / "gf.csv"
    write_lines_csv(src, [[0.0, 3.0, 0.0], [1.0, 1.0, 1.0]])
    assert main(["smooth", "--input", str(src), "--out", str(tmp_path / "x.csv"), "--w", "0.5", "--energy"]) == 0
    np.testing.assert_allclose(read_trace_csv(tmp_path / "x.csv").x, [0.75, 1.5, 0.75], rtol=1e-14)
    assert float(capsys.readouterr().out) == pytest.approx(2.25)


def test_exit_codes(tmp_path):
    assert main(["fit-gauss", "--input", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o.csv")]) == 2
    neg = tmp_path / "neg.csv"
    write_grid_csv(neg, np.array([[0.2, -0.1], [0.8, 0.7]]))
    assert main(["fit-gauss", "--input", str(neg), "--out", str(tmp_path / "o.csv")]) == 2
    bad = tmp_path / "gf.csv"
    write_lines_csv(bad, [[0.0, 1.0], [1.0, 0.0]])
    assert main(["smooth", "--input", str(bad), "--out", str(tmp_path / "x.csv"), "--w", "1"]) == 2


def test_probmap_finetune_without_checkpoint(work):
    tmp, cfg = work
    manifest = str(tmp / "data" / "manifest.json")
    ck = str(tmp / "w.ckpt")
    assert main(["finetune", "--config", cfg, "--manifest", manifest, "--out", ck, "--probmap"]) == 0
    assert main(["infer", "--config", cfg, "--model", ck, "--manifest", manifest, "--probmap",
                 "--out", str(tmp / "pred")]) == 0
    assert main(["finetune", "--config", cfg, "--manifest", manifest, "--out", ck]) == 2
