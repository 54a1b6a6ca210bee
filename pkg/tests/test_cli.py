import json

import numpy as np
import pytest

from cffm import cft
from cffm.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    return code, json.loads(capsys.readouterr().out)


def test_gen_writes_cft_clip(tmp_path, capsys):
    code, out = run(capsys, "gen", "--out", str(tmp_path / "clip"), "--frames", "4",
                    "--velocity", "0,1", "--seed", "3")
    assert code == 0 and out["frames"] == 4 and out["spec"]["velocity"] == [0, 1]
    frame = cft.load(tmp_path / "clip" / "frames" / "0000.cft")
    mask = cft.load(tmp_path / "clip" / "masks" / "0003.cft")
    assert frame.shape == (48, 48, 3) and frame.dtype == np.float32
    assert mask.shape == (48, 48) and mask.dtype == np.uint8


def test_train_then_stream_then_eval(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"iterations": 2, "eval_every": 0, "batch": 1,
                               "data": {"clips": 1, "frames": 12, "height": 32, "width": 32,
                                        "object_size": 8}}))
    code, report = run(capsys, "train-toy", "--config", str(cfg), "--out", str(tmp_path / "run"))
    assert code == 0 and len(report["losses"]) == 2
    assert (tmp_path / "run" / "checkpoint" / "manifest.json").exists()

    run(capsys, "gen", "--config", str(cfg), "--out", str(tmp_path / "clip"), "--frames", "12")
    code, out = run(capsys, "stream", "--checkpoint", str(tmp_path / "run" / "checkpoint"),
                    "--clip", str(tmp_path / "clip"), "--out", str(tmp_path / "pred"))
    assert out["frames"] == 12 and out["encoder_calls"] == 12

    code, out = run(capsys, "eval-vc", "--gt", str(tmp_path / "clip" / "masks"),
                    "--pred", str(tmp_path / "pred"), "--n", "8", "--classes", "4")
    assert code == 0 and 0 <= out["mvc"]["8"] <= 1 and out["n_classes"] == 4


def test_eval_vc_identity(tmp_path, capsys):
    run(capsys, "gen", "--out", str(tmp_path / "c"), "--frames", "16")
    masks = str(tmp_path / "c" / "masks")
    _, out = run(capsys, "eval-vc", "--gt", masks, "--pred", masks)
    assert out["miou"] == 1.0 and out["mvc"] == {"8": 1.0, "16": 1.0}


def test_cost_command(tmp_path, capsys):
    cfg = tmp_path / "cost.json"
    cfg.write_text(json.dumps({"schedule": {"s": 4, "entries": [
        {"offset": 3, "r": 20, "p": 4}, {"offset": 2, "r": 12, "p": 3},
        {"offset": 1, "r": 6, "p": 2}, {"offset": 0, "r": 4, "p": 1}]},
        "features": {"h": 24, "w": 24}, "c": 4, "N": 1}))
    code, out = run(capsys, "cost", "--config", str(cfg), "--measure")
    assert code == 0 and out["cffm"]["consistent"]
    assert out["cffm"]["score_pairs"] == 576 * 66
    code, out = run(capsys, "cost")
    assert out["cffm"]["score_pairs"] == 567_616


def test_gradcheck_and_bench_commands(tmp_path, capsys):
    code, out = run(capsys, "gradcheck", "--only", "aux")
    assert code == 0 and out["passed"] and set(out["errors"]) == {"aux.w", "aux.b"}
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps({"bench": {"h": 16, "w": 16, "c": 8, "schedule": {
        "s": 4, "entries": [{"offset": 1, "r": 8, "p": 2}, {"offset": 0, "r": 4, "p": 1}]}}}))
    code, out = run(capsys, "bench", "--config", str(cfg), "--reps", "1")
    assert code == 0 and out["config"]["reps"] == 1 and out["cffm_median"] > 0


def test_missing_arguments():
    with pytest.raises(SystemExit):
        main(["eval-vc", "--gt", "x"])
    with pytest.raises(SystemExit):
        main([])
