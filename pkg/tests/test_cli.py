import json

import numpy as np
import pytest

from tlfuture import cli
from tlfuture.cli import load_run, main
from tlfuture.dataio import decode_pnm, read_dataset
from tlfuture.model import FutureModel
from tlfuture.tensor import Tensor

SYNTH = ["--frame-size", "16", "--radius", "3", "--sun-radius", "2", "--sun-arc-radius", "5",
         "--tracker-width", "1", "--velocity", "1, 0"]
MODEL_TEXT = """\
frame_size = 16
repr_size = 8
encoder_channels = 4, 4
measure_filters = 4
convlstm_filters = 4, 4
attention_filters = 4
ar_filters = 4
"""


def tree(root, skip_manifest=True):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and not (skip_manifest and p.name == "manifest.json")}


def manifest(root):
    return json.loads((root / "manifest.json").read_text())


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    (root / "model.cfg").write_text(MODEL_TEXT)
    assert main(["synth", "--seed", "4", "--count", "3", *SYNTH, "--out", str(root / "data")]) == 0
    common = ["--config", str(root / "model.cfg"), "--data", str(root / "data"), "--epochs", "1"]
    assert main(["train-now", *common, "--out", str(root / "now")]) == 0
    assert main(["train-future", *common, "--now", str(root / "now"), "--attention", "spatial-conv",
                 "--out", str(root / "future")]) == 0
    assert main(["train-ar", *common, "--now", str(root / "now"), "--out", str(root / "ar")]) == 0
    return root


def test_synth_twice_is_byte_identical(tmp_path):
    for name in ("d1", "d2"):
        assert main(["synth", "--seed", "7", "--count", "2", *SYNTH, "--out", str(tmp_path / name)]) == 0
    assert tree(tmp_path / "d1") == tree(tmp_path / "d2")
    a, b = manifest(tmp_path / "d1"), manifest(tmp_path / "d2")
    for m in (a, b):
        m.pop("started"), m.pop("finished")
    assert a == b and a["seed"] == 7 and a["command"] == "synth"
    assert a["outputs"] == sorted(tree(tmp_path / "d1"))


def test_manifest_config_reproduces_the_run(runs, tmp_path):
    snapshot = manifest(runs / "now")["config"]
    (tmp_path / "again.cfg").write_text("".join(f"{k} = {v}\n" for k, v in snapshot.items()))
    assert main(["train-now", "--config", str(tmp_path / "again.cfg"), "--data", str(runs / "data"),
                 "--out", str(tmp_path / "now")]) == 0
    assert tree(tmp_path / "now") == tree(runs / "now")


def test_training_run_contents(runs):
    files = set(tree(runs / "future", skip_manifest=False))
    assert files == {"manifest.json", "model.tlf", "model.cfg", "train.cfg", "loss_log.csv"}
    assert manifest(runs / "future")["config"]["attention_variant"] == "spatial_conv"
    assert manifest(runs / "future")["inputs"] == {"data": str(runs / "data"), "now": str(runs / "now")}


def test_eval_is_deterministic(runs, tmp_path, capsys):
    args = ["eval", "--protocol", "future", "--data", str(runs / "data"), "--model", str(runs / "future"),
            "--now", str(runs / "now"), "--ar", str(runs / "ar"), "--baselines"]
    assert main([*args, "--out", str(tmp_path / "e1")]) == 0
    assert main([*args, "--out", str(tmp_path / "e2")]) == 0
    assert tree(tmp_path / "e1") == tree(tmp_path / "e2")
    assert set(tree(tmp_path / "e1")) == {"metrics.csv", "persistence.csv", "autoregressive.csv"}
    assert "# persistence\nhorizon_min," in capsys.readouterr().out
    assert main(["eval", "--data", str(runs / "data"), "--model", str(runs / "now"), "--out", str(tmp_path / "n")]) == 0
    assert len((tmp_path / "n" / "metrics.csv").read_text().splitlines()) == 2


def test_predict_cardinality_and_attention_quantisation(runs, tmp_path):
    window = runs / "data" / "seq_00000"
    assert main(["predict", "--model", str(runs / "future"), "--window", str(window), "--out", str(tmp_path)]) == 0
    files = sorted(tree(tmp_path))
    assert [f for f in files if f.startswith("mask_")] == [f"mask_h{h:02d}.pgm" for h in range(1, 7)]
    assert [f for f in files if f.startswith("attention_")] == [f"attention_t{k:02d}.pgm" for k in range(1, 7)]
    rows = (tmp_path / "irradiance_pred.csv").read_text().splitlines()
    assert rows[0] == "horizon_min,irradiance" and [r.split(",")[0] for r in rows[1:]] == ["10", "20", "30", "40",
                                                                                           "50", "60"]
    assert len(files) == 13

    model = load_run(runs / "future", FutureModel)
    frames = read_dataset(window).frames[:6][None]
    weights = model(Tensor(frames), training=False).attention[0]
    decoded = np.stack([decode_pnm((tmp_path / f"attention_t{k:02d}.pgm").read_bytes()) for k in range(1, 7)],
                       axis=-1) / 255.0
    assert np.abs(decoded - weights).max() <= 1 / 255
    assert np.abs(decoded.sum(axis=-1) - 1.0).max() <= 6 * 0.5 / 255


def test_predict_persistence_masks_identical(runs, tmp_path):
    assert main(["predict", "--persistence", "--now", str(runs / "now"), "--window", str(runs / "data" / "seq_00001"),
                 "--out", str(tmp_path)]) == 0
    masks = [(tmp_path / f"mask_h{h:02d}.pgm").read_bytes() for h in range(1, 7)]
    assert all(m == masks[0] for m in masks)
    assert not list(tmp_path.glob("attention_*"))


def test_predict_short_window_is_runtime_error(runs, tmp_path, capsys):
    code = main(["predict", "--model", str(runs / "future"), "--window", str(runs / "data" / "seq_00000"),
                 "--start", "7", "--out", str(tmp_path / "p")])
    assert code == 1 and "window needs 6 frames" in capsys.readouterr().err
    assert not (tmp_path / "p").exists()


@pytest.mark.parametrize("argv", [["frobnicate"], ["synth", "--out", "x", "--bogus", "1"], [],
                                  ["train-future", "--data", "d", "--now", "n", "--out", "o", "--attention", "global"],
                                  ["synth", "--out", "x", "--frame-size"]])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2
    assert "usage: tlfuture" in capsys.readouterr().err
    assert not list(tmp_path.iterdir())


def test_bad_value_and_missing_data(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "a"), "--frame-size", "big"]) == 2
    assert main(["train-now", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "b")]) == 1
    assert "No such file" in capsys.readouterr().err
    (tmp_path / "empty").mkdir()
    assert main(["train-now", "--data", str(tmp_path / "empty"), "--out", str(tmp_path / "b")]) == 1
    assert "no sequences" in capsys.readouterr().err
    assert not (tmp_path / "b").exists()


def test_seed_precedence(tmp_path, monkeypatch):
    (tmp_path / "s.cfg").write_text("seed = 5\n")
    monkeypatch.setenv("TLF_SEED", "3")
    base = ["synth", "--count", "1", *SYNTH]
    main([*base, "--out", str(tmp_path / "env")])
    main([*base, "--config", str(tmp_path / "s.cfg"), "--out", str(tmp_path / "file")])
    main([*base, "--config", str(tmp_path / "s.cfg"), "--seed", "7", "--out", str(tmp_path / "flag")])
    monkeypatch.delenv("TLF_SEED")
    main([*base, "--seed", "3", "--out", str(tmp_path / "plain")])
    assert [manifest(tmp_path / d)["seed"] for d in ("env", "file", "flag")] == [3, 5, 7]
    assert tree(tmp_path / "env") == tree(tmp_path / "plain")


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    table = capsys.readouterr().out
    assert "conv2d" in table and "FAIL" not in table
    assert (tmp_path / "gradcheck.txt").read_text() == table


def test_gradcheck_failure_exit_code(monkeypatch, capsys):
    from tlfuture import gradsuite
    monkeypatch.setattr(gradsuite, "run_suite", lambda tolerance, seed: [gradsuite.run_case("softmax", tolerance, seed)])
    assert main(["gradcheck", "--tolerance", "1e-30"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_overrides_parser():
    assert cli.parse_overrides(["--look-back", "4", "--lam=0.5"]) == {"look_back": "4", "lam": "0.5"}
    with pytest.raises(cli.UsageError):
        cli.parse_overrides(["stray"])
