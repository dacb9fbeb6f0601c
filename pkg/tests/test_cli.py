import csv

import numpy as np
import pytest

from synth import make_dataset
from tilesal.cli import METRIC_LABELS, main
from tilesal.cost import model_file_bytes
from tilesal.dataset import DatasetLayout, density_for
from tilesal.imageio import encode_pnm, read_map, write_f32
from tilesal.metrics import METRIC_ORDER
from tilesal.network import TABLE1, init_dual, load_weights, reduced_spec, save_weights
from tilesal.train import load_adam_state


@pytest.fixture(scope="module")
def table1_weights(tmp_path_factory):
    path = tmp_path_factory.mktemp("w") / "model.tsal"
    save_weights(init_dual(TABLE1, 0), path)
    return path


def read_report(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("command", [[], ["predict"], ["train"], ["eval"], ["cost"], ["weights"]])
def test_help_exits_zero(command, capsys):
    with pytest.raises(SystemExit) as exc:
        main(command + ["--help"])
    assert exc.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_predict_writes_map_of_input_size(tmp_path, table1_weights):
    img = tmp_path / "in.ppm"
    img.write_bytes(encode_pnm(np.random.default_rng(0).integers(0, 256, (60, 90, 3), dtype=np.uint8)))
    out = tmp_path / "out.pgm"
    assert main(["predict", str(img), "--weights", str(table1_weights), "--out", str(out), "--raw"]) == 0
    assert read_map(out).shape == (60, 90)
    raw = read_map(tmp_path / "out.f32")
    assert raw.shape == (60, 90) and np.all((raw > 0) & (raw < 1))


def test_predict_missing_weights_exit_3(tmp_path, capsys):
    img = tmp_path / "in.ppm"
    img.write_bytes(encode_pnm(np.zeros((8, 8, 3), np.uint8)))
    out = tmp_path / "out.pgm"
    assert main(["predict", str(img), "--weights", str(tmp_path / "none.tsal"), "--out", str(out)]) == 3
    assert not out.exists()
    assert "not found" in capsys.readouterr().err


def test_predict_corrupt_weights_exit_3(tmp_path):
    bad = tmp_path / "bad.tsal"
    bad.write_bytes(b"TSAL\x01\x00")
    img = tmp_path / "in.ppm"
    img.write_bytes(encode_pnm(np.zeros((8, 8, 3), np.uint8)))
    assert main(["predict", str(img), "--weights", str(bad), "--out", str(tmp_path / "o.pgm")]) == 3


def test_predict_corrupt_image_exit_2(tmp_path, table1_weights):
    img = tmp_path / "in.ppm"
    img.write_bytes(b"P6\n10 10\n255\n\x00\x01")
    out = tmp_path / "out.pgm"
    assert main(["predict", str(img), "--weights", str(table1_weights), "--out", str(out)]) == 2
    assert not out.exists()


# --- eval -------------------------------------------------------------------


def _write_blurred_predictions(root, pred_dir, sigma=19.0):
    pred_dir.mkdir()
    layout = DatasetLayout.open(root)
    for sid in layout.ids:
        sample = layout.load(sid)
        h, w = sample.fixations.shape
        write_f32(pred_dir / f"{sid}.f32", density_for(sample, sigma * min(h, w) / 480).astype(np.float32))
    return layout.ids


def test_eval_blurred_ground_truth_scores_high(tmp_path):
    root = make_dataset(tmp_path / "ds", n=3, h=48, w=64, fixations=6)
    ids = _write_blurred_predictions(root, tmp_path / "pred")
    assert main(["eval", str(tmp_path / "pred"), str(root), "--borji-splits", "10"]) == 0
    rows = read_report(tmp_path / "pred" / "report.csv")
    assert rows[0] == ["image"] + [METRIC_LABELS[m] for m in METRIC_ORDER]
    assert [r[0] for r in rows[1:]] == ids + ["mean"]
    judd = rows[0].index("AUC-Judd")
    assert all(float(r[judd]) >= 0.99 for r in rows[1:])
    kl = rows[0].index("KL")
    assert all(abs(float(r[kl])) < 1e-6 for r in rows[1:-1])


def test_eval_metric_subset_and_report_path(tmp_path):
    root = make_dataset(tmp_path / "ds", n=2)
    _write_blurred_predictions(root, tmp_path / "pred")
    report = tmp_path / "r.csv"
    assert main(["eval", str(tmp_path / "pred"), str(root), "--metrics", "nss", "cc", "--report", str(report)]) == 0
    assert read_report(report)[0] == ["image", "CC", "NSS"]


def test_eval_missing_prediction_nonzero(tmp_path, capsys):
    root = make_dataset(tmp_path / "ds", n=3)
    ids = _write_blurred_predictions(root, tmp_path / "pred")
    (tmp_path / "pred" / f"{ids[1]}.f32").unlink()
    assert main(["eval", str(tmp_path / "pred"), str(root), "--metrics", "cc"]) == 2
    assert ids[1] in capsys.readouterr().err


def test_eval_invalid_layout_exit_2(tmp_path):
    (tmp_path / "pred").mkdir()
    assert main(["eval", str(tmp_path / "pred"), str(tmp_path / "nothing")]) == 2


# --- train ------------------------------------------------------------------

TRAIN_FAST = ["--arch", "reduced", "--short-side", "48", "--sigma", "2"]


def test_train_counts_regions_and_writes_outputs(tmp_path, capsys):
    root = make_dataset(tmp_path / "ds", n=1, h=48, w=64)
    out = tmp_path / "m.tsal"
    assert main(["train", str(root), "--out", str(out), *TRAIN_FAST, "--batch-size", "16"]) == 0
    assert "48 training regions" in capsys.readouterr().out
    assert load_weights(out).spec == reduced_spec()
    assert load_adam_state(str(out) + ".adam").step == 3
    lines = (tmp_path / "m.tsal.loss.csv").read_text().splitlines()
    assert lines[0] == "step,epoch,batch_loss" and len(lines) == 4


def test_train_table1_single_step(tmp_path, capsys):
    root = make_dataset(tmp_path / "ds", n=1, h=480, w=640, fixations=20)
    out = tmp_path / "m.tsal"
    assert main(["train", str(root), "--out", str(out), "--max-steps", "1"]) == 0
    assert "48 training regions" in capsys.readouterr().out
    assert load_adam_state(str(out) + ".adam").step == 1


def test_train_resume_restores_step(tmp_path):
    root = make_dataset(tmp_path / "ds", n=1, h=48, w=64)
    first, second = tmp_path / "a.tsal", tmp_path / "b.tsal"
    assert main(["train", str(root), "--out", str(first), *TRAIN_FAST, "--batch-size", "48"]) == 0
    assert main(["train", str(root), "--out", str(second), *TRAIN_FAST, "--batch-size", "48",
                 "--resume", str(first), "--epochs", "2"]) == 0
    assert load_adam_state(str(second) + ".adam").step == 3


def test_train_same_seed_same_bytes(tmp_path):
    root = make_dataset(tmp_path / "ds", n=1, h=48, w=64)
    outs = []
    for name in ("x", "y"):
        out = tmp_path / f"{name}.tsal"
        assert main(["train", str(root), "--out", str(out), *TRAIN_FAST, "--batch-size", "8", "--seed", "4"]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_train_invalid_layout_exit_2(tmp_path):
    (tmp_path / "ds").mkdir()
    assert main(["train", str(tmp_path / "ds"), "--out", str(tmp_path / "m.tsal")]) == 2
    assert not (tmp_path / "m.tsal").exists()


def test_train_rejects_bad_config(tmp_path):
    root = make_dataset(tmp_path / "ds", n=1)
    assert main(["train", str(root), "--out", str(tmp_path / "m.tsal"), "--lr", "2"]) == 2


# --- cost / weights -----------------------------------------------------------


def test_cost_report(tmp_path, capsys):
    csv_path = tmp_path / "cost.csv"
    assert main(["cost", "--csv", str(csv_path)]) == 0
    out = capsys.readouterr().out
    assert "448,256" in out and "4,028,006,400" in out
    rows = read_report(csv_path)
    assert rows[0] == ["layer", "type", "params", "macs", "activation_bytes"]
    assert sum(int(r[3]) for r in rows[1:]) * 2 * 48 == 4_028_006_400


def test_cost_uses_weight_file_size(tmp_path, capsys, table1_weights):
    assert main(["cost", "--weights", str(table1_weights)]) == 0
    size = table1_weights.stat().st_size
    assert size == model_file_bytes(TABLE1, 0)
    assert f"{size:,}" in capsys.readouterr().out


def test_weights_inspect_and_convert(tmp_path, capsys, table1_weights):
    assert main(["weights", "inspect", str(table1_weights)]) == 0
    assert "parameters 448,256" in capsys.readouterr().out
    out = tmp_path / "half.tsal"
    assert main(["weights", "convert", str(table1_weights), "--out", str(out), "--encoding", "16"]) == 0
    assert out.stat().st_size == model_file_bytes(TABLE1, 1) < 1_048_576
    assert main(["weights", "inspect", str(tmp_path / "nope.tsal")]) == 3


def test_threads_env_invalid_exit_2(tmp_path, monkeypatch):
    monkeypatch.setenv("TILESAL_THREADS", "-1")
    assert main(["cost"]) == 2
