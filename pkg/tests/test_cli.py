import io

import numpy as np
import pytest

from ctdnet.cli import main
from ctdnet.data import read_pgm, write_pgm
from ctdnet.metrics import MetricsReport
from ctdnet.train import parse_log_line


def run(*argv):
    out = io.StringIO()
    return main(list(argv), out), out.getvalue()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A synthetic dataset and a two-step desk checkpoint, shared by the module."""
    root = tmp_path_factory.mktemp("cli")
    assert run("--seed", "5", "gen-data", "--out", str(root / "data"), "--count", "3", "--size", "64")[0] == 0
    cfg = root / "run.cfg"
    cfg.write_text("input_size = 64\nbatch_size = 2\n")
    code, text = run("--preset", "desk", "--config", str(cfg), "--threads", "1", "train",
                     "--data", str(root / "data"), "--steps", "2", "--out", str(root / "run"),
                     "--log", str(root / "train.log"))
    assert code == 0
    return root, text


def test_train_logs_one_line_per_step(trained):
    root, text = trained
    assert [parse_log_line(ln)["step"] for ln in text.splitlines()] == [1, 2]
    assert (root / "train.log").read_text().splitlines() == text.splitlines()
    assert (root / "run" / "final.ckpt").exists()


def test_infer_writes_maps_and_is_repeatable(trained, tmp_path):
    root, _ = trained
    images = [str(p) for p in sorted((root / "data" / "images").glob("*.png"))]
    ckpt = str(root / "run" / "final.ckpt")
    assert run("infer", "--checkpoint", ckpt, "--out", str(tmp_path / "a"), *images)[0] == 0
    assert run("infer", "--checkpoint", ckpt, "--out", str(tmp_path / "b"), *images)[0] == 0
    masks = sorted((tmp_path / "a" / "masks").glob("*.pgm"))
    assert len(masks) == len(images) == len(list((tmp_path / "a" / "boundaries").glob("*.pgm")))
    for m in masks:
        assert m.read_bytes() == (tmp_path / "b" / "masks" / m.name).read_bytes()
        assert read_pgm(m).shape == (64, 64)


def test_infer_continues_past_bad_files(trained, tmp_path):
    root, _ = trained
    good = str(next((root / "data" / "images").glob("*.png")))
    bad = tmp_path / "broken.png"
    bad.write_bytes(b"\x89PNG\r\n\x1a\n truncated")
    code, text = run("infer", "--checkpoint", str(root / "run" / "final.ckpt"),
                     "--out", str(tmp_path / "o"), str(bad), good)
    assert code == 2
    assert "wrote 1 of 2" in text
    assert len(list((tmp_path / "o" / "masks").glob("*.pgm"))) == 1


def test_eval_checkpoint_csv(trained, tmp_path):
    root, _ = trained
    code, text = run("eval", "--data", str(root / "data"), "--checkpoint",
                     str(root / "run" / "final.ckpt"), "--format", "csv")
    assert code == 0
    report = MetricsReport.from_csv(text)
    assert report.count == 3 and 0 <= report.mae <= 1


def test_eval_gt_as_predictions(trained):
    root, _ = trained
    code, text = run("eval", "--data", str(root / "data"), "--predictions", str(root / "data"), "--format", "csv")
    assert code == 0
    report = MetricsReport.from_csv(text)
    assert (report.mae, report.max_f, report.e_measure) == (0.0, 1.0, 1.0)


def test_eval_constant_half(trained, tmp_path):
    root, _ = trained
    for m in (root / "data" / "masks").glob("*.pgm"):
        write_pgm(tmp_path / "masks" / m.name, np.full((64, 64), 128, np.uint8))
    code, text = run("eval", "--data", str(root / "data"), "--predictions", str(tmp_path), "--format", "csv")
    assert code == 0
    assert abs(MetricsReport.from_csv(text).mae - 0.5) < 1 / 255


def test_eval_id_mismatch(trained, tmp_path):
    root, _ = trained
    write_pgm(tmp_path / "masks" / "99999.pgm", np.zeros((64, 64), np.uint8))
    assert run("eval", "--data", str(root / "data"), "--predictions", str(tmp_path))[0] == 1


def test_audit(capsys):
    code, text = run("audit", "M")
    assert code == 0 and "PASS CTD-M" in text
    code, text = run("audit", "S", "--format", "csv")
    assert text.startswith("module,params,cumulative")
    assert run("audit", "XL")[0] == 1


def test_grad_check_group():
    code, text = run("grad-check", "--group", "losses")
    assert code == 0
    assert all(line.startswith("ok") for line in text.splitlines())


@pytest.mark.parametrize("argv,code", [
    ((), 1),
    (("frobnicate",), 1),
    (("--preset", "huge", "audit", "M"), 1),
    (("infer", "--checkpoint", "/nonexistent.ckpt", "--out", "/tmp/x", "a.png"), 2),
    (("eval", "--data", "/nonexistent", "--predictions", "/nonexistent"), 2),
])
def test_exit_codes(argv, code, capsys):
    assert run(*argv)[0] == code


def test_bad_config_file_is_usage_error(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("learning_rate = 1\n")
    assert run("--config", str(cfg), "train", "--steps", "1")[0] == 1
