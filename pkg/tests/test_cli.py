import csv

import numpy as np
import pytest

from ldrsp.cli import main
from ldrsp.config import RunConfig, load_config, parse_config_text
from ldrsp.data import read_tensor_file, write_tensor_file
from ldrsp.models import build_mlp_classifier, build_quadratic_toy
from ldrsp.train import load_checkpoint, save_checkpoint

SMALL = """# tiny run
manifest = data/manifest.txt
epochs = 2
batch_size = 16
hidden_g = 10
hidden_d = 8
eta = 0.1
steps = 3
"""


@pytest.fixture
def run_setup(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "data"), "--n", "120", "--d", "8", "--labels", "6",
                 "--intervals", "1", "--seed", "3"]) == 0
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL + f"out_dir = {tmp_path / 'runs'}\n")
    return tmp_path, cfg


def _train(cfg, *extra):
    assert main(["train", str(cfg), *extra]) == 0
    return load_config(cfg).run_dir()


def test_train_outputs_and_determinism(run_setup):
    tmp_path, cfg = run_setup
    run_dir = _train(cfg)
    for name in ("config.echo", "metrics.csv", "checkpoints/best/meta.json", "refined/test_refined.spt"):
        assert (run_dir / name).exists(), name
    first = (run_dir / "metrics.csv").read_bytes()
    _train(cfg)
    assert (run_dir / "metrics.csv").read_bytes() == first
    # re-running from the echoed config reproduces the run
    echo = tmp_path / "echo.cfg"
    echo.write_text((run_dir / "config.echo").read_text())
    assert main(["train", str(echo)]) == 0
    assert (run_dir / "metrics.csv").read_bytes() == first


def test_flag_overrides_config(run_setup):
    _, cfg = run_setup
    run_dir = _train(cfg, "--epochs", "1", "--seed", "5")
    assert run_dir.name.endswith("seed0")  # digest/seed computed from the file alone
    echoed = parse_config_text(next(run_dir.parent.glob("*-seed5")).joinpath("config.echo").read_text())
    assert echoed.epochs == 1 and echoed.seed == 5


def test_missing_dataset_exit_2(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"manifest = {tmp_path / 'absent.txt'}\nout_dir = {tmp_path}\n")
    assert main(["train", str(cfg)]) == 2
    assert "absent.txt" in capsys.readouterr().err


def test_unknown_config_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("learning_rate = 0.1\n")
    assert main(["train", str(cfg)]) == 2
    assert "run.cfg:1" in capsys.readouterr().err


def test_eval_reports_and_is_repeatable(run_setup, capsys):
    _, cfg = run_setup
    ckpt = _train(cfg) / "checkpoints" / "best"
    capsys.readouterr()
    assert main(["eval", str(ckpt), "--split", "val", "--steps", "0"]) == 0
    out = capsys.readouterr().out
    with open(ckpt / "eval_val.csv", newline="") as fh:
        row = list(csv.DictReader(fh))[0]
    assert float(row["raw_score"]) == float(row["refined_score"])
    assert 0.0 <= float(row["raw_score"]) <= 100.0
    assert main(["eval", str(ckpt), "--split", "val", "--steps", "0"]) == 0
    assert capsys.readouterr().out == out


def test_refine_steps_zero_and_trace(run_setup, tmp_path):
    _, cfg = run_setup
    ckpt = _train(cfg) / "checkpoints" / "best"
    x = np.random.default_rng(0).normal(size=(5, 8))
    write_tensor_file(tmp_path / "x.spt", x)
    assert main(["refine", str(ckpt), str(tmp_path / "x.spt"), "--out", str(tmp_path / "y0.spt"),
                 "--steps", "0"]) == 0
    G, _, _ = load_checkpoint(ckpt)
    np.testing.assert_array_equal(read_tensor_file(tmp_path / "y0.spt"), G.predict(x))
    assert main(["refine", str(ckpt), str(tmp_path / "x.spt"), "--out", str(tmp_path / "y.spt"),
                 "--steps", "7", "--trace", str(tmp_path / "t.csv")]) == 0
    with open(tmp_path / "t.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["step"]) for r in rows] == list(range(8))


def test_refine_shape_mismatch_exit_2(run_setup, tmp_path):
    _, cfg = run_setup
    ckpt = _train(cfg) / "checkpoints" / "best"
    write_tensor_file(tmp_path / "x.spt", np.zeros((2, 3)))
    assert main(["refine", str(ckpt), str(tmp_path / "x.spt"), "--out", str(tmp_path / "y.spt")]) == 2


def test_refine_quadratic_toy_reaches_analytic_max(tmp_path):
    center = np.array([0.2, 0.6, 0.9, 0.4])
    G = build_mlp_classifier(3, 4, 5, seed=0)
    D = build_quadratic_toy(center)
    ckpt = save_checkpoint(tmp_path / "toy", G, D, meta={"inference": {"eta": 0.1, "steps": 200,
                                                                        "normalized": False}})
    write_tensor_file(tmp_path / "x.spt", np.zeros((2, 3)))
    assert main(["refine", str(ckpt), str(tmp_path / "x.spt"), "--out", str(tmp_path / "y.spt"),
                 "--trace", str(tmp_path / "t.csv")]) == 0
    with open(tmp_path / "t.csv", newline="") as fh:
        final = float(list(csv.DictReader(fh))[-1]["mean_score"])
    assert abs(final - 1.0) < 1e-3


def test_inspect_paths(run_setup, capsys):
    _, cfg = run_setup
    run_dir = _train(cfg)
    for path in (run_dir / "checkpoints" / "best", run_dir / "metrics.csv", run_dir / "refined/test_raw.spt"):
        assert main(["inspect", str(path)]) == 0
    assert "best refined epoch" in capsys.readouterr().out
    assert main(["inspect", str(run_dir / "missing")]) == 2


def test_synth_rejects_bad_noise(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--noise", "0.7"]) == 2


def test_config_digest_ignores_seed_and_out_dir():
    a = RunConfig(seed=1, out_dir="x")
    b = RunConfig(seed=2, out_dir="y")
    assert a.digest() == b.digest()
    assert RunConfig(epochs=3).digest() != a.digest()
    assert parse_config_text(a.to_text()) == a


def test_commands_do_not_mutate_inputs(run_setup, tmp_path):
    _, cfg = run_setup
    ckpt = _train(cfg) / "checkpoints" / "best"
    write_tensor_file(tmp_path / "x.spt", np.random.default_rng(0).normal(size=(3, 8)))
    inputs = [cfg, tmp_path / "x.spt", *sorted((tmp_path / "data").iterdir()), *sorted(ckpt.iterdir())]
    before = {p: p.read_bytes() for p in inputs if p.is_file()}
    assert main(["refine", str(ckpt), str(tmp_path / "x.spt"), "--out", str(tmp_path / "y.spt")]) == 0
    assert main(["eval", str(ckpt), "--split", "val", "--out", str(tmp_path / "e.csv")]) == 0
    assert main(["inspect", str(ckpt)]) == 0
    assert {p: p.read_bytes() for p in before} == before
