from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from plane_wave_inr import cli
from plane_wave_inr.data_io import PlaneWaveStack, load_stack, save_stack
from plane_wave_inr.errors import NumericalError
from plane_wave_inr.manifest import RunManifest
from plane_wave_inr.model import ModelArch, ModelParams, init_params, save_weights
from plane_wave_inr.phantom import generate_phantom

TOY_FLAGS = [
    "--layers", "2",
    "--width", "8",
    "--skip-layer", "2",
    "--embedding-size", "2",
    "--stripes", "2",
    "--log-every", "0",
]


@pytest.fixture
def stack_path(tmp_path: Path, small_spec) -> Path:
    path = tmp_path / "small.pwst"
    save_stack(generate_phantom(small_spec, seed=0), path)
    return path


def _train(stack_path: Path, out: Path, log_dir: Path, *extra: str) -> int:
    return cli.main(["train", str(stack_path), "--out", str(out), "--log-dir", str(log_dir), *TOY_FLAGS, *extra])


def _reject_constant(name: str) -> float:
    raise ValueError(f"non-standard JSON constant {name}")


def _pgm_size(path: Path) -> tuple[int, int]:
    _, width, height, _ = path.read_bytes().split(b"\n", 1)[0].split()
    return int(height), int(width)


def test_phantom_command_writes_default_stack(tmp_path: Path) -> None:
    out = tmp_path / "p.pwst"
    assert cli.main(["phantom", "--out", str(out), "--seed", "3"]) == 0
    stack = load_stack(out)
    assert (stack.num_angles, stack.height, stack.width) == (8, 64, 64)
    again = tmp_path / "q.pwst"
    assert cli.main(["phantom", "--out", str(again), "--seed", "3"]) == 0
    assert out.read_bytes() == again.read_bytes()


def test_phantom_missing_spec_fails(tmp_path: Path, capsys) -> None:
    code = cli.main(["phantom", "--spec", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x.pwst")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_train_one_iteration_writes_artifacts(tmp_path: Path, stack_path: Path) -> None:
    out = tmp_path / "run"
    assert _train(stack_path, out, tmp_path / "logs", "--iterations", "1") == 0
    with (out / "loss.csv").open() as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["iteration", "loss"] and len(rows) == 2
    manifest = RunManifest.read(out)
    assert manifest.config["iterations"] == 1
    assert manifest.config["grid"] == [24, 24]
    assert manifest.angle_span == (-8.0, 8.0)
    assert len(manifest.inputs["stack"]) == 64
    assert (out / "weights.pwin").exists()


def test_rerun_gives_identical_weights(tmp_path: Path, stack_path: Path) -> None:
    assert _train(stack_path, tmp_path / "a", tmp_path / "logs", "--iterations", "3") == 0
    assert _train(stack_path, tmp_path / "b", tmp_path / "logs", "--iterations", "3") == 0
    assert (tmp_path / "a" / "weights.pwin").read_bytes() == (tmp_path / "b" / "weights.pwin").read_bytes()
    assert RunManifest.read(tmp_path / "a").same_run(RunManifest.read(tmp_path / "b"))


def test_views_with_holdout_on_75_angle_stack(tmp_path: Path) -> None:
    angles = np.linspace(-16.0, 16.0, 75)
    stack = PlaneWaveStack(images=np.full((75, 16, 16), -30.0), angles_deg=angles)
    path = tmp_path / "wide.pwst"
    save_stack(stack, path)
    out = tmp_path / "run"
    code = _train(path, out, tmp_path / "logs", "--iterations", "1", "--views", "38", "--holdout-orthogonal")
    assert code == 0
    manifest = RunManifest.read(out)
    assert len(manifest.train_indices) == 38
    assert manifest.holdout_index == 37
    assert 37 not in manifest.train_indices


def test_invalid_flag_is_a_usage_error(stack_path: Path, tmp_path: Path) -> None:
    with pytest.raises(SystemExit) as info:
        cli.main(["train", str(stack_path), "--out", str(tmp_path), "--bogus"])
    assert info.value.code == 2


def test_bad_view_count_exits_with_usage_code(stack_path: Path, tmp_path: Path, capsys) -> None:
    assert _train(stack_path, tmp_path / "run", tmp_path / "logs", "--iterations", "1", "--views", "9") == 2
    assert "views" in capsys.readouterr().err


def test_infer_doubles_grid(tmp_path: Path, stack_path: Path) -> None:
    run = tmp_path / "run"
    assert _train(stack_path, run, tmp_path / "logs", "--iterations", "1") == 0
    weights = str(run / "weights.pwin")
    small, large = tmp_path / "s.pgm", tmp_path / "l.pgm"
    assert cli.main(["infer", weights, "--angle", "0", "--out", str(small)]) == 0
    assert cli.main(["infer", weights, "--angle", "0", "--height", "48", "--width", "48", "--out", str(large)]) == 0
    assert _pgm_size(small) == (24, 24)
    assert _pgm_size(large) == (48, 48)
    raw = tmp_path / "o.pgm"
    assert cli.main(["infer", weights, "--angle", "4", "--which", "o", "--format", "pgm16", "--out", str(raw)]) == 0
    assert raw.read_bytes().startswith(b"P5 24 24 65535\n")


def test_infer_with_unreadable_weights_fails(tmp_path: Path) -> None:
    bad = tmp_path / "bad.pwin"
    bad.write_bytes(b"not a weight file")
    assert cli.main(["infer", str(bad), "--angle", "0", "--height", "8", "--width", "8", "--out", str(tmp_path / "x.pgm")]) == 1


def test_eval_sanity_mode(tmp_path: Path, stack_path: Path) -> None:
    roi = tmp_path / "roi.txt"
    roi.write_text("bg rect snr_roi 2 2 6 6\n", encoding="utf-8")
    out = tmp_path / "eval"
    args = ["eval", str(stack_path), "--sanity", "--roi", str(roi), "--out", str(out), "--log-dir", str(tmp_path / "logs")]
    assert cli.main(args) == 0
    with (out / "metrics.csv").open() as f:
        ssim_rows = [r for r in csv.DictReader(f) if r["metric"] == "ssim"]
    assert len(ssim_rows) == 3 and all(float(r["value"]) == pytest.approx(1.0) for r in ssim_rows)
    body = json.loads((out / "metrics.json").read_text(), parse_constant=_reject_constant)
    assert body["aggregate"]["all"]["gt"]["ssim"]["mean"] == pytest.approx(1.0)
    assert body["aggregate"]["all"]["gt"]["psnr"]["mean"] is None


def test_eval_holdout_section(tmp_path: Path, stack_path: Path) -> None:
    run = tmp_path / "run"
    assert _train(stack_path, run, tmp_path / "logs", "--iterations", "1", "--holdout-orthogonal") == 0
    roi = tmp_path / "roi.txt"
    roi.write_text("bg rect snr_roi 2 2 6 6\n", encoding="utf-8")
    out = tmp_path / "eval"
    code = cli.main(
        ["eval", str(stack_path), "--weights", str(run / "weights.pwin"), "--roi", str(roi),
         "--views", "both", "--out", str(out), "--log-dir", str(tmp_path / "logs")]
    )
    assert code == 0
    with (out / "metrics.csv").open() as f:
        rows = list(csv.DictReader(f))
    holdout = [r for r in rows if r["section"] == "holdout"]
    assert {r["angle_index"] for r in holdout} == {"1"}
    assert "nearest_view" in {r["source"] for r in holdout}
    recorded = RunManifest.read(out / "eval_manifest.json")
    assert recorded.command == "eval" and recorded.holdout_index == 1
    assert set(recorded.inputs) == {"stack", "weights"}
    assert RunManifest.read(run).command == "train"


def test_eval_roi_outside_image_names_region(tmp_path: Path, stack_path: Path, capsys) -> None:
    roi = tmp_path / "roi.txt"
    roi.write_text("far_away rect snr_roi 20 20 10 10\n", encoding="utf-8")
    code = cli.main(["eval", str(stack_path), "--sanity", "--roi", str(roi), "--out", str(tmp_path / "e"),
                     "--log-dir", str(tmp_path / "logs")])
    assert code == 1
    assert "far_away" in capsys.readouterr().err


def test_report_from_byte_counts(capsys) -> None:
    assert cli.main(["report", "--model-bytes", "530000", "--stack-bytes", "8000000"]) == 0
    assert "ratio=15.09:1" in capsys.readouterr().out


def test_report_with_files(tmp_path: Path, stack_path: Path, capsys) -> None:
    assert cli.main(["report", "--weights", str(stack_path), "--stack", str(stack_path), "--encoding", "uint8"]) == 0
    out = capsys.readouterr().out
    assert f"stack_bytes={3 * 24 * 24}" in out


def test_infer_with_non_finite_weights_exits_with_numerical_code(tmp_path: Path, toy_arch: ModelArch, capsys) -> None:
    params = init_params(toy_arch, 0)
    weight, bias = params.layers[0]
    weight = weight.copy()
    weight[0, 0] = np.nan
    broken = ModelParams(arch=toy_arch, layers=((weight, bias), *params.layers[1:]))
    path = tmp_path / "nan.pwin"
    save_weights(broken, path)
    out = tmp_path / "x.pgm"
    code = cli.main(["infer", str(path), "--angle", "0", "--height", "12", "--width", "12", "--out", str(out)])
    assert code == 3
    assert "non-finite" in capsys.readouterr().err
    assert not out.exists()


def test_numerical_failure_exit_code(monkeypatch) -> None:
    def boom(args):
        raise NumericalError("diverged")

    monkeypatch.setitem(cli.COMMANDS, "report", boom)
    assert cli.main(["report"]) == 3


def test_runs_lists_and_prints_curve(tmp_path: Path, stack_path: Path, capsys) -> None:
    logs = tmp_path / "logs"
    assert _train(stack_path, tmp_path / "run", logs, "--iterations", "2", "--log-every", "1") == 0
    capsys.readouterr()
    assert cli.main(["runs", "--log-dir", str(logs)]) == 0
    listing = capsys.readouterr().out.strip().splitlines()
    assert len(listing) == 1 and listing[0].startswith("train_")
    run_id = listing[0].split()[0]
    assert cli.main(["runs", "--log-dir", str(logs), "--run-id", run_id, "--curve"]) == 0
    curve = capsys.readouterr().out.strip().splitlines()
    assert [line.split(",")[0] for line in curve] == ["1", "2"]


def test_profile_and_config_precedence(tmp_path: Path, stack_path: Path) -> None:
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"iterations": 2, "lam": 0.5}), encoding="utf-8")
    out = tmp_path / "run"
    code = cli.main(
        ["train", str(stack_path), "--out", str(out), "--log-dir", str(tmp_path / "logs"), "--profile", "desk",
         "--config", str(config), "--lam", "0.9", *TOY_FLAGS]
    )
    assert code == 0
    manifest = RunManifest.read(out)
    assert manifest.config["iterations"] == 2
    assert manifest.config["loss"]["lam"] == 0.9
    assert manifest.config["learning_rate"] == 2e-3
