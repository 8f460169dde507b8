
from __future__ import annotations

import argparse
import json

import pytest

from koopnav.cli import build_parser, main
from koopnav.conformal import calibration_from_json, pairs_from_csv
from koopnav.pipeline import Scenario
from koopnav.simulation import ObstacleSpec, dataset_from_csv
from koopnav.trajlog import TrajectoryLog


@pytest.fixture(scope="module")
def cli_dir(tmp_path_factory):
    """Artifacts built through the CLI itself: dataset, model, calibration."""
    d = tmp_path_factory.mktemp("cli")
    data = d / "data.csv"
    model = d / "model.json"
    calib = d / "calibration.json"
    assert main(["collect", "-o", str(data), "--episodes", "8", "--seed", "7"]) == 0
    assert main(["fit", "--data", str(data), "-o", str(model)]) == 0
    assert (
        main(
            [
                "calibrate",
                "--model", str(model),
                "--episodes", "4",
                "--alpha", "0.1",
                "-o", str(calib),
            ]
        )
        == 0
    )
    scenario = Scenario(
        name="cli-tiny",
        start=(-0.6, 0.0, 0.0),
        targets=((0.7, 0.0),),
        obstacles=(ObstacleSpec(id="side", radius=0.15, center=(0.1, 0.45)),),
        max_steps=60,
        alpha=0.1,
        horizon=8,
    )
    scenario_path = d / "scenario.json"
    scenario_path.write_text(scenario.to_json())
    return {"dir": d, "data": data, "model": model, "calib": calib, "scenario": scenario_path}


def test_collect_writes_parseable_dataset(cli_dir, capsys) -> None:
    transitions = dataset_from_csv(cli_dir["data"].read_text())
    assert len(transitions) == 8 * 40
    out = cli_dir["data"].read_text()
    assert "config_hash=" in out


def test_collect_is_byte_deterministic(tmp_path) -> None:
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    args = ["collect", "--episodes", "2", "--steps", "15", "--seed", "3"]
    assert main(args + ["-o", str(a)]) == 0
    assert main(args + ["-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_collect_requires_out_flag() -> None:
    assert main(["collect"]) == 2


def test_collect_rejects_unknown_policy(tmp_path, capsys) -> None:
    code = main(["collect", "-o", str(tmp_path / "x.csv"), "--policy", "zigzag"])
    assert code == 2
    assert "unknown policy" in capsys.readouterr().err


def test_collect_config_file_defaults_and_flag_override(tmp_path) -> None:
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"episodes": 3, "steps": 10, "seed": 1}))
    out = tmp_path / "d.csv"
    code = main(["collect", "--config", str(cfg), "--steps", "12", "-o", str(out)])
    assert code == 0
    assert len(dataset_from_csv(out.read_text())) == 3 * 12


def test_collect_rejects_non_object_config(tmp_path, capsys) -> None:
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2]")
    code = main(["collect", "--config", str(cfg), "-o", str(tmp_path / "d.csv")])
    assert code == 4
    assert "JSON object" in capsys.readouterr().err


def test_fit_reports_and_stamps_config_hash(cli_dir, capsys) -> None:
    payload = json.loads(cli_dir["model"].read_text())
    assert payload["config_hash"]
    assert len(payload["config_hash"]) == 12


def test_fit_requires_data_flag(capsys) -> None:
    assert main(["fit"]) == 2
    assert "--data" in capsys.readouterr().err


def test_fit_missing_dataset_is_artifact_error(tmp_path, capsys) -> None:
    code = main(["fit", "--data", str(tmp_path / "absent.csv")])
    assert code == 3
    assert "not found" in capsys.readouterr().err


def test_fit_rejects_malformed_dataset(tmp_path, capsys) -> None:
    bad = tmp_path / "bad.csv"
    bad.write_text("not,a,dataset\n1,2,3\n")
    code = main(["fit", "--data", str(bad), "-o", str(tmp_path / "m.json")])
    assert code == 4


def test_calibrate_output_round_trips(cli_dir) -> None:
    result = calibration_from_json(cli_dir["calib"].read_text())
    assert result.alpha == 0.1
    assert not result.quantile.is_infinite
    assert result.margin > 0.01


def test_calibrate_missing_model_is_artifact_error(tmp_path, capsys) -> None:
    code = main(["calibrate", "--model", str(tmp_path / "no.json")])
    assert code == 3


def test_calibrate_writes_pairs_csv(cli_dir, tmp_path) -> None:
    pairs_path = tmp_path / "pairs.csv"
    code = main(
        [
            "calibrate",
            "--model", str(cli_dir["model"]),
            "--episodes", "2",
            "--steps", "20",
            "-o", str(tmp_path / "c.json"),
            "--pairs-out", str(pairs_path),
        ]
    )
    assert code == 0
    pairs = pairs_from_csv(pairs_path.read_text())
    assert len(pairs) == 2 * 20
    assert all(p.score >= 0 for p in pairs)


def test_run_margin_free_completes(cli_dir, tmp_path, capsys) -> None:
    out = tmp_path / "traj.csv"
    code = main(
        [
            "run",
            "--model", str(cli_dir["model"]),
            "--margin-free",
            "--scenario", str(cli_dir["scenario"]),
            "-o", str(out),
        ]
    )
    assert code == 0
    assert "completed in" in capsys.readouterr().out
    log = TrajectoryLog.from_csv(out.read_text())
    assert log.completed
    assert log.metadata["margin"] == "0.0"
    assert log.metadata["config_hash"]
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["aggregates"]["completed"] is True
    assert report["metadata"]["margin"] == 0.0


def test_run_with_calibration_applies_margin(cli_dir, tmp_path) -> None:
    out = tmp_path / "traj.csv"
    code = main(
        [
            "run",
            "--model", str(cli_dir["model"]),
            "--calibration", str(cli_dir["calib"]),
            "--alpha", "0.1",
            "--scenario", str(cli_dir["scenario"]),
            "-o", str(out),
        ]
    )
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["metadata"]["margin"] > 0.01
    assert report["metadata"]["alpha"] == 0.1


def test_run_requires_calibration_without_margin_free(cli_dir, tmp_path, capsys) -> None:
    code = main(
        [
            "run",
            "--model", str(cli_dir["model"]),
            "--scenario", str(cli_dir["scenario"]),
            "-o", str(tmp_path / "t.csv"),
        ]
    )
    assert code == 2
    assert "--calibration" in capsys.readouterr().err


def test_run_incomplete_task_exits_nonzero(cli_dir, tmp_path, capsys) -> None:
    hopeless = Scenario(
        name="hopeless",
        start=(0.0, 0.0, 0.0),
        targets=((30.0, 0.0),),
        max_steps=5,
        alpha=None,
    )
    path = tmp_path / "hopeless.json"
    path.write_text(hopeless.to_json())
    code = main(
        [
            "run",
            "--model", str(cli_dir["model"]),
            "--margin-free",
            "--scenario", str(path),
            "-o", str(tmp_path / "t.csv"),
        ]
    )
    assert code == 4
    assert "DID NOT COMPLETE" in capsys.readouterr().out


def test_run_rerun_is_deterministic_modulo_solve_times(cli_dir, tmp_path) -> None:
    def masked(path) -> str:
        lines = path.read_text().splitlines()
        out = []
        for line in lines:
            if line.startswith("#") or line.startswith("k,"):
                out.append(line)
            else:
                cells = line.split(",")
                cells[20] = ""
                out.append(",".join(cells))
        return "\n".join(out)

    args = [
        "run",
        "--model", str(cli_dir["model"]),
        "--margin-free",
        "--scenario", str(cli_dir["scenario"]),
    ]
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    assert main(args + ["-o", str(a)]) == 0
    assert main(args + ["-o", str(b)]) == 0
    assert masked(a) == masked(b)


def test_out_dir_env_resolves_relative_paths(tmp_path, monkeypatch) -> None:
    monkeypatch.setenv("KOOPNAV_OUT_DIR", str(tmp_path))
    code = main(["collect", "--episodes", "1", "--steps", "5", "-o", "nested/data.csv"])
    assert code == 0
    assert (tmp_path / "nested" / "data.csv").exists()


def test_out_dir_env_ignored_for_absolute_paths(tmp_path, monkeypatch) -> None:
    monkeypatch.setenv("KOOPNAV_OUT_DIR", str(tmp_path / "elsewhere"))
    target = tmp_path / "direct.csv"
    code = main(["collect", "--episodes", "1", "--steps", "5", "-o", str(target)])
    assert code == 0
    assert target.exists()
    assert not (tmp_path / "elsewhere").exists()


def test_experiment_missing_model_is_artifact_error(tmp_path, capsys) -> None:
    code = main(
        [
            "experiment", "rg-vs-soft",
            "--model", str(tmp_path / "no.json"),
            "--calibration", str(tmp_path / "no2.json"),
        ]
    )
    assert code == 3


def test_experiment_rejects_unknown_kind(cli_dir) -> None:
    code = main(
        [
            "experiment", "bogus",
            "--model", str(cli_dir["model"]),
            "--calibration", str(cli_dir["calib"]),
        ]
    )
    assert code == 2


def test_experiment_rg_vs_soft_smoke(cli_dir, tmp_path) -> None:
    out_dir = tmp_path / "exp"
    code = main(
        [
            "experiment", "rg-vs-soft",
            "--model", str(cli_dir["model"]),
            "--calibration", str(cli_dir["calib"]),
            "--scenario", str(cli_dir["scenario"]),
            "--alpha", "0.1",
            "--seeds", "1",
            "--out-dir", str(out_dir),
        ]
    )
    assert code == 0
    assert (out_dir / "report.csv").exists()
    assert (out_dir / "report.json").exists()
    assert (out_dir / "model.json").exists()
    assert (out_dir / "calibration.json").exists()
    trajectories = sorted(p.name for p in out_dir.glob("trajectory_*.csv"))
    assert trajectories == [
        "trajectory_cli-tiny_soft-only_0.csv",
        "trajectory_cli-tiny_waypoint_0.csv",
    ]
    payload = json.loads((out_dir / "report.json").read_text())
    assert payload["experiment"] == "rg-vs-soft"
    assert len(payload["rows"]) == 2


def test_experiment_fig2_smoke(cli_dir, tmp_path) -> None:
    out_dir = tmp_path / "fig2"
    code = main(
        [
            "experiment", "fig2",
            "--model", str(cli_dir["model"]),
            "--calibration", str(cli_dir["calib"]),
            "--scenario", str(cli_dir["scenario"]),
            "--seeds", "1",
            "--out-dir", str(out_dir),
        ]
    )
    assert code == 0
    assert (out_dir / "trajectory_cli-tiny_0.csv").exists()
    report = json.loads((out_dir / "report.json").read_text())
    assert report["runs"] == [{"seed": 0, "completed": True, "steps": report["runs"][0]["steps"]}]


def test_no_arguments_is_usage_error() -> None:
    assert main([]) == 2


def test_help_text_documents_defaults() -> None:
    parser = build_parser()
    sub_action = next(
        a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
    )
    for name, sub in sub_action.choices.items():
        for action in sub._actions:
            if isinstance(action, argparse._HelpAction):
                continue
            if not action.option_strings:
                continue
            assert action.help, f"{name} {action.option_strings} lacks help text"
            marker = "(default:" in action.help or "(required" in action.help
            assert marker, f"{name} {action.option_strings}: {action.help!r}"
