"""Command-line front end for the navigation stack.

Subcommands cover the pipeline end to end: collect excitation data, fit the
lifted model, calibrate the error quantile, run a closed-loop scenario, and
reproduce the benchmark experiments.  Every subcommand accepts --config with
a JSON file of defaults; explicit flags override config values, and help
text states each flag's default.  Relative output paths resolve against
$KOOPNAV_OUT_DIR when it is set.

Exit codes: 0 success, 2 usage error, 3 missing input artifact, 4 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_RUNTIME = 4

OUT_DIR_ENV = "KOOPNAV_OUT_DIR"


class MissingArtifactError(FileNotFoundError):
    pass


class UsageError(Exception):
    pass


def _out_path(path: str) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    root = os.environ.get(OUT_DIR_ENV)
    if root:
        return Path(root) / p
    return p


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingArtifactError(f"{what} not found: {path}")
    return p


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = _require_file(path, "config file")
    with open(p) as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict):
        raise ValueError(f"config file {path} must contain a JSON object")
    return payload


def _merged(args: argparse.Namespace, config: dict, key: str, default):
    """Flag value if given, else config value, else default."""
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _required(args: argparse.Namespace, config: dict, key: str, what: str):
    value = _merged(args, config, key, None)
    if value is None:
        raise UsageError(f"missing required option --{key.replace('_', '-')} ({what})")
    return value


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _resolve_scenario(name_or_path: str):
    from .pipeline import builtin_scenario, load_scenario

    if name_or_path.endswith(".json"):
        _require_file(name_or_path, "scenario file")
        return load_scenario(name_or_path)
    try:
        return builtin_scenario(name_or_path)
    except KeyError as exc:
        raise MissingArtifactError(str(exc)) from None


# ---------------------------------------------------------------------------
# Subcommand implementations


def _cmd_collect(args) -> int:
    from .pipeline import config_hash
    from .simulation import POLICIES, collect_dataset, dataset_to_csv

    config = _load_config(args.config)
    policy_name = _merged(args, config, "policy", "tracking")
    episodes = int(_merged(args, config, "episodes", 60))
    steps = int(_merged(args, config, "steps", 40))
    seed = int(_merged(args, config, "seed", 12345))
    dt = float(_merged(args, config, "dt", 0.1))
    if policy_name not in POLICIES:
        print(f"error: unknown policy {policy_name!r}; known: {sorted(POLICIES)}", file=sys.stderr)
        return EXIT_USAGE
    transitions = collect_dataset(POLICIES[policy_name](), episodes, steps, seed, dt=dt)
    digest = config_hash(
        {"policy": policy_name, "episodes": episodes, "steps": steps, "seed": seed, "dt": dt}
    )
    out = _out_path(args.out)
    _write(out, dataset_to_csv(transitions, {"config_hash": digest}))
    print(f"wrote {len(transitions)} transitions to {out} (config {digest})")
    return EXIT_OK


def _cmd_fit(args) -> int:
    from .koopman import KoopmanEdmdc
    from .pipeline import config_hash
    from .simulation import dataset_from_csv, transitions_to_arrays

    config = _load_config(args.config)
    data_path = _require_file(_required(args, config, "data", "dataset CSV"), "dataset CSV")
    ridge = float(_merged(args, config, "ridge", 1e-8))
    dictionary = _merged(args, config, "dictionary", "default11")
    transitions = dataset_from_csv(data_path.read_text())
    X, U, X_next = transitions_to_arrays(transitions)
    model = KoopmanEdmdc(dictionary=dictionary, ridge=ridge)
    model.fit(X, U, X_next)
    digest = config_hash({"data": str(data_path), "ridge": ridge, "dictionary": dictionary})
    payload = json.loads(model.to_json())
    payload["config_hash"] = digest
    out = _out_path(args.out)
    _write(out, json.dumps(payload, indent=2))
    print(
        f"fitted model on {model.n_samples_} transitions "
        f"(residual rms {model.residual_rms_:.3e}); wrote {out} (config {digest})"
    )
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    from .conformal import calibrate, calibration_to_json, collect_calibration_pairs, pairs_to_csv
    from .koopman import KoopmanEdmdc
    from .pipeline import config_hash
    from .simulation import WaypointTrackingPolicy, collect_dataset, dataset_from_csv

    config = _load_config(args.config)
    model_path = _require_file(_required(args, config, "model", "model JSON"), "model JSON")
    alpha = float(_merged(args, config, "alpha", 0.1))
    epsilon = float(_merged(args, config, "epsilon", 0.01))
    model = KoopmanEdmdc.from_json(model_path.read_text())
    data = _merged(args, config, "data", None)
    if data is not None:
        data_path = _require_file(data, "calibration CSV")
        transitions = dataset_from_csv(data_path.read_text())
        source = {"data": str(data_path)}
    else:
        episodes = int(_merged(args, config, "episodes", 30))
        steps = int(_merged(args, config, "steps", 40))
        seed = int(_merged(args, config, "seed", 54321))
        transitions = collect_dataset(WaypointTrackingPolicy(), episodes, steps, seed)
        source = {"episodes": episodes, "steps": steps, "seed": seed}
    result = calibrate(model, transitions, alpha, epsilon=epsilon)
    digest = config_hash(
        {"model": str(model_path), "alpha": alpha, "epsilon": epsilon, **source}
    )
    out = _out_path(args.out)
    _write(out, calibration_to_json(result, {"config_hash": digest}))
    if args.pairs_out:
        _write(_out_path(args.pairs_out), pairs_to_csv(collect_calibration_pairs(model, transitions)))
    if result.quantile.is_infinite:
        print(
            f"calibrated with n={result.n}: quantile is INFINITE at alpha={alpha}; "
            f"margins cannot be formed at this level",
        )
    else:
        print(
            f"calibrated with n={result.n}: quantile {result.quantile.value:.6f}, "
            f"margin {result.margin:.6f}; wrote {out} (config {digest})"
        )
    return EXIT_OK


def _cmd_run(args) -> int:
    import dataclasses as _dc

    from .conformal import calibration_from_json, conformal_quantile, tightening_margin
    from .koopman import KoopmanEdmdc
    from .mpc import MpcConfig
    from .pipeline import EXPERIMENT_SCHEMA, config_hash, randomize_scenario, run_closed_loop
    from .trajlog import (
        collision_count,
        heading_change_sum,
        min_clearance,
        path_length,
        solve_time_stats,
    )
    from .waypoints import RefGenConfig

    config = _load_config(args.config)
    model_path = _require_file(_required(args, config, "model", "model JSON"), "model JSON")
    model = KoopmanEdmdc.from_json(model_path.read_text())
    scenario = _resolve_scenario(_merged(args, config, "scenario", "corridor"))
    margin_free = bool(_merged(args, config, "margin_free", False))
    if margin_free:
        margin = 0.0
        alpha = None
    else:
        calib_path = _require_file(
            _required(args, config, "calibration", "calibration JSON"), "calibration JSON"
        )
        calibration = calibration_from_json(calib_path.read_text())
        alpha = _merged(args, config, "alpha", scenario.alpha)
        alpha = calibration.alpha if alpha is None else float(alpha)
        margin = tightening_margin(
            conformal_quantile(calibration.scores, alpha),
            calibration.lipschitz,
            calibration.epsilon,
        )
    seed = int(_merged(args, config, "seed", 0))
    scenario = randomize_scenario(scenario, seed)
    scenario = _dc.replace(scenario, alpha=alpha)
    mpc_config = MpcConfig(
        horizon=int(_merged(args, config, "horizon", scenario.horizon)),
        slack_norm=_merged(args, config, "slack_norm", "l1"),
    )
    refgen = RefGenConfig()
    digest = config_hash(
        {
            "scenario": scenario.to_dict(),
            "alpha": alpha,
            "margin": margin,
            "seed": seed,
            "horizon": mpc_config.horizon,
            "slack_norm": mpc_config.slack_norm,
        }
    )
    log = run_closed_loop(
        model,
        scenario,
        margin,
        mpc_config=mpc_config,
        refgen_config=refgen,
        use_waypoints=not bool(_merged(args, config, "no_waypoints", False)),
        metadata={"config_hash": digest},
    )
    out_name = args.out or f"trajectory_{scenario.name}_{seed}.csv"
    out = _out_path(out_name)
    _write(out, log.to_csv())
    if args.json_out:
        _write(_out_path(args.json_out), log.to_json())
    report = {
        "schema": EXPERIMENT_SCHEMA,
        "experiment": "run",
        "metadata": {
            "scenario": scenario.name,
            "seed": seed,
            "alpha": alpha,
            "margin": margin,
            "config_hash": digest,
        },
        "aggregates": {
            "completed": log.completed,
            "time_to_goal": log.completion_step,
            "collision_steps": collision_count(log),
            "min_clearance": min_clearance(log),
            "path_length": path_length(log),
            "heading_change_sum": heading_change_sum(log),
        },
    }
    _write(out.parent / "report.json", json.dumps(report, indent=2))
    stats = solve_time_stats(log)
    print(
        f"run {scenario.name} seed {seed}: "
        f"{'completed in ' + str(log.completion_step) + ' steps' if log.completed else 'DID NOT COMPLETE'}, "
        f"collision steps {collision_count(log)}, min clearance {min_clearance(log):.4f}, "
        f"median solve {stats['median']:.2f} ms; wrote {out} (config {digest})"
    )
    if not log.completed:
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_experiment(args) -> int:
    from .conformal import calibration_from_json
    from .koopman import KoopmanEdmdc
    from .pipeline import (
        CalibrationConfig,
        OfflineArtifacts,
        TrainingConfig,
        emit_report,
        experiment_confidence_sweep,
        experiment_rg_vs_soft,
        randomize_scenario,
        run_closed_loop,
    )

    config = _load_config(args.config)
    model_path = _require_file(_required(args, config, "model", "model JSON"), "model JSON")
    calib_path = _require_file(_required(args, config, "calibration", "calibration JSON"), "calibration JSON")
    model = KoopmanEdmdc.from_json(model_path.read_text())
    calibration = calibration_from_json(calib_path.read_text())
    artifacts = OfflineArtifacts(
        model,
        calibration,
        TrainingConfig(),
        CalibrationConfig(alpha=calibration.alpha, epsilon=calibration.epsilon),
    )
    n_seeds = int(_merged(args, config, "seeds", 10))
    out_dir = _out_path(_merged(args, config, "out_dir", "experiments"))
    out_dir.mkdir(parents=True, exist_ok=True)
    # A run directory is self-contained: the artifacts travel with the outputs.
    (out_dir / "model.json").write_text(model_path.read_text())
    (out_dir / "calibration.json").write_text(calib_path.read_text())

    if args.kind == "confidence-sweep":
        scenario = _resolve_scenario(_merged(args, config, "scenario", "sweep"))
        report = experiment_confidence_sweep(artifacts, scenario, seeds=range(n_seeds))
        paths = emit_report(report, out_dir, stem="report")
        print(
            f"confidence sweep over {n_seeds} seeds; wrote {paths['csv']}, {paths['json']}, "
            f"and {len(paths['trajectories'])} trajectory CSVs"
        )
        return EXIT_OK
    if args.kind == "rg-vs-soft":
        scenario = _resolve_scenario(_merged(args, config, "scenario", "comparison"))
        alpha = float(_merged(args, config, "alpha", 0.02))
        report = experiment_rg_vs_soft(artifacts, scenario, alpha=alpha, seeds=range(n_seeds))
        paths = emit_report(report, out_dir, stem="report")
        print(
            f"waypoint vs soft-only over {n_seeds} seeds; wrote {paths['csv']}, {paths['json']}, "
            f"and {len(paths['trajectories'])} trajectory CSVs"
        )
        return EXIT_OK
    if args.kind == "fig2":
        import dataclasses as _dc

        scenario = _resolve_scenario(_merged(args, config, "scenario", "corridor"))
        alpha = float(_merged(args, config, "alpha", scenario.alpha or 0.02))
        margin = artifacts.margin_for(alpha)
        rows = []
        all_ok = True
        for seed in range(n_seeds):
            variant = randomize_scenario(scenario, seed)
            variant = _dc.replace(variant, alpha=alpha)
            log = run_closed_loop(model, variant, margin)
            path = out_dir / f"trajectory_{scenario.name}_{seed}.csv"
            _write(path, log.to_csv())
            ok = log.completed
            all_ok = all_ok and ok
            rows.append({"seed": seed, "completed": ok, "steps": log.completion_step})
            print(
                f"seed {seed}: {'completed step ' + str(log.completion_step) if ok else 'FAILED'}; "
                f"wrote {path}"
            )
        report = {
            "experiment": "trajectory-reproduction",
            "scenario": scenario.name,
            "alpha": alpha,
            "margin": margin,
            "runs": rows,
        }
        _write(out_dir / "report.json", json.dumps(report, indent=2))
        return EXIT_OK if all_ok else EXIT_RUNTIME
    print(f"error: unknown experiment kind {args.kind!r}", file=sys.stderr)
    return EXIT_USAGE


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="koopnav",
        description="Conformal safe navigation with a lifted linear model and MPC.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="collect excitation data from the plant")
    p.add_argument("--config", help="JSON config file with defaults (default: none)")
    p.add_argument("--policy", help="excitation policy: random, random-walk, tracking (default: tracking)")
    p.add_argument("--episodes", type=int, help="number of rollouts (default: 60)")
    p.add_argument("--steps", type=int, help="steps per rollout (default: 40)")
    p.add_argument("--seed", type=int, help="rng seed (default: 12345)")
    p.add_argument("--dt", type=float, help="plant sampling time in seconds (default: 0.1)")
    p.add_argument("-o", "--out", required=True, help="output dataset CSV path (required)")
    p.set_defaults(func=_cmd_collect)

    p = sub.add_parser("fit", help="fit the lifted linear model from a dataset")
    p.add_argument("--config", help="JSON config file with defaults (default: none)")
    p.add_argument("--data", help="dataset CSV from `collect` (required)")
    p.add_argument("--ridge", type=float, help="ridge regularization weight (default: 1e-8)")
    p.add_argument("--dictionary", "--dict", dest="dictionary",
                   help="lifting dictionary name (default: default11)")
    p.add_argument("-o", "--out", default="model.json",
                   help="output model JSON path (default: model.json)")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("calibrate", help="score held-out data and form the quantile")
    p.add_argument("--config", help="JSON config file with defaults (default: none)")
    p.add_argument("--model", help="model JSON from `fit` (required)")
    p.add_argument("--data", help="held-out dataset CSV; omit to collect tracking-policy data here "
                                  "(default: collect internally)")
    p.add_argument("--episodes", type=int, help="episodes when collecting internally (default: 30)")
    p.add_argument("--steps", type=int, help="steps per episode when collecting internally (default: 40)")
    p.add_argument("--seed", type=int, help="rng seed when collecting internally (default: 54321)")
    p.add_argument("--alpha", type=float, help="miscoverage level (default: 0.1)")
    p.add_argument("--epsilon", type=float, help="strictness slack in meters (default: 0.01)")
    p.add_argument("-o", "--out", default="calibration.json",
                   help="output calibration JSON path (default: calibration.json)")
    p.add_argument("--pairs-out", help="optional CSV of per-pair calibration records (default: none)")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("run", help="run one closed-loop navigation task")
    p.add_argument("--config", help="JSON config file with defaults (default: none)")
    p.add_argument("--model", help="model JSON from `fit` (required)")
    p.add_argument("--calibration", help="calibration JSON from `calibrate` (required unless --margin-free)")
    p.add_argument("--scenario", help="builtin name (corridor, sweep, comparison) or JSON path "
                                      "(default: corridor)")
    p.add_argument("--alpha", type=float, help="miscoverage level (default: scenario's alpha)")
    p.add_argument("--margin-free", action="store_const", const=True, dest="margin_free",
                   help="run without constraint tightening (default: off)")
    p.add_argument("--seed", type=int, help="task jitter seed, 0 = nominal (default: 0)")
    p.add_argument("--horizon", type=int, help="MPC horizon steps (default: scenario's horizon)")
    p.add_argument("--slack-norm", choices=["l1", "linf"], dest="slack_norm",
                   help="slack penalty norm (default: l1)")
    p.add_argument("--no-waypoints", action="store_const", const=True, dest="no_waypoints",
                   help="track the goal directly instead of generated waypoints (default: off)")
    p.add_argument("-o", "--out",
                   help="trajectory CSV path (default: trajectory_<scenario>_<seed>.csv)")
    p.add_argument("--json-out", help="optional trajectory JSON path (default: none)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("experiment", help="reproduce a benchmark experiment")
    p.add_argument("kind", choices=["confidence-sweep", "rg-vs-soft", "fig2"],
                   help="confidence-sweep: margin ladder; rg-vs-soft: waypoint vs direct tracking; "
                        "fig2: per-seed corridor navigation runs")
    p.add_argument("--config", help="JSON config file with defaults (default: none)")
    p.add_argument("--model", help="model JSON from `fit` (required)")
    p.add_argument("--calibration", help="calibration JSON from `calibrate` (required)")
    p.add_argument("--scenario", help="builtin name or JSON path (default: per experiment kind)")
    p.add_argument("--alpha", type=float, help="miscoverage level where applicable (default: 0.02)")
    p.add_argument("--seeds", type=int, help="number of jitter seeds (default: 10)")
    p.add_argument("--out-dir", dest="out_dir", help="run directory for outputs (default: experiments)")
    p.set_defaults(func=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
