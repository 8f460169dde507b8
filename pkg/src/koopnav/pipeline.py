"""End-to-end pipeline: offline identification and calibration, closed-loop
navigation runs, and the two benchmark experiments.

Offline: collect excitation data, fit the lifted linear model, score a
held-out calibration split, and form the tightening margin.  Online: at each
step linearize the obstacles, tighten by the margin, generate a reference
waypoint, solve the horizon QP, and apply the first control to the plant.
Scenarios carry an ordered target list; the loop advances to the next target
whenever the current one is reached and completes on the last.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from importlib import resources

import numpy as np

from .conformal import CalibrationResult, calibrate, calibration_to_json
from .halfspaces import DegenerateNormalError, build_constraint_set
from .koopman import KoopmanEdmdc
from .mpc import MPC_QP_SETTINGS, MpcConfig, MpcController
from .qp import QpSettings
from .simulation import (
    Control,
    ControlBounds,
    ObstacleSpec,
    State,
    collect_dataset,
    min_obstacle_distance,
    transitions_to_arrays,
    unicycle_step,
    POLICIES,
)
from .trajlog import StepRecord, TrajectoryLog, collision_count, pack_halfspaces
from .waypoints import RefGenConfig, WaypointResult, goal_reached, next_waypoint

SCENARIO_SCHEMA = "koopnav-scenario-v1"
EXPERIMENT_SCHEMA = "koopnav-experiment-v1"

CONFIDENCE_LEVELS = (0.98, 0.5, 0.1)  # plus the margin-free baseline


def config_hash(payload) -> str:
    """Short stable hash of a JSON-serializable configuration object."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Scenario


@dataclass(frozen=True)
class Scenario:
    """One navigation task: start pose, ordered targets, obstacle world.

    alpha None means the no-tightening baseline (margin forced to zero).
    dt, horizon, and seed are the run defaults recorded with the task;
    callers may override them per run.
    """

    name: str
    start: tuple[float, float, float]
    targets: tuple[tuple[float, float], ...]
    obstacles: tuple[ObstacleSpec, ...] = ()
    max_steps: int = 300
    goal_tolerance: float = 0.1
    alpha: float | None = 0.02
    dt: float = 0.1
    horizon: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.targets:
            raise ValueError("scenario needs at least one target")
        if self.max_steps <= 0:
            raise ValueError(f"max_steps must be > 0, got {self.max_steps}")
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1) or None, got {self.alpha}")
        if self.goal_tolerance <= 0:
            raise ValueError(f"goal_tolerance must be > 0, got {self.goal_tolerance}")

    def start_state(self) -> State:
        return State(*self.start)

    def targets_array(self) -> np.ndarray:
        return np.array(self.targets, dtype=float)

    def goal_array(self) -> np.ndarray:
        """Final target; the task completes when this one is reached."""
        return np.array(self.targets[-1], dtype=float)

    def to_dict(self) -> dict:
        return {
            "schema": SCENARIO_SCHEMA,
            "name": self.name,
            "start": list(self.start),
            "targets": [list(t) for t in self.targets],
            "max_steps": self.max_steps,
            "goal_tolerance": self.goal_tolerance,
            "alpha": self.alpha,
            "dt": self.dt,
            "horizon": self.horizon,
            "seed": self.seed,
            "obstacles": [
                {
                    "id": ob.id,
                    "radius": ob.radius,
                    "motion": ob.motion,
                    "center": list(ob.center),
                    "velocity": list(ob.velocity),
                    "amplitude": list(ob.amplitude),
                    "period": ob.period,
                    "inflation": ob.inflation,
                }
                for ob in self.obstacles
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Scenario":
        schema = payload.get("schema")
        if schema != SCENARIO_SCHEMA:
            raise ValueError(f"unsupported scenario schema {schema!r}; expected {SCENARIO_SCHEMA!r}")
        obstacles = tuple(
            ObstacleSpec(
                id=ob["id"],
                radius=ob["radius"],
                motion=ob.get("motion", "static"),
                center=tuple(ob.get("center", (0.0, 0.0))),
                velocity=tuple(ob.get("velocity", (0.0, 0.0))),
                amplitude=tuple(ob.get("amplitude", (0.0, 0.0))),
                period=ob.get("period", 1.0),
                inflation=ob.get("inflation", 0.0),
            )
            for ob in payload.get("obstacles", [])
        )
        return cls(
            name=payload["name"],
            start=tuple(payload["start"]),
            targets=tuple(tuple(t) for t in payload["targets"]),
            obstacles=obstacles,
            max_steps=payload.get("max_steps", 300),
            goal_tolerance=payload.get("goal_tolerance", 0.1),
            alpha=payload.get("alpha"),
            dt=payload.get("dt", 0.1),
            horizon=payload.get("horizon", 10),
            seed=payload.get("seed", 0),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return Scenario.from_json(fh.read())


def builtin_scenario(name: str) -> Scenario:
    """Load a packaged benchmark scenario by name (corridor, sweep, comparison)."""
    ref = resources.files("koopnav").joinpath(f"scenarios/{name}.json")
    try:
        text = ref.read_text()
    except FileNotFoundError:
        raise KeyError(f"no builtin scenario named {name!r}") from None
    return Scenario.from_json(text)


def randomize_scenario(scenario: Scenario, seed: int) -> Scenario:
    """Deterministically jitter the start pose and obstacle centers.

    Rejection-samples so the jittered start stays clear of every obstacle and
    no obstacle covers any target.  Seed 0 returns the scenario unchanged so
    the nominal task is always part of a seed sweep.
    """
    if seed == 0:
        return scenario
    rng = np.random.default_rng(seed)
    targets = scenario.targets_array()
    for _ in range(100):
        sx = float(scenario.start[0] + rng.uniform(-0.15, 0.15))
        sy = float(scenario.start[1] + rng.uniform(-0.15, 0.15))
        st = float(scenario.start[2] + rng.uniform(-0.2, 0.2))
        obstacles = []
        for ob in scenario.obstacles:
            cx = float(ob.center[0] + rng.uniform(-0.08, 0.08))
            cy = float(ob.center[1] + rng.uniform(-0.08, 0.08))
            obstacles.append(dataclasses.replace(ob, center=(cx, cy)))
        start_ok = all(
            float(np.linalg.norm(np.array([sx, sy]) - ob.center_at(0))) > ob.radius + 0.15
            for ob in obstacles
        )
        targets_ok = all(
            min(
                float(np.linalg.norm(target - ob.center_at(k)))
                for k in range(0, scenario.max_steps, 5)
            )
            > ob.radius + 0.2
            for ob in obstacles
            for target in targets
        )
        if start_ok and targets_ok:
            return dataclasses.replace(
                scenario, start=(sx, sy, st), obstacles=tuple(obstacles), seed=seed
            )
    raise RuntimeError(
        f"could not jitter scenario {scenario.name!r} with seed {seed} into a valid task"
    )


# ---------------------------------------------------------------------------
# Offline phase


@dataclass(frozen=True)
class TrainingConfig:
    policy: str = "tracking"
    episodes: int = 60
    steps: int = 40
    seed: int = 12345
    ridge: float = 1e-8
    dictionary: str = "default11"
    dt: float = 0.1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class CalibrationConfig:
    episodes: int = 30
    steps: int = 40
    seed: int = 54321
    alpha: float = 0.1
    epsilon: float = 0.01
    lipschitz: float = 1.0
    dt: float = 0.1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class OfflineArtifacts:
    """Fitted model plus calibration; everything the online phase consumes."""

    model: KoopmanEdmdc
    calibration: CalibrationResult
    training_config: TrainingConfig
    calibration_config: CalibrationConfig

    def margin_for(self, alpha: float | None) -> float:
        """Tightening margin at a confidence level; None means no tightening."""
        if alpha is None:
            return 0.0
        return self.calibration.margin_at(alpha)


def offline_phase(
    training: TrainingConfig = TrainingConfig(),
    calibration_cfg: CalibrationConfig = CalibrationConfig(),
    persist_dir=None,
) -> OfflineArtifacts:
    """Collect data, fit the lifted model, and calibrate the error quantile.

    Raises RuntimeError with a data-collection hint when the calibration
    quantile lands on the infinity atom.  With persist_dir set, writes
    model.json and calibration.json there.
    """
    policy_cls = POLICIES.get(training.policy)
    if policy_cls is None:
        raise KeyError(f"unknown policy {training.policy!r}; known: {sorted(POLICIES)}")
    train_transitions = collect_dataset(
        policy_cls(), training.episodes, training.steps, training.seed, dt=training.dt
    )
    X, U, X_next = transitions_to_arrays(train_transitions)
    model = KoopmanEdmdc(dictionary=training.dictionary, ridge=training.ridge)
    model.fit(X, U, X_next)

    calib_transitions = collect_dataset(
        policy_cls(),
        calibration_cfg.episodes,
        calibration_cfg.steps,
        calibration_cfg.seed,
        dt=calibration_cfg.dt,
    )
    result = calibrate(
        model,
        calib_transitions,
        calibration_cfg.alpha,
        lipschitz=calibration_cfg.lipschitz,
        epsilon=calibration_cfg.epsilon,
    )
    if result.quantile.is_infinite:
        raise RuntimeError(
            f"calibration quantile at confidence {1 - calibration_cfg.alpha} is "
            f"infinite with n={result.n} scores; increase calibration episodes "
            f"or lower the confidence level"
        )
    artifacts = OfflineArtifacts(model, result, training, calibration_cfg)
    if persist_dir is not None:
        out = Path(persist_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "model.json").write_text(model.to_json())
        (out / "calibration.json").write_text(calibration_to_json(result))
    return artifacts


# ---------------------------------------------------------------------------
# Closed loop


def run_closed_loop(
    model: KoopmanEdmdc,
    scenario: Scenario,
    margin: float,
    mpc_config: MpcConfig | None = None,
    refgen_config: RefGenConfig = RefGenConfig(),
    bounds: ControlBounds = ControlBounds(),
    settings: QpSettings = MPC_QP_SETTINGS,
    dt: float | None = None,
    use_waypoints: bool = True,
    use_warm_start: bool = True,
    metadata: dict | None = None,
) -> TrajectoryLog:
    """Run one navigation task through its target list or to the step limit.

    Each iteration: rebuild the tightened constraints at the measured state,
    generate a reference waypoint toward the current target, solve the
    horizon QP, and apply the first control to the plant.  Targets advance
    when reached within the scenario tolerance; the run completes on the
    last one.  use_waypoints=False tracks the current target directly,
    leaving obstacle avoidance entirely to the softened constraints.
    """
    if mpc_config is None:
        mpc_config = MpcConfig(horizon=scenario.horizon)
    if dt is None:
        dt = scenario.dt
    controller = MpcController(model, mpc_config, bounds, settings, use_warm_start=use_warm_start)
    targets = scenario.targets_array()
    target_idx = 0
    state = scenario.start_state()
    meta = {
        "scenario": scenario.name,
        "margin": margin,
        "alpha": "" if scenario.alpha is None else scenario.alpha,
        "seed": scenario.seed,
        "dt": dt,
        "horizon": mpc_config.horizon,
        "use_waypoints": use_waypoints,
        # Single-line form so downstream renderers can recover the task
        # geometry (targets, obstacle disks) from the CSV alone.
        "scenario_json": json.dumps(scenario.to_dict(), sort_keys=True, separators=(",", ":")),
    }
    if metadata:
        meta.update(metadata)
    log = TrajectoryLog(metadata=meta)

    for k in range(scenario.max_steps):
        goal = targets[target_idx]
        clearance = min_obstacle_distance(state, list(scenario.obstacles), k)
        try:
            constraints = build_constraint_set(
                list(scenario.obstacles), k, state.position, margin
            )
        except DegenerateNormalError:
            log.append(
                _record(k, target_idx, state, Control(0.0, 0.0), state, None,
                        clearance, margin, "", 0.0, 0.0,
                        "degenerate-normal", 0, 0.0, True, False, False, False)
            )
            state = unicycle_step(state, Control(0.0, 0.0), dt)
            continue

        if use_waypoints:
            wp = next_waypoint(state, goal, constraints, refgen_config)
        else:
            # Baseline arm: the reference is the lifted goal itself, held
            # constant for the whole run rather than re-aimed at each step.
            wp = WaypointResult(State(goal[0], goal[1], 0.0), False, False)

        result = controller.step(state, wp.waypoint, constraints)
        log.append(
            _record(
                k,
                target_idx,
                state,
                result.control,
                wp.waypoint,
                result.predicted_next,
                clearance,
                margin,
                pack_halfspaces(constraints.H, constraints.offsets),
                result.slack_shared_max,
                result.slack_step_max,
                result.status,
                result.iterations,
                result.solve_time * 1e3,
                result.fallback,
                wp.slid,
                wp.passthrough,
                result.warm_started,
            )
        )
        state = unicycle_step(state, result.control, dt)
        if goal_reached(state, targets[target_idx], scenario.goal_tolerance):
            if target_idx == len(targets) - 1:
                log.completed = True
                log.completion_step = k + 1
                break
            target_idx += 1

    final_k = log.n_steps
    log.append(
        _record(
            final_k,
            target_idx,
            state,
            Control(0.0, 0.0),
            state,
            None,
            min_obstacle_distance(state, list(scenario.obstacles), final_k),
            margin,
            "",
            0.0,
            0.0,
            "terminal",
            0,
            0.0,
            False,
            False,
            False,
            False,
        )
    )
    return log


def _record(
    k, target_idx, state, control, ref, predicted, clearance, margin, halfspaces,
    slack_shared, slack_step, status, iterations, solve_time_ms,
    fallback, slid, passthrough, warm,
) -> StepRecord:
    return StepRecord(
        k=k,
        target_index=target_idx,
        x=state.x,
        y=state.y,
        theta=state.theta,
        v=control.v,
        omega=control.omega,
        ref_x=ref.x,
        ref_y=ref.y,
        ref_theta=ref.theta,
        pred_x=None if predicted is None else predicted.x,
        pred_y=None if predicted is None else predicted.y,
        pred_theta=None if predicted is None else predicted.theta,
        min_clearance=clearance,
        margin=margin,
        halfspaces=halfspaces,
        slack_shared=slack_shared,
        slack_step=slack_step,
        qp_status=status,
        qp_iterations=iterations,
        solve_time_ms=solve_time_ms,
        fallback=fallback,
        slid=slid,
        passthrough=passthrough,
        warm_started=warm,
    )


# ---------------------------------------------------------------------------
# Experiments


@dataclass
class ExperimentReport:
    """Tabular experiment output: fixed columns, one row per run.

    Aggregate rows contain no wall-clock fields, so identical configs and
    seeds reproduce identical bytes; per-step solve times live in the
    attached trajectory logs.
    """

    name: str
    columns: list[str]
    rows: list[dict]
    metadata: dict = field(default_factory=dict)
    logs: dict[str, TrajectoryLog] = field(default_factory=dict)

    def to_csv(self) -> str:
        import csv as _csv
        import io as _io

        buf = _io.StringIO()
        buf.write(f"# schema={EXPERIMENT_SCHEMA}\n")
        buf.write(f"# experiment={self.name}\n")
        for key in sorted(self.metadata):
            buf.write(f"# {key}={self.metadata[key]}\n")
        writer = _csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_cell(row[c]) for c in self.columns])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": EXPERIMENT_SCHEMA,
                "experiment": self.name,
                "metadata": self.metadata,
                "columns": self.columns,
                "rows": self.rows,
            },
            indent=2,
        )


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def emit_report(
    report: ExperimentReport, out_dir, stem: str | None = None, write_logs: bool = True
) -> dict:
    """Write CSV and JSON report forms plus one trajectory CSV per run.

    Returns the written paths keyed by kind; trajectory files are named
    trajectory_<scenario>_<run key>.csv from the report's log keys.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or report.name
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    csv_path.write_text(report.to_csv())
    json_path.write_text(report.to_json())
    paths = {"csv": str(csv_path), "json": str(json_path), "trajectories": []}
    if write_logs:
        scenario = report.metadata.get("scenario", "run")
        digest = report.metadata.get("config_hash")
        for key, log in report.logs.items():
            meta = dict(log.metadata)
            if digest is not None:
                meta.setdefault("config_hash", digest)
            stamped = TrajectoryLog(
                metadata=meta,
                records=log.records,
                completed=log.completed,
                completion_step=log.completion_step,
            )
            traj_path = out / f"trajectory_{scenario}_{key}.csv"
            traj_path.write_text(stamped.to_csv())
            paths["trajectories"].append(str(traj_path))
    return paths


def _run_metrics(log: TrajectoryLog) -> dict:
    from .trajlog import heading_change_sum, min_clearance, path_length

    return {
        "completed": log.completed,
        "time_to_goal": log.completion_step,
        "collision_steps": collision_count(log),
        "min_clearance": min_clearance(log),
        "path_length": path_length(log),
        "heading_change_sum": heading_change_sum(log),
    }


SWEEP_COLUMNS = [
    "level",
    "alpha",
    "margin",
    "seed",
    "completed",
    "time_to_goal",
    "collision_steps",
    "min_clearance",
    "path_length",
    "heading_change_sum",
]


def experiment_confidence_sweep(
    artifacts: OfflineArtifacts,
    scenario: Scenario,
    seeds: range | list[int] = range(10),
    levels: tuple[float, ...] = CONFIDENCE_LEVELS,
    include_margin_free: bool = True,
    mpc_config: MpcConfig | None = None,
    refgen_config: RefGenConfig = RefGenConfig(),
    settings: QpSettings = MPC_QP_SETTINGS,
) -> ExperimentReport:
    """Rerun the same tasks at several confidence levels plus a margin-free
    baseline; the margin is re-derived from the stored calibration scores.

    Every level sees the identical seed-jittered task variants.
    """
    cases: list[tuple[str, float | None]] = [(f"{c:g}", 1.0 - c) for c in levels]
    if include_margin_free:
        cases.append(("margin-free", None))
    rows = []
    logs: dict[str, TrajectoryLog] = {}
    for label, alpha in cases:
        margin = artifacts.margin_for(alpha)
        for seed in seeds:
            variant = randomize_scenario(scenario, seed)
            variant = dataclasses.replace(variant, alpha=alpha)
            log = run_closed_loop(
                artifacts.model,
                variant,
                margin,
                mpc_config=mpc_config,
                refgen_config=refgen_config,
                settings=settings,
                metadata={"level": label},
            )
            logs[f"{label}_{seed}"] = log
            metrics = _run_metrics(log)
            rows.append(
                {
                    "level": label,
                    "alpha": "" if alpha is None else alpha,
                    "margin": margin,
                    "seed": seed,
                    **metrics,
                }
            )
    meta = {
        "scenario": scenario.name,
        "n_seeds": len(list(seeds)),
        "config_hash": config_hash(
            {
                "scenario": scenario.to_dict(),
                "training": artifacts.training_config.to_dict(),
                "calibration": artifacts.calibration_config.to_dict(),
                "levels": [list(levels), include_margin_free],
            }
        ),
    }
    return ExperimentReport("confidence-sweep", SWEEP_COLUMNS, rows, meta, logs)


COMPARE_COLUMNS = [
    "arm",
    "seed",
    "completed",
    "time_to_goal",
    "collision_steps",
    "min_clearance",
    "path_length",
    "heading_change_sum",
]


def experiment_rg_vs_soft(
    artifacts: OfflineArtifacts,
    scenario: Scenario,
    alpha: float = 0.02,
    seeds: range | list[int] = range(10),
    mpc_config: MpcConfig | None = None,
    refgen_config: RefGenConfig = RefGenConfig(),
    settings: QpSettings = MPC_QP_SETTINGS,
) -> ExperimentReport:
    """Waypoint-governed navigation versus direct goal tracking with soft
    constraints only, on identical task variants."""
    margin = artifacts.margin_for(alpha)
    rows = []
    logs: dict[str, TrajectoryLog] = {}
    for seed in seeds:
        variant = randomize_scenario(scenario, seed)
        variant = dataclasses.replace(variant, alpha=alpha)
        for arm, use_wp in (("waypoint", True), ("soft-only", False)):
            log = run_closed_loop(
                artifacts.model,
                variant,
                margin,
                mpc_config=mpc_config,
                refgen_config=refgen_config,
                settings=settings,
                use_waypoints=use_wp,
                metadata={"arm": arm},
            )
            logs[f"{arm}_{seed}"] = log
            rows.append({"arm": arm, "seed": seed, **_run_metrics(log)})
    meta = {
        "scenario": scenario.name,
        "alpha": alpha,
        "margin": margin,
        "n_seeds": len(list(seeds)),
        "config_hash": config_hash(
            {
                "scenario": scenario.to_dict(),
                "training": artifacts.training_config.to_dict(),
                "calibration": artifacts.calibration_config.to_dict(),
                "alpha": alpha,
            }
        ),
    }
    return ExperimentReport("rg-vs-soft", COMPARE_COLUMNS, rows, meta, logs)
