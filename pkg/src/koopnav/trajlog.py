"""Closed-loop trajectory records, persistence, and summary metrics.

A run produces one TrajectoryLog: per-step records plus run metadata.  CSV
output carries the metadata as `# key=value` comment lines above a fixed
column header, floats serialized by repr so identical runs emit identical
bytes.  Metric helpers are pure functions over a log.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .simulation import wrap_angle

TRAJECTORY_SCHEMA = "koopnav-trajectory-v1"

CSV_COLUMNS = [
    "k",
    "target_index",
    "x",
    "y",
    "theta",
    "v",
    "omega",
    "ref_x",
    "ref_y",
    "ref_theta",
    "pred_x",
    "pred_y",
    "pred_theta",
    "min_clearance",
    "margin",
    "halfspaces",
    "slack_shared",
    "slack_step",
    "qp_status",
    "qp_iterations",
    "solve_time_ms",
    "fallback",
    "slid",
    "passthrough",
    "warm_started",
]


def pack_halfspaces(rows: np.ndarray, offsets: np.ndarray) -> str:
    """Serialize half-space rows as `a:b:c` triples joined by semicolons."""
    parts = []
    for i in range(len(offsets)):
        parts.append(f"{float(rows[i, 0])!r}:{float(rows[i, 1])!r}:{float(offsets[i])!r}")
    return ";".join(parts)


def parse_halfspaces(packed: str) -> list[tuple[float, float, float]]:
    """Inverse of pack_halfspaces; empty string means no active constraint."""
    if not packed:
        return []
    triples = []
    for part in packed.split(";"):
        a, b, c = part.split(":")
        triples.append((float(a), float(b), float(c)))
    return triples


@dataclass(frozen=True)
class StepRecord:
    """Everything logged about one closed-loop step.

    halfspaces carries the step's tightened constraint geometry in the
    pack_halfspaces format; margin is the tightening applied to every row.
    """

    k: int
    target_index: int
    x: float
    y: float
    theta: float
    v: float
    omega: float
    ref_x: float
    ref_y: float
    ref_theta: float
    pred_x: float | None
    pred_y: float | None
    pred_theta: float | None
    min_clearance: float
    margin: float
    halfspaces: str
    slack_shared: float
    slack_step: float
    qp_status: str
    qp_iterations: int
    solve_time_ms: float
    fallback: bool
    slid: bool
    passthrough: bool
    warm_started: bool


@dataclass
class TrajectoryLog:
    """One closed-loop run: ordered step records plus run metadata."""

    metadata: dict
    records: list[StepRecord] = field(default_factory=list)
    completed: bool = False
    completion_step: int | None = None

    @property
    def n_steps(self) -> int:
        return len(self.records)

    def append(self, record: StepRecord):
        self.records.append(record)

    # -- persistence --------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema={TRAJECTORY_SCHEMA}\n")
        meta = dict(self.metadata)
        meta["completed"] = self.completed
        meta["completion_step"] = self.completion_step
        for key in sorted(meta):
            buf.write(f"# {key}={_meta_str(meta[key])}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.records:
            writer.writerow(
                [
                    r.k,
                    r.target_index,
                    repr(r.x),
                    repr(r.y),
                    repr(r.theta),
                    repr(r.v),
                    repr(r.omega),
                    repr(r.ref_x),
                    repr(r.ref_y),
                    repr(r.ref_theta),
                    "" if r.pred_x is None else repr(r.pred_x),
                    "" if r.pred_y is None else repr(r.pred_y),
                    "" if r.pred_theta is None else repr(r.pred_theta),
                    repr(r.min_clearance),
                    repr(r.margin),
                    r.halfspaces,
                    repr(r.slack_shared),
                    repr(r.slack_step),
                    r.qp_status,
                    r.qp_iterations,
                    repr(r.solve_time_ms),
                    int(r.fallback),
                    int(r.slid),
                    int(r.passthrough),
                    int(r.warm_started),
                ]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrajectoryLog":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# schema="):
            raise ValueError("missing schema comment line in trajectory CSV")
        schema = lines[0][len("# schema=") :]
        if schema != TRAJECTORY_SCHEMA:
            raise ValueError(
                f"unsupported trajectory schema {schema!r}; expected {TRAJECTORY_SCHEMA!r}"
            )
        metadata = {}
        body_start = 1
        for i, line in enumerate(lines[1:], start=1):
            if line.startswith("# "):
                key, _, value = line[2:].partition("=")
                metadata[key] = value
                body_start = i + 1
            else:
                break
        reader = csv.reader(lines[body_start:])
        header = next(reader)
        if header != CSV_COLUMNS:
            missing = [c for c in CSV_COLUMNS if c not in header]
            raise ValueError(f"trajectory CSV missing columns: {missing}")
        completed = metadata.pop("completed", "False") == "True"
        comp = metadata.pop("completion_step", "")
        completion_step = int(comp) if comp not in ("", "None") else None
        log = cls(metadata=metadata, completed=completed, completion_step=completion_step)
        for row in reader:
            if not row:
                continue
            log.append(
                StepRecord(
                    k=int(row[0]),
                    target_index=int(row[1]),
                    x=float(row[2]),
                    y=float(row[3]),
                    theta=float(row[4]),
                    v=float(row[5]),
                    omega=float(row[6]),
                    ref_x=float(row[7]),
                    ref_y=float(row[8]),
                    ref_theta=float(row[9]),
                    pred_x=float(row[10]) if row[10] else None,
                    pred_y=float(row[11]) if row[11] else None,
                    pred_theta=float(row[12]) if row[12] else None,
                    min_clearance=float(row[13]),
                    margin=float(row[14]),
                    halfspaces=row[15],
                    slack_shared=float(row[16]),
                    slack_step=float(row[17]),
                    qp_status=row[18],
                    qp_iterations=int(row[19]),
                    solve_time_ms=float(row[20]),
                    fallback=bool(int(row[21])),
                    slid=bool(int(row[22])),
                    passthrough=bool(int(row[23])),
                    warm_started=bool(int(row[24])),
                )
            )
        return log

    def to_json(self) -> str:
        payload = {
            "schema": TRAJECTORY_SCHEMA,
            "metadata": self.metadata,
            "completed": self.completed,
            "completion_step": self.completion_step,
            "records": [vars(r) | {"k": r.k} for r in self.records],
        }
        return json.dumps(payload, indent=2)


def _meta_str(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# Metrics


def collision_count(log: TrajectoryLog) -> int:
    """Number of steps with negative signed clearance."""
    return sum(1 for r in log.records if r.min_clearance < 0.0)


def min_clearance(log: TrajectoryLog) -> float:
    if not log.records:
        return math.inf
    return min(r.min_clearance for r in log.records)


def time_to_goal(log: TrajectoryLog) -> int | None:
    """Steps until completion, or None when the run never reached the goal."""
    return log.completion_step if log.completed else None


def path_length(log: TrajectoryLog) -> float:
    pts = np.array([[r.x, r.y] for r in log.records])
    if pts.shape[0] < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def heading_change_sum(log: TrajectoryLog) -> float:
    """Total absolute wrapped heading change along the executed path."""
    thetas = [r.theta for r in log.records]
    return float(sum(abs(wrap_angle(b - a)) for a, b in zip(thetas, thetas[1:])))


def solve_time_stats(log: TrajectoryLog) -> dict:
    times = np.array([r.solve_time_ms for r in log.records])
    if times.size == 0:
        return {"mean": 0.0, "median": 0.0, "p95": 0.0, "max": 0.0}
    return {
        "mean": float(np.mean(times)),
        "median": float(np.median(times)),
        "p95": float(np.percentile(times, 95)),
        "max": float(np.max(times)),
    }


def fallback_count(log: TrajectoryLog) -> int:
    return sum(1 for r in log.records if r.fallback)


def slack_activation_count(log: TrajectoryLog, threshold: float = 1e-6) -> int:
    """Steps on which any soft-constraint slack exceeded the threshold."""
    return sum(
        1
        for r in log.records
        if max(r.slack_shared, r.slack_step) > threshold
    )
