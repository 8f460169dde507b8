
from __future__ import annotations

import json
import math

import numpy as np
import pytest

from koopnav.trajlog import (
    CSV_COLUMNS,
    TRAJECTORY_SCHEMA,
    StepRecord,
    TrajectoryLog,
    collision_count,
    fallback_count,
    heading_change_sum,
    min_clearance,
    pack_halfspaces,
    parse_halfspaces,
    path_length,
    slack_activation_count,
    solve_time_stats,
    time_to_goal,
)


def _rec(k: int, **over) -> StepRecord:
    base = dict(
        k=k,
        target_index=0,
        x=0.1 * k,
        y=-0.05 * k,
        theta=0.2,
        v=0.5,
        omega=-0.1,
        ref_x=0.1 * k + 0.4,
        ref_y=0.0,
        ref_theta=0.0,
        pred_x=0.1 * k + 0.05,
        pred_y=0.01,
        pred_theta=0.21,
        min_clearance=0.3,
        margin=0.05,
        halfspaces="",
        slack_shared=0.0,
        slack_step=0.0,
        qp_status="optimal",
        qp_iterations=40,
        solve_time_ms=1.25,
        fallback=False,
        slid=False,
        passthrough=False,
        warm_started=k > 0,
    )
    base.update(over)
    return StepRecord(**base)


def _sample_log() -> TrajectoryLog:
    log = TrajectoryLog(
        metadata={"seed": 3, "alpha": 0.1, "margin": 0.0578, "config_hash": "deadbeef"},
        completed=True,
        completion_step=2,
    )
    rows = np.array([[1.0, 0.0], [0.0, -1.0]])
    offsets = np.array([-0.25, 0.4])
    log.append(_rec(0, halfspaces=pack_halfspaces(rows, offsets)))
    log.append(_rec(1, slid=True, slack_step=1e-3))
    log.append(
        _rec(
            2,
            pred_x=None,
            pred_y=None,
            pred_theta=None,
            fallback=True,
            qp_status="max-iterations",
        )
    )
    return log


def test_pack_parse_halfspaces_round_trip_exact() -> None:
    rng = np.random.default_rng(2)
    rows = rng.normal(size=(3, 2))
    offsets = rng.normal(size=3)
    packed = pack_halfspaces(rows, offsets)
    triples = parse_halfspaces(packed)
    assert len(triples) == 3
    for i, (a, b, c) in enumerate(triples):
        assert a == rows[i, 0]
        assert b == rows[i, 1]
        assert c == offsets[i]


def test_pack_parse_empty() -> None:
    assert pack_halfspaces(np.zeros((0, 2)), np.zeros(0)) == ""
    assert parse_halfspaces("") == []


def test_csv_round_trip_preserves_records() -> None:
    log = _sample_log()
    text = log.to_csv()
    back = TrajectoryLog.from_csv(text)
    assert back.records == log.records
    assert back.completed is True
    assert back.completion_step == 2
    # Metadata values come back as strings.
    assert back.metadata["seed"] == "3"
    assert back.metadata["config_hash"] == "deadbeef"
    assert back.metadata["margin"] == "0.0578"


def test_csv_reserialization_is_byte_identical() -> None:
    log = _sample_log()
    first = log.to_csv()
    second = TrajectoryLog.from_csv(first).to_csv()
    assert second == first


def test_csv_header_lists_all_columns_once() -> None:
    text = _sample_log().to_csv()
    header_line = [l for l in text.splitlines() if not l.startswith("#")][0]
    assert header_line.split(",") == CSV_COLUMNS
    assert len(set(CSV_COLUMNS)) == len(CSV_COLUMNS)


def test_from_csv_rejects_missing_schema() -> None:
    with pytest.raises(ValueError, match="schema"):
        TrajectoryLog.from_csv("k,x\n0,1\n")


def test_from_csv_rejects_wrong_schema() -> None:
    text = _sample_log().to_csv().replace(TRAJECTORY_SCHEMA, "koopnav-trajectory-v0")
    with pytest.raises(ValueError, match="koopnav-trajectory-v0"):
        TrajectoryLog.from_csv(text)


def test_from_csv_names_missing_columns() -> None:
    text = _sample_log().to_csv()
    text = text.replace("min_clearance,margin,", "margin,")
    with pytest.raises(ValueError, match="min_clearance"):
        TrajectoryLog.from_csv(text)


def test_json_payload_shape() -> None:
    log = _sample_log()
    payload = json.loads(log.to_json())
    assert payload["schema"] == TRAJECTORY_SCHEMA
    assert payload["completed"] is True
    assert payload["completion_step"] == 2
    assert len(payload["records"]) == 3
    assert payload["records"][2]["fallback"] is True
    assert payload["records"][2]["pred_x"] is None


def test_collision_count_counts_negative_clearance_steps() -> None:
    log = TrajectoryLog(metadata={})
    for k, c in enumerate([-0.1, 0.2, -0.3, 0.0]):
        log.append(_rec(k, min_clearance=c))
    assert collision_count(log) == 2
    assert min_clearance(log) == -0.3


def test_min_clearance_empty_log_is_infinite() -> None:
    assert min_clearance(TrajectoryLog(metadata={})) == math.inf


def test_time_to_goal_none_when_incomplete() -> None:
    done = TrajectoryLog(metadata={}, completed=True, completion_step=7)
    assert time_to_goal(done) == 7
    assert time_to_goal(TrajectoryLog(metadata={})) is None


def test_path_length_sums_segment_lengths() -> None:
    log = TrajectoryLog(metadata={})
    for k, (x, y) in enumerate([(0.0, 0.0), (3.0, 4.0), (3.0, 5.0)]):
        log.append(_rec(k, x=x, y=y))
    assert path_length(log) == pytest.approx(6.0)
    assert path_length(TrajectoryLog(metadata={})) == 0.0


def test_heading_change_sum_wraps_across_pi() -> None:
    log = TrajectoryLog(metadata={})
    log.append(_rec(0, theta=3.0))
    log.append(_rec(1, theta=-3.0))
    assert heading_change_sum(log) == pytest.approx(2 * math.pi - 6.0)


def test_solve_time_stats_values() -> None:
    log = TrajectoryLog(metadata={})
    for k, t in enumerate([1.0, 2.0, 3.0, 4.0]):
        log.append(_rec(k, solve_time_ms=t))
    stats = solve_time_stats(log)
    assert stats["mean"] == pytest.approx(2.5)
    assert stats["median"] == pytest.approx(2.5)
    assert stats["p95"] == pytest.approx(3.85)
    assert stats["max"] == 4.0
    empty = solve_time_stats(TrajectoryLog(metadata={}))
    assert empty == {"mean": 0.0, "median": 0.0, "p95": 0.0, "max": 0.0}


def test_fallback_and_slack_counts() -> None:
    log = TrajectoryLog(metadata={})
    log.append(_rec(0, fallback=True))
    log.append(_rec(1, slack_shared=2e-6))
    log.append(_rec(2, slack_step=1e-6))
    assert fallback_count(log) == 1
    assert slack_activation_count(log) == 1
    assert slack_activation_count(log, threshold=0.0) == 2
