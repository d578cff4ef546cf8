"""Scenario dataset serialization: one JSON record per line under a versioned header.

Floats are written as Python's repr (shortest 64-bit round-trip decimal), so a
save/load cycle reproduces every array bit-for-bit. The schema is documented in
docs/formats.md.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .scenario import AgentTrack, Polyline, ScenarioWorld, Signal, StaticObstacle

HEADER = "lhpf-scenarios v1"


class ScenarioFormatError(ValueError):
    """Raised when a dataset file is malformed; names the offending record."""


def _track_to_dict(track: AgentTrack) -> dict:
    return {
        "positions": track.positions.tolist(),
        "headings": track.headings.tolist(),
        "velocities": track.velocities.tolist(),
        "bbox": list(track.bbox),
        "observed": [bool(o) for o in track.observed],
    }


def _track_from_dict(d: dict) -> AgentTrack:
    return AgentTrack(
        positions=np.array(d["positions"], dtype=float),
        headings=np.array(d["headings"], dtype=float),
        velocities=np.array(d["velocities"], dtype=float),
        bbox=tuple(d["bbox"]),
        observed=np.array(d["observed"], dtype=bool),
    )


def _polyline_to_dict(line: Polyline) -> dict:
    return {
        "points": line.points.tolist(),
        "left_boundary": line.left_boundary.tolist(),
        "right_boundary": line.right_boundary.tolist(),
        "speed_limit": line.speed_limit,
        "kind": line.kind.value,
    }


def _polyline_from_dict(d: dict) -> Polyline:
    return Polyline(
        points=np.array(d["points"], dtype=float),
        left_boundary=np.array(d["left_boundary"], dtype=float),
        right_boundary=np.array(d["right_boundary"], dtype=float),
        speed_limit=float(d["speed_limit"]),
        kind=d["kind"],
    )


def scenario_to_dict(s: ScenarioWorld) -> dict:
    return {
        "kind": s.kind,
        "seed": s.seed,
        "duration_s": s.duration_s,
        "fps": s.fps,
        "ego": _track_to_dict(s.ego_track),
        "agents": [_track_to_dict(t) for t in s.agent_tracks],
        "map": [_polyline_to_dict(p) for p in s.map_polylines],
        "obstacles": [
            {"position": o.position.tolist(), "heading": o.heading, "bbox": list(o.bbox)}
            for o in s.obstacles
        ],
        "reference_lines": [_polyline_to_dict(p) for p in s.reference_lines],
        "traffic_context": {str(k): v.value for k, v in s.traffic_context.items()},
    }


def scenario_from_dict(d: dict) -> ScenarioWorld:
    return ScenarioWorld(
        ego_track=_track_from_dict(d["ego"]),
        agent_tracks=[_track_from_dict(t) for t in d["agents"]],
        map_polylines=[_polyline_from_dict(p) for p in d["map"]],
        obstacles=[
            StaticObstacle(np.array(o["position"], dtype=float), float(o["heading"]), tuple(o["bbox"]))
            for o in d["obstacles"]
        ],
        reference_lines=[_polyline_from_dict(p) for p in d["reference_lines"]],
        duration_s=float(d["duration_s"]),
        traffic_context={int(k): Signal(v) for k, v in d["traffic_context"].items()},
        kind=d.get("kind", ""),
        seed=int(d.get("seed", 0)),
    )


def save_dataset(scenarios: list[ScenarioWorld], path) -> int:
    """Write scenarios as line-delimited records; returns the record count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        f.write(HEADER + "\n")
        for s in scenarios:
            f.write(json.dumps(scenario_to_dict(s)) + "\n")
    return len(scenarios)


def load_dataset(path) -> list[ScenarioWorld]:
    """Read a dataset written by save_dataset; raises ScenarioFormatError on damage."""
    path = Path(path)
    with path.open("r") as f:
        header = f.readline().rstrip("\n")
        if header != HEADER:
            raise ScenarioFormatError(f"bad header {header!r}, expected {HEADER!r}")
        scenarios = []
        for i, line in enumerate(f):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                scenarios.append(scenario_from_dict(record))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ScenarioFormatError(f"record {i}: {e}") from e
    return scenarios
