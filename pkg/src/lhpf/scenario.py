"""Ground-truth world model: agents, map polylines, obstacles, observation windows."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import wrap_angle

FPS = 10
DT = 1.0 / FPS

#: default history / planning horizon lengths in frames at 10 Hz
HISTORY_FRAMES = 20
HORIZON_FRAMES = 80


class Signal(str, Enum):
    GREEN = "green"
    RED = "red"
    NONE = "none"


class PolylineKind(str, Enum):
    LANE = "lane"
    ROUTE_REFERENCE = "route_reference"
    CROSSWALK = "crosswalk"


class WindowRangeError(ValueError):
    """Raised when an observation window does not fit inside its scenario."""


@dataclass
class AgentState:
    """State of one agent at a single frame."""

    position: np.ndarray  # (2,) m
    heading: float  # rad, (-pi, pi]
    velocity: np.ndarray  # (2,) m/s
    bbox: tuple[float, float]  # (length, width) m
    observed: bool = True

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.heading = float(wrap_angle(self.heading))
        if self.observed and (self.bbox[0] <= 0 or self.bbox[1] <= 0):
            raise ValueError("observed agent must have positive bbox dimensions")


@dataclass
class AgentTrack:
    """Time-indexed agent state arrays over the whole scenario (10 Hz)."""

    positions: np.ndarray  # [T, 2]
    headings: np.ndarray  # [T]
    velocities: np.ndarray  # [T, 2]
    bbox: tuple[float, float]
    observed: np.ndarray  # [T] bool

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.headings = wrap_angle(np.asarray(self.headings, dtype=float))
        self.velocities = np.asarray(self.velocities, dtype=float)
        self.observed = np.asarray(self.observed, dtype=bool)
        self.bbox = (float(self.bbox[0]), float(self.bbox[1]))

    def __len__(self) -> int:
        return len(self.positions)

    def state_at(self, t: int) -> AgentState:
        return AgentState(
            position=self.positions[t].copy(),
            heading=float(self.headings[t]),
            velocity=self.velocities[t].copy(),
            bbox=self.bbox,
            observed=bool(self.observed[t]),
        )


@dataclass
class Polyline:
    """Map element with per-point boundaries; all three point lists share length."""

    points: np.ndarray  # [n, 2]
    left_boundary: np.ndarray  # [n, 2]
    right_boundary: np.ndarray  # [n, 2]
    speed_limit: float
    kind: PolylineKind = PolylineKind.LANE

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.left_boundary = np.asarray(self.left_boundary, dtype=float)
        self.right_boundary = np.asarray(self.right_boundary, dtype=float)
        self.kind = PolylineKind(self.kind)
        n = len(self.points)
        if n < 2 or len(self.left_boundary) != n or len(self.right_boundary) != n:
            raise ValueError("polyline and boundaries need equal length >= 2")
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        if np.any(seg <= 1e-6):
            raise ValueError("consecutive polyline points must be distinct")


@dataclass
class StaticObstacle:
    position: np.ndarray  # (2,)
    heading: float
    bbox: tuple[float, float]

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.heading = float(wrap_angle(self.heading))
        self.bbox = (float(self.bbox[0]), float(self.bbox[1]))
        if self.bbox[0] <= 0 or self.bbox[1] <= 0:
            raise ValueError("obstacle bbox dimensions must be positive")


@dataclass
class ScenarioWorld:
    """One complete scenario: expert log, background agents, map, context."""

    ego_track: AgentTrack
    agent_tracks: list[AgentTrack]
    map_polylines: list[Polyline]
    obstacles: list[StaticObstacle]
    reference_lines: list[Polyline]
    duration_s: float
    traffic_context: dict[int, Signal] = field(default_factory=dict)
    kind: str = ""
    seed: int = 0

    fps: int = FPS

    def __post_init__(self):
        self.traffic_context = {int(k): Signal(v) for k, v in self.traffic_context.items()}
        if not self.reference_lines:
            raise ValueError("scenario needs at least one reference line")
        for line in self.reference_lines:
            if line.kind is not PolylineKind.ROUTE_REFERENCE:
                raise ValueError("reference_lines must have kind=route_reference")
        n = len(self.ego_track)
        for track in self.agent_tracks:
            if len(track) != n:
                raise ValueError("all tracks must share the ego track's time base")

    @property
    def num_frames(self) -> int:
        return len(self.ego_track)

    @property
    def last_frame(self) -> int:
        return self.num_frames - 1


@dataclass
class ObservationWindow:
    """A read-only view of `history_frames` past and `horizon_frames` future frames.

    History covers frames [t_now - history_frames + 1, t_now]; the horizon covers
    [t_now + 1, t_now + horizon_frames]. A zero horizon is allowed for inference-time
    windows where no ground-truth future exists.
    """

    scenario: ScenarioWorld
    t_now: int
    history_frames: int = HISTORY_FRAMES
    horizon_frames: int = HORIZON_FRAMES

    def __post_init__(self):
        last = self.scenario.last_frame
        if self.t_now - self.history_frames < 0:
            raise WindowRangeError(
                f"t_now={self.t_now} leaves no {self.history_frames}-frame history"
            )
        if self.t_now + self.horizon_frames > last:
            raise WindowRangeError(
                f"t_now={self.t_now} + horizon {self.horizon_frames} exceeds last frame {last}"
            )

    @property
    def history_slice(self) -> slice:
        return slice(self.t_now - self.history_frames + 1, self.t_now + 1)

    @property
    def horizon_slice(self) -> slice:
        return slice(self.t_now + 1, self.t_now + 1 + self.horizon_frames)

    def ego_now(self) -> AgentState:
        return self.scenario.ego_track.state_at(self.t_now)

    def expert_horizon(self) -> np.ndarray:
        """Expert future as [horizon_frames, 6]: (x, y, cos h, sin h, vx, vy), world frame."""
        ego = self.scenario.ego_track
        sl = self.horizon_slice
        h = ego.headings[sl]
        return np.concatenate(
            [ego.positions[sl], np.cos(h)[:, None], np.sin(h)[:, None], ego.velocities[sl]],
            axis=1,
        )


def slice_window(
    scenario: ScenarioWorld,
    t_now: int,
    history_frames: int = HISTORY_FRAMES,
    horizon_frames: int = HORIZON_FRAMES,
) -> ObservationWindow:
    """Build a validated observation window; raises WindowRangeError out of range."""
    return ObservationWindow(scenario, int(t_now), history_frames, horizon_frames)
