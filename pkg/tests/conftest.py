import numpy as np
import pytest
import torch

from lhpf.scenario import AgentTrack, Polyline, PolylineKind, ScenarioWorld


def make_straight_scenario(
    num_frames: int = 201,
    speed: float = 10.0,
    lane_width: float = 3.5,
    agents: list[AgentTrack] | None = None,
    obstacles=None,
    heading: float = 0.0,
    origin=(0.0, 0.0),
) -> ScenarioWorld:
    """Minimal hand-built straight-road scenario for unit tests."""
    t = np.arange(num_frames) * 0.1
    d = np.array([np.cos(heading), np.sin(heading)])
    pos = np.asarray(origin, float)[None, :] + (speed * t)[:, None] * d[None, :]
    ego = AgentTrack(
        positions=pos,
        headings=np.full(num_frames, heading),
        velocities=np.tile(speed * d, (num_frames, 1)),
        bbox=(4.8, 2.0),
        observed=np.ones(num_frames, dtype=bool),
    )
    length = speed * t[-1] + 80.0
    s = np.linspace(-30.0, length, 80)
    center = np.asarray(origin, float)[None, :] + s[:, None] * d[None, :]
    normal = np.array([-d[1], d[0]])
    lane = Polyline(
        points=center,
        left_boundary=center + lane_width / 2 * normal,
        right_boundary=center - lane_width / 2 * normal,
        speed_limit=speed,
        kind=PolylineKind.LANE,
    )
    ref = Polyline(
        points=center.copy(),
        left_boundary=center + lane_width / 2 * normal,
        right_boundary=center - lane_width / 2 * normal,
        speed_limit=speed,
        kind=PolylineKind.ROUTE_REFERENCE,
    )
    return ScenarioWorld(
        ego_track=ego,
        agent_tracks=list(agents or []),
        map_polylines=[lane],
        obstacles=list(obstacles or []),
        reference_lines=[ref],
        duration_s=(num_frames - 1) / 10.0,
    )


def constant_velocity_track(start, velocity, num_frames=201, bbox=(4.6, 1.9),
                            heading=None, observed=None) -> AgentTrack:
    t = np.arange(num_frames) * 0.1
    pos = np.asarray(start, float)[None, :] + t[:, None] * np.asarray(velocity, float)[None, :]
    if heading is None:
        heading = float(np.arctan2(velocity[1], velocity[0])) if np.linalg.norm(velocity) > 0 else 0.0
    if observed is None:
        observed = np.ones(num_frames, dtype=bool)
    return AgentTrack(pos, np.full(num_frames, heading),
                      np.tile(np.asarray(velocity, float), (num_frames, 1)), bbox, observed)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
