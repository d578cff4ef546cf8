"""Synthetic scenario generation with a comfort-feasible scripted expert.

All motion profiles are built from quintic smoothstep blends, so the expert's
accelerations, jerks and yaw rates stay well inside the comfort limits used by
the training loss. Each scenario is built in a canonical frame and then rigidly
transformed by a seed-dependent world pose.
"""

from __future__ import annotations

import numpy as np

from .geometry import (
    cumulative_arclength,
    interp_along,
    offset_polyline,
    rotate,
    tangent_along,
    wrap_angle,
)
from .scenario import (
    DT,
    AgentTrack,
    Polyline,
    PolylineKind,
    ScenarioWorld,
    Signal,
    StaticObstacle,
)

KINDS = ("straight", "lane_change", "intersection_turn", "dense_traffic")
DURATION_S = 20.0
NUM_FRAMES = int(round(DURATION_S / DT)) + 1

EGO_BBOX = (4.8, 2.0)
LANE_POINT_SPACING = 2.0


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


def _smoothstep_integral(u):
    """Integral of the quintic smoothstep from 0 to u (u may exceed 1)."""
    uc = np.clip(u, 0.0, 1.0)
    base = 2.5 * uc**4 - 3.0 * uc**5 + uc**6
    return base + np.maximum(u - 1.0, 0.0)


def _speed_profile(t: np.ndarray, v0: float, transitions):
    """Speed and travelled distance for piecewise-smooth speed keyframes.

    transitions: list of (t_start, delta_v, duration); each blends speed by
    delta_v over duration seconds with zero end-point acceleration.
    """
    v = np.full_like(t, v0)
    s = v0 * t
    for t_start, dv, dur in transitions:
        u = (t - t_start) / dur
        v = v + dv * _smoothstep(u)
        s = s + dv * dur * _smoothstep_integral(u)
    return v, s


def _track_from_xy(x, y, bbox, observed=None) -> AgentTrack:
    """Build a track from dense positions; heading/velocity from differences."""
    pos = np.stack([x, y], axis=1)
    vel = np.gradient(pos, DT, axis=0)
    heading = np.arctan2(vel[:, 1], vel[:, 0])
    speed = np.linalg.norm(vel, axis=1)
    # hold last heading through stationary stretches
    for i in range(len(heading)):
        if speed[i] < 1e-6:
            heading[i] = heading[i - 1] if i > 0 else 0.0
    if observed is None:
        observed = np.ones(len(x), dtype=bool)
    return AgentTrack(pos, heading, vel, bbox, observed)


def _stationary_track(position, heading, bbox) -> AgentTrack:
    pos = np.tile(np.asarray(position, float), (NUM_FRAMES, 1))
    return AgentTrack(
        pos,
        np.full(NUM_FRAMES, heading),
        np.zeros((NUM_FRAMES, 2)),
        bbox,
        np.ones(NUM_FRAMES, dtype=bool),
    )


def _lane(points: np.ndarray, width: float, speed_limit: float,
          kind: PolylineKind = PolylineKind.LANE) -> Polyline:
    return Polyline(
        points=points,
        left_boundary=offset_polyline(points, width / 2.0),
        right_boundary=offset_polyline(points, -width / 2.0),
        speed_limit=speed_limit,
        kind=kind,
    )


def _straight_points(start, heading, length, spacing=LANE_POINT_SPACING):
    n = max(int(np.ceil(length / spacing)) + 1, 2)
    s = np.linspace(0.0, length, n)
    d = np.array([np.cos(heading), np.sin(heading)])
    return np.asarray(start, float)[None, :] + s[:, None] * d[None, :]


def _subsample_path(points: np.ndarray, spacing=LANE_POINT_SPACING) -> np.ndarray:
    s = cumulative_arclength(points)
    n = max(int(np.ceil(s[-1] / spacing)) + 1, 2)
    return interp_along(points, np.linspace(0.0, s[-1], n))


def _t_grid() -> np.ndarray:
    return np.arange(NUM_FRAMES) * DT


# --- kind builders (canonical frame) ---------------------------------------


def _build_straight(rng: np.random.Generator):
    speed_limit = float(rng.uniform(8.0, 11.0))
    lane_width = float(rng.uniform(3.4, 3.8))
    t = _t_grid()
    v = np.full_like(t, speed_limit)
    s = speed_limit * t

    start_x = 0.0
    x = start_x + s
    y = np.zeros_like(x)
    ego = AgentTrack(
        np.stack([x, y], axis=1),
        np.zeros(NUM_FRAMES),
        np.stack([v, np.zeros_like(v)], axis=1),
        EGO_BBOX,
        np.ones(NUM_FRAMES, dtype=bool),
    )

    road_len = s[-1] + 70.0
    center = _straight_points((start_x - 30.0, 0.0), 0.0, road_len)
    lanes = [_lane(center, lane_width, speed_limit)]
    refs = [_lane(center.copy(), lane_width, speed_limit, PolylineKind.ROUTE_REFERENCE)]
    return ego, [], lanes, refs, [], {}


def _build_lane_change(rng: np.random.Generator):
    speed_limit = float(rng.uniform(9.0, 11.0))
    v_ego = speed_limit - 1.0
    lane_width = float(rng.uniform(3.4, 3.7))
    side = 1.0 if rng.random() < 0.7 else -1.0  # mostly left changes
    t_change = float(rng.uniform(4.0, 7.0))
    t_lc_dur = 5.0

    t = _t_grid()
    x = v_ego * t
    y = side * lane_width * _smoothstep((t - t_change) / t_lc_dur)
    ego = _track_from_xy(x, y, EGO_BBOX)

    road_len = x[-1] + 80.0
    c0 = _straight_points((-30.0, 0.0), 0.0, road_len)
    c1 = _straight_points((-30.0, side * lane_width), 0.0, road_len)
    lanes = [_lane(c0, lane_width, speed_limit), _lane(c1, lane_width, speed_limit)]
    refs = [
        _lane(c0.copy(), lane_width, speed_limit, PolylineKind.ROUTE_REFERENCE),
        _lane(c1.copy(), lane_width, speed_limit, PolylineKind.ROUTE_REFERENCE),
    ]

    # slow lead in the origin lane; follower in the target lane stays behind
    v_lead = v_ego - float(rng.uniform(1.5, 2.5))
    gap0 = float(rng.uniform(28.0, 34.0))
    lead = _track_from_xy(gap0 + v_lead * t, np.zeros_like(t), (4.6, 1.9))
    v_back = v_ego - float(rng.uniform(0.5, 1.5))
    back = _track_from_xy(-28.0 + v_back * t, np.full_like(t, side * lane_width), (4.6, 1.9))
    return ego, [lead, back], lanes, refs, [], {}


def _build_intersection_turn(rng: np.random.Generator):
    speed_limit = 9.0
    lane_width = 3.5
    v_app = float(rng.uniform(7.5, 8.5))
    v_turn = float(rng.uniform(4.2, 5.0))
    approach_len = float(rng.uniform(52.0, 60.0))

    t = _t_grid()
    t_slow = (approach_len - 24.0) / v_app  # start decelerating ~24 m early
    v, s = _speed_profile(t, v_app, [(t_slow, v_turn - v_app, 4.5)])

    # heading turns +90 deg via smoothstep once the slowdown has finished
    t_turn = t_slow + 4.8
    turn_dur = 6.0
    theta = 0.5 * np.pi * _smoothstep((t - t_turn) / turn_dur)

    # integrate the unicycle on a fine grid for positional accuracy
    fine = 20
    tf = np.arange(NUM_FRAMES * fine) * (DT / fine)
    vf, _ = _speed_profile(tf, v_app, [(t_slow, v_turn - v_app, 4.5)])
    thf = 0.5 * np.pi * _smoothstep((tf - t_turn) / turn_dur)
    xf = np.cumsum(vf * np.cos(thf)) * (DT / fine)
    yf = np.cumsum(vf * np.sin(thf)) * (DT / fine)
    x0 = -approach_len
    x = x0 + np.concatenate([[0.0], xf[fine - 1 :: fine]])[:NUM_FRAMES]
    y = np.concatenate([[0.0], yf[fine - 1 :: fine]])[:NUM_FRAMES]

    ego = AgentTrack(
        np.stack([x, y], axis=1),
        theta,
        np.stack([v * np.cos(theta), v * np.sin(theta)], axis=1),
        EGO_BBOX,
        np.ones(NUM_FRAMES, dtype=bool),
    )

    # route polyline: straight margin behind, the driven path, straight margin ahead
    path = np.stack([x, y], axis=1)
    pre = _straight_points((x0 - 30.0, 0.0), 0.0, 28.0)
    exit_dir = np.array([np.cos(theta[-1]), np.sin(theta[-1])])
    post = path[-1][None, :] + np.linspace(2.0, 40.0, 20)[:, None] * exit_dir[None, :]
    route = _subsample_path(np.concatenate([pre, path, post], axis=0))

    exit_x = float(x[-1])  # northbound exit-lane center
    lanes = [
        _lane(_straight_points((x0 - 30.0, 0.0), 0.0, approach_len + 30.0 + lane_width), lane_width, speed_limit),
        _lane(route, lane_width, speed_limit),  # turn connector and beyond
        _lane(_straight_points((exit_x, -2.0), 0.5 * np.pi, float(y[-1]) + 45.0), lane_width, speed_limit),
        _lane(_straight_points((exit_x - lane_width, float(y[-1]) + 40.0), -0.5 * np.pi, float(y[-1]) + 35.0), lane_width, speed_limit),
        # straight-through road continuing east
        _lane(_straight_points((2.0, 0.0), 0.0, 50.0), lane_width, speed_limit),
    ]
    crosswalk_c = _straight_points((exit_x - lane_width - 1.75, 8.0), 0.0, 2.0 * lane_width + 3.5, spacing=1.0)
    lanes.append(
        Polyline(
            points=crosswalk_c,
            left_boundary=offset_polyline(crosswalk_c, 1.5),
            right_boundary=offset_polyline(crosswalk_c, -1.5),
            speed_limit=speed_limit,
            kind=PolylineKind.CROSSWALK,
        )
    )
    through = _subsample_path(np.concatenate([pre, _straight_points((x0, 0.0), 0.0, approach_len + 52.0)], axis=0))
    refs = [
        _lane(route.copy(), lane_width, speed_limit, PolylineKind.ROUTE_REFERENCE),
        _lane(through, lane_width, speed_limit, PolylineKind.ROUTE_REFERENCE),
    ]

    # stopped southbound queue waiting at the red light
    queue = [
        _stationary_track((exit_x - lane_width, 12.0), -0.5 * np.pi, (4.6, 1.9)),
        _stationary_track((exit_x - lane_width, 18.5), -0.5 * np.pi, (4.6, 1.9)),
    ]
    signals = {0: Signal.GREEN, 1: Signal.GREEN, 3: Signal.RED}
    cones = [
        StaticObstacle((x0 + 15.0, -lane_width / 2.0 - 1.2), 0.0, (0.5, 0.5)),
        StaticObstacle((exit_x + lane_width / 2.0 + 1.2, 20.0), 0.5 * np.pi, (0.5, 0.5)),
    ]
    return ego, queue, lanes, refs, cones, signals


def _build_dense_traffic(rng: np.random.Generator):
    speed_limit = float(rng.uniform(8.5, 10.0))
    v_c = speed_limit - 1.5
    lane_width = float(rng.uniform(3.4, 3.7))

    t = _t_grid()
    dip_t = float(rng.uniform(5.0, 8.0))
    dip = -float(rng.uniform(1.5, 2.5))
    trans = [(dip_t, dip, 4.0), (dip_t + 6.0, -dip, 4.0)]
    v, s = _speed_profile(t, v_c, trans)

    ego = _track_from_xy(s, np.zeros_like(s), EGO_BBOX)

    agents = []
    # same-lane platoon shares the ego's speed profile, so gaps stay constant
    lead_gap = float(rng.uniform(20.0, 26.0))
    agents.append(_track_from_xy(lead_gap + s, np.zeros_like(s), (4.6, 1.9)))
    agents.append(_track_from_xy(2.0 * lead_gap + s, np.zeros_like(s), (4.6, 1.9)))
    agents.append(_track_from_xy(-lead_gap + s, np.zeros_like(s), (4.6, 1.9)))
    # adjacent-lane traffic at steady speeds
    n_adj = 2 + int(rng.integers(0, 2))
    for i in range(n_adj):
        v_adj = v_c + float(rng.uniform(-1.0, 1.0))
        x0 = float(rng.uniform(-30.0, 30.0)) + 18.0 * i
        agents.append(_track_from_xy(x0 + v_adj * t, np.full_like(t, lane_width), (4.6, 1.9)))

    road_len = 2.0 * lead_gap + s[-1] + 80.0
    c0 = _straight_points((-lead_gap - 40.0, 0.0), 0.0, road_len)
    c1 = _straight_points((-lead_gap - 40.0, lane_width), 0.0, road_len)
    lanes = [_lane(c0, lane_width, speed_limit), _lane(c1, lane_width, speed_limit)]
    refs = [
        _lane(c0.copy(), lane_width, speed_limit, PolylineKind.ROUTE_REFERENCE),
        _lane(c1.copy(), lane_width, speed_limit, PolylineKind.ROUTE_REFERENCE),
    ]
    cones = [
        StaticObstacle((20.0, -lane_width / 2.0 - 1.0), 0.0, (0.5, 0.5)),
        StaticObstacle((60.0, -lane_width / 2.0 - 1.0), 0.0, (0.5, 0.5)),
    ]
    return ego, agents, lanes, refs, cones, {}


_BUILDERS = {
    "straight": _build_straight,
    "lane_change": _build_lane_change,
    "intersection_turn": _build_intersection_turn,
    "dense_traffic": _build_dense_traffic,
}


def _transform_track(track: AgentTrack, origin: np.ndarray, theta: float) -> AgentTrack:
    return AgentTrack(
        rotate(track.positions, theta) + origin,
        wrap_angle(track.headings + theta),
        rotate(track.velocities, theta),
        track.bbox,
        track.observed,
    )


def _transform_polyline(line: Polyline, origin: np.ndarray, theta: float) -> Polyline:
    return Polyline(
        rotate(line.points, theta) + origin,
        rotate(line.left_boundary, theta) + origin,
        rotate(line.right_boundary, theta) + origin,
        line.speed_limit,
        line.kind,
    )


def generate_scenario(kind: str, seed: int) -> ScenarioWorld:
    """Deterministically generate one scenario of the given kind."""
    if kind not in _BUILDERS:
        raise ValueError(f"unknown scenario kind: {kind!r} (choose from {KINDS})")
    kind_id = KINDS.index(kind)
    rng = np.random.default_rng([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), kind_id])

    ego, agents, lanes, refs, obstacles, signals = _BUILDERS[kind](rng)

    origin = rng.uniform(-60.0, 60.0, size=2)
    theta = float(rng.uniform(-np.pi, np.pi))
    ego = _transform_track(ego, origin, theta)
    agents = [_transform_track(a, origin, theta) for a in agents]
    lanes = [_transform_polyline(p, origin, theta) for p in lanes]
    refs = [_transform_polyline(p, origin, theta) for p in refs]
    obstacles = [
        StaticObstacle(rotate(o.position, theta) + origin, wrap_angle(o.heading + theta), o.bbox)
        for o in obstacles
    ]

    return ScenarioWorld(
        ego_track=ego,
        agent_tracks=agents,
        map_polylines=lanes,
        obstacles=obstacles,
        reference_lines=refs,
        duration_s=DURATION_S,
        traffic_context=signals,
        kind=kind,
        seed=int(seed),
    )
