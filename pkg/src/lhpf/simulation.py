"""Reactive closed-loop simulation at 10 Hz with IDM background agents, the
metric suite, and the composite score."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from shapely.geometry import Point, Polygon
from shapely.ops import unary_union

from .collision import rectangle_corners, rectangles_overlap
from .decoder import PlanResult
from .planners import PlannerFailure
from .geometry import heading_to_unit, project_to_polyline, tangent_along, to_world, wrap_angle
from .losses import ComfortLimits, dynamic_profile, violates_limits
from .scenario import (
    DT,
    HISTORY_FRAMES,
    AgentState,
    AgentTrack,
    PolylineKind,
    ScenarioWorld,
    Signal,
    slice_window,
)

logger = logging.getLogger(__name__)

EPISODE_STEPS = 150  # 15 s at 10 Hz


@dataclass
class IDMParams:
    desired_speed: float | None = None  # None: per-lane speed limit
    time_headway: float = 1.5  # s
    max_accel: float = 1.4  # m/s^2
    comfortable_decel: float = 2.0  # m/s^2
    min_gap: float = 2.0  # m
    exponent: float = 4.0
    emergency_decel: float = 4.0  # hard clip; only reached in emergency braking

    def __post_init__(self):
        for name in ("time_headway", "max_accel", "comfortable_decel", "min_gap",
                     "exponent", "emergency_decel"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def idm_acceleration(v: float, v_desired: float, gap: float | None,
                     dv: float, p: IDMParams) -> float:
    """IDM acceleration; gap=None means free road. Clipped to
    [-emergency_decel, max_accel]."""
    free = 1.0 - (max(v, 0.0) / max(v_desired, 0.1)) ** p.exponent
    interaction = 0.0
    if gap is not None:
        s_star = p.min_gap + v * p.time_headway + v * dv / (
            2.0 * np.sqrt(p.max_accel * p.comfortable_decel)
        )
        s_star = max(s_star, 0.0)
        interaction = (s_star / max(gap, 0.1)) ** 2
    a = p.max_accel * (free - interaction)
    return float(np.clip(a, -p.emergency_decel, p.max_accel))


@dataclass
class StepRecord:
    frame: int
    ego_state: AgentState
    agent_states: list[AgentState]
    plan: PlanResult
    plan_origin: tuple[np.ndarray, float]  # ego (position, heading) at plan time


@dataclass
class EpisodeTrace:
    steps: list[StepRecord]
    ego_bbox: tuple[float, float]
    t0: int
    failed: bool = False
    failure_reason: str = ""


@dataclass
class SimReport:
    scenario_kind: str
    scenario_seed: int
    planner: str
    mode: str
    at_fault_collision_free: int
    drivable_compliance: int
    progress_ratio: float
    comfort_ok: int
    speed_compliance: float
    direction_compliance: int
    composite_score: float
    failed: bool = False
    steps: int = 0
    trace: EpisodeTrace | None = field(default=None, repr=False)

    CSV_FIELDS = (
        "scenario_kind", "scenario_seed", "planner", "mode",
        "at_fault_collision_free", "drivable_compliance", "progress_ratio",
        "comfort_ok", "speed_compliance", "direction_compliance",
        "composite_score", "failed", "steps",
    )

    def to_row(self) -> list[str]:
        return [repr(getattr(self, f)) if isinstance(getattr(self, f), float)
                else str(getattr(self, f)) for f in self.CSV_FIELDS]


class _LaneFollower:
    """Scalar IDM state of one background agent bound to a lane centerline."""

    def __init__(self, track: AgentTrack, lane_idx: int, lane, signal: Signal, t0: int):
        self.bbox = track.bbox
        self.lane_idx = lane_idx
        self.lane = lane
        self.signal = signal
        s, _ = project_to_polyline(track.positions[t0], lane.points)
        self.s = s
        tangent = tangent_along(lane.points, s)
        self.v = max(float(track.velocities[t0] @ tangent), 0.0)

    def state(self) -> AgentState:
        from .geometry import interp_along

        pos = interp_along(self.lane.points, self.s)
        tangent = tangent_along(self.lane.points, self.s)
        heading = float(np.arctan2(tangent[1], tangent[0]))
        return AgentState(pos, heading, self.v * tangent, self.bbox)


def _assign_lane(track: AgentTrack, lanes, t0: int) -> int:
    """Nearest heading-compatible lane index for a background agent."""
    pos = track.positions[t0]
    heading = track.headings[t0]
    best, best_dist = 0, np.inf
    for i, lane in enumerate(lanes):
        s, dist = project_to_polyline(pos, lane.points)
        tangent = tangent_along(lane.points, s)
        align = float(np.cos(heading) * tangent[0] + np.sin(heading) * tangent[1])
        speed = float(np.linalg.norm(track.velocities[t0]))
        if align < 0.0 and speed > 0.1:
            continue
        if dist < best_dist:
            best, best_dist = i, dist
    return best


class Rollout:
    """Mutable episode state presenting a scenario-shaped view for windows."""

    def __init__(self, scenario: ScenarioWorld, t0: int, steps: int):
        self.scenario = scenario
        self.t0 = t0
        self.steps = steps
        n = t0 + steps + 1
        ego = scenario.ego_track
        self.ego_positions = np.zeros((n, 2))
        self.ego_headings = np.zeros(n)
        self.ego_velocities = np.zeros((n, 2))
        m = min(n, len(ego))
        self.ego_positions[:m] = ego.positions[:m]
        self.ego_headings[:m] = ego.headings[:m]
        self.ego_velocities[:m] = ego.velocities[:m]
        self.ego_bbox = ego.bbox
        self.cur = t0

        self.agent_positions = [np.zeros((n, 2)) for _ in scenario.agent_tracks]
        self.agent_headings = [np.zeros(n) for _ in scenario.agent_tracks]
        self.agent_velocities = [np.zeros((n, 2)) for _ in scenario.agent_tracks]
        for i, tr in enumerate(scenario.agent_tracks):
            k = min(n, len(tr))
            self.agent_positions[i][:k] = tr.positions[:k]
            self.agent_headings[i][:k] = tr.headings[:k]
            self.agent_velocities[i][:k] = tr.velocities[:k]

        lanes = [p for p in scenario.map_polylines if p.kind is PolylineKind.LANE]
        self._lanes = lanes
        lane_ids = [i for i, p in enumerate(scenario.map_polylines) if p.kind is PolylineKind.LANE]
        self.followers = []
        for tr in scenario.agent_tracks:
            li = _assign_lane(tr, lanes, t0)
            signal = scenario.traffic_context.get(lane_ids[li], Signal.NONE)
            self.followers.append(_LaneFollower(tr, li, lanes[li], signal, t0))

    # -- scenario-shaped view ------------------------------------------------
    @property
    def last_frame(self) -> int:
        return len(self.ego_positions) - 1

    def view(self):
        ego = AgentTrack(self.ego_positions, self.ego_headings, self.ego_velocities,
                         self.ego_bbox, np.ones(len(self.ego_positions), dtype=bool))
        agents = [
            AgentTrack(self.agent_positions[i], self.agent_headings[i],
                       self.agent_velocities[i], tr.bbox,
                       np.ones(len(self.ego_positions), dtype=bool))
            for i, tr in enumerate(self.scenario.agent_tracks)
        ]
        s = self.scenario
        return _RolloutView(ego, agents, s.map_polylines, s.obstacles, s.reference_lines,
                            s.traffic_context, self.last_frame)

    def ego_state(self, t: int) -> AgentState:
        return AgentState(self.ego_positions[t].copy(), float(self.ego_headings[t]),
                          self.ego_velocities[t].copy(), self.ego_bbox)


@dataclass
class _RolloutView:
    ego_track: AgentTrack
    agent_tracks: list[AgentTrack]
    map_polylines: list
    obstacles: list
    reference_lines: list
    traffic_context: dict
    last_frame: int


def _ego_lane_presence(rollout: Rollout, lane_idx: int) -> tuple[float, float] | None:
    """Ego (s, lane-aligned speed) if the ego currently occupies the lane."""
    lane = rollout._lanes[lane_idx]
    pos = rollout.ego_positions[rollout.cur]
    s, dist = project_to_polyline(pos, lane.points)
    half_width = 0.5 * float(np.linalg.norm(lane.left_boundary[0] - lane.right_boundary[0]))
    if dist > half_width + 0.3:
        return None
    tangent = tangent_along(lane.points, s)
    v = float(rollout.ego_velocities[rollout.cur] @ tangent)
    return s, v


def step_world(rollout: Rollout, ego_plan: PlanResult, idm: IDMParams,
               mode: str = "reactive") -> None:
    """Advance the world one tick: ego tracks its plan's first waypoint,
    background agents replay the log (nonreactive) or follow IDM (reactive)."""
    if ego_plan.selected.shape[0] < 1:
        raise ValueError("ego plan has no future points")
    t = rollout.cur
    origin = rollout.ego_positions[t].copy()
    heading = float(rollout.ego_headings[t])

    p = ego_plan.selected[0]
    new_pos = to_world(p[0:2], origin, heading)
    new_heading = wrap_angle(np.arctan2(p[3], p[2]) + heading)
    rot = np.array([[np.cos(heading), -np.sin(heading)], [np.sin(heading), np.cos(heading)]])
    new_vel = rot @ p[4:6]
    rollout.ego_positions[t + 1] = new_pos
    rollout.ego_headings[t + 1] = new_heading
    rollout.ego_velocities[t + 1] = new_vel

    if mode == "nonreactive":
        for i, tr in enumerate(rollout.scenario.agent_tracks):
            src = min(t + 1, len(tr) - 1)
            rollout.agent_positions[i][t + 1] = tr.positions[src]
            rollout.agent_headings[i][t + 1] = tr.headings[src]
            rollout.agent_velocities[i][t + 1] = tr.velocities[src]
    else:
        _step_idm_agents(rollout, idm)
    rollout.cur = t + 1


def _step_idm_agents(rollout: Rollout, idm: IDMParams) -> None:
    t = rollout.cur
    # collect per-lane occupancy: (s, v, half_length) for leader lookup
    occupancy: dict[int, list[tuple[float, float, float, int]]] = {}
    for ai, f in enumerate(rollout.followers):
        occupancy.setdefault(f.lane_idx, []).append((f.s, f.v, f.bbox[0] / 2.0, ai))
    for li in range(len(rollout._lanes)):
        ego = _ego_lane_presence(rollout, li)
        if ego is not None:
            occupancy.setdefault(li, []).append((ego[0], ego[1], rollout.ego_bbox[0] / 2.0, -1))

    for ai, f in enumerate(rollout.followers):
        if f.signal is Signal.RED:  # queued at a red light: hold
            new_state = f.state()
        else:
            leader = None
            for s, v, half_len, other in sorted(occupancy.get(f.lane_idx, [])):
                if other != ai and s > f.s:
                    leader = (s, v, half_len)
                    break
            v_desired = idm.desired_speed or f.lane.speed_limit
            if leader is None:
                a = idm_acceleration(f.v, v_desired, None, 0.0, idm)
            else:
                gap = leader[0] - f.s - leader[2] - f.bbox[0] / 2.0
                a = idm_acceleration(f.v, v_desired, gap, f.v - leader[1], idm)
            f.v = max(f.v + a * DT, 0.0)
            f.s = f.s + f.v * DT
            new_state = f.state()
        rollout.agent_positions[ai][t + 1] = new_state.position
        rollout.agent_headings[ai][t + 1] = new_state.heading
        rollout.agent_velocities[ai][t + 1] = new_state.velocity


def run_episode(
    scenario: ScenarioWorld,
    planner,
    mode: str = "reactive",
    seed: int = 0,
    steps: int = EPISODE_STEPS,
    idm: IDMParams | None = None,
    history_frames: int = HISTORY_FRAMES,
) -> SimReport:
    """Run one closed-loop episode and score it."""
    if mode not in ("reactive", "nonreactive"):
        raise ValueError(f"unknown simulation mode {mode!r}")
    idm = idm or IDMParams()
    torch.manual_seed(seed)
    t0 = history_frames
    rollout = Rollout(scenario, t0, steps)
    planner.reset(scenario)

    records: list[StepRecord] = []
    failed, reason = False, ""
    for k in range(steps):
        t_now = rollout.cur
        try:
            window = slice_window(rollout.view(), t_now, history_frames, 0)
            plan = planner.plan(window)
            if plan.selected.shape[0] < 1:
                raise PlannerFailure("empty plan")
            origin = (rollout.ego_positions[t_now].copy(), float(rollout.ego_headings[t_now]))
            step_world(rollout, plan, idm, mode)
        except Exception as e:  # noqa: BLE001 - planner failures end the episode
            failed, reason = True, f"{type(e).__name__}: {e}"
            logger.warning("episode failed at step %d: %s", k, reason)
            break
        agent_states = [
            AgentState(rollout.agent_positions[i][rollout.cur].copy(),
                       float(rollout.agent_headings[i][rollout.cur]),
                       rollout.agent_velocities[i][rollout.cur].copy(), tr.bbox)
            for i, tr in enumerate(scenario.agent_tracks)
        ]
        records.append(StepRecord(rollout.cur, rollout.ego_state(rollout.cur),
                                  agent_states, plan, origin))

    trace = EpisodeTrace(records, scenario.ego_track.bbox, t0, failed, reason)
    report = compute_metrics(trace, scenario)
    report.planner = getattr(planner, "name", type(planner).__name__)
    report.mode = mode
    return report


def _lane_corridor(scenario: ScenarioWorld):
    polys = []
    for p in scenario.map_polylines:
        if p.kind is not PolylineKind.LANE:
            continue
        ring = np.concatenate([p.left_boundary, p.right_boundary[::-1]], axis=0)
        polys.append(Polygon(ring).buffer(0.05))
    return unary_union(polys) if polys else Polygon()


def _nearest_lane(scenario: ScenarioWorld, pos: np.ndarray):
    best, best_dist, best_s = None, np.inf, 0.0
    for p in scenario.map_polylines:
        if p.kind is not PolylineKind.LANE:
            continue
        s, dist = project_to_polyline(pos, p.points)
        if dist < best_dist:
            best, best_dist, best_s = p, dist, s
    return best, best_s


def compute_metrics(trace: EpisodeTrace, scenario: ScenarioWorld) -> SimReport:
    """Score one episode trace against the scenario's map and expert log."""
    report = SimReport(
        scenario_kind=scenario.kind, scenario_seed=scenario.seed, planner="",
        mode="", at_fault_collision_free=1, drivable_compliance=1,
        progress_ratio=0.0, comfort_ok=0, speed_compliance=0.0,
        direction_compliance=1, composite_score=0.0, failed=trace.failed,
        steps=len(trace.steps), trace=trace,
    )
    if not trace.steps:
        return report

    ego_bbox = trace.ego_bbox
    corridor = _lane_corridor(scenario)

    # --- collisions: fault judged at contact onset; rear contact while the
    # ego is not accelerating is excluded as externally initiated -------------
    collision_free = 1
    prev_speed = float(np.linalg.norm(scenario.ego_track.velocities[trace.t0]))
    in_contact: set[int] = set()
    for rec in trace.steps:
        ego = rec.ego_state
        speed = float(np.linalg.norm(ego.velocity))
        ego_lon_acc = (speed - prev_speed) / DT
        prev_speed = speed
        others = [(a.position, a.heading, a.bbox) for a in rec.agent_states] + [
            (o.position, o.heading, o.bbox) for o in scenario.obstacles
        ]
        for i, (pos, heading, bbox) in enumerate(others):
            overlap = rectangles_overlap(ego.position, ego.heading, ego_bbox,
                                         pos, heading, bbox)
            if not overlap:
                in_contact.discard(i)
                continue
            if i in in_contact:
                continue
            in_contact.add(i)
            rel = (pos - ego.position) @ heading_to_unit(ego.heading)
            rear_contact = rel < 0.0 and ego_lon_acc <= 1e-6
            if not rear_contact:
                collision_free = 0
                break
        if collision_free == 0:
            break
    report.at_fault_collision_free = collision_free

    # --- drivable area -------------------------------------------------------
    drivable = 1
    for rec in trace.steps:
        corners = rectangle_corners(rec.ego_state.position, rec.ego_state.heading, *ego_bbox)
        if not all(corridor.contains(Point(c)) for c in corners):
            drivable = 0
            break
    report.drivable_compliance = drivable

    # --- comfort over the executed trace -------------------------------------
    h = np.array([r.ego_state.heading for r in trace.steps])
    executed = np.concatenate(
        [
            np.array([r.ego_state.position for r in trace.steps]),
            np.cos(h)[:, None], np.sin(h)[:, None],
            np.array([r.ego_state.velocity for r in trace.steps]),
        ],
        axis=1,
    )
    if len(trace.steps) >= 4:
        profile = dynamic_profile(torch.as_tensor(executed), DT)
        report.comfort_ok = int(not violates_limits(profile, ComfortLimits()))

    # --- progress vs the expert ----------------------------------------------
    start = scenario.ego_track.positions[trace.t0]
    ego_path = np.concatenate([start[None, :], executed[:, 0:2]], axis=0)
    executed_len = float(np.linalg.norm(np.diff(ego_path, axis=0), axis=1).sum())
    end_frame = min(trace.t0 + len(trace.steps), len(scenario.ego_track) - 1)
    expert_path = scenario.ego_track.positions[trace.t0 : end_frame + 1]
    expert_len = float(np.linalg.norm(np.diff(expert_path, axis=0), axis=1).sum())
    if trace.failed:
        report.progress_ratio = 0.0
    else:
        report.progress_ratio = float(np.clip(executed_len / max(expert_len, 1e-9), 0.0, 1.0))

    # --- speed and direction compliance ---------------------------------------
    ok_frames = 0
    wrong_way_s = 0.0
    for rec in trace.steps:
        lane, s = _nearest_lane(scenario, rec.ego_state.position)
        speed = float(np.linalg.norm(rec.ego_state.velocity))
        limit = lane.speed_limit if lane is not None else np.inf
        if speed <= limit + 0.5:
            ok_frames += 1
        if lane is not None:
            tangent = tangent_along(lane.points, s)
            if float(heading_to_unit(rec.ego_state.heading) @ tangent) < 0.0:
                wrong_way_s += DT
    report.speed_compliance = ok_frames / len(trace.steps)
    report.direction_compliance = 0 if wrong_way_s > 1.0 else 1

    report.composite_score = composite_score(report)
    return report


def composite_score(report: SimReport) -> float:
    """0-100 score: hard gates (collision, drivable, direction) times the mean
    of progress, comfort, and speed compliance."""
    gates = (report.at_fault_collision_free * report.drivable_compliance
             * report.direction_compliance)
    soft = (report.progress_ratio + report.comfort_ok + report.speed_compliance) / 3.0
    return 100.0 * gates * soft


def write_reports_csv(reports: list[SimReport], path) -> None:
    """One row per episode plus a mean summary row; floats use repr for
    byte-stable output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(SimReport.CSV_FIELDS)]
    lines += [",".join(r.to_row()) for r in reports]
    if reports:
        def mean(f):
            return float(np.mean([getattr(r, f) for r in reports]))

        summary = SimReport(
            scenario_kind="summary", scenario_seed=-1,
            planner=reports[0].planner, mode=reports[0].mode,
            at_fault_collision_free=int(mean("at_fault_collision_free")),
            drivable_compliance=int(mean("drivable_compliance")),
            progress_ratio=mean("progress_ratio"),
            comfort_ok=int(mean("comfort_ok")),
            speed_compliance=mean("speed_compliance"),
            direction_compliance=int(mean("direction_compliance")),
            composite_score=mean("composite_score"),
            failed=any(r.failed for r in reports),
            steps=int(mean("steps")),
        )
        lines.append(",".join(summary.to_row()))
    path.write_text("\n".join(lines) + "\n")
