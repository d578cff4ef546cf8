"""Converts observation windows into the numeric arrays the encoders consume.

Everything is expressed in the ego frame at t_now, which makes the resulting
FeatureBundle invariant under rigid transforms of the world (translations
exactly, rotations to float round-off).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import resample_polyline, to_local, wrap_angle
from .scenario import AgentTrack, ObservationWindow, Polyline

ROLE_EGO, ROLE_AGENT, ROLE_OBSTACLE, ROLE_MAP = 0, 1, 2, 3


@dataclass
class FeatureParams:
    """Caps and sampling densities for feature extraction."""

    radius: float = 120.0
    max_agents: int = 32
    max_polylines: int = 64
    points_per_polyline: int = 20
    max_ref_lines: int = 4


@dataclass
class FeatureBundle:
    """Encoder-ready arrays for one observation window (ego frame at t_now)."""

    agent_features: np.ndarray  # [N_A+1, T_H-1, 8], ego at row 0
    agent_valid: np.ndarray  # [N_A+1, T_H] bool
    polyline_features: np.ndarray  # [N_P, n_p, 8]
    obstacle_features: np.ndarray  # [N_S, 5]
    token_positions: np.ndarray  # [1+N_A+N_S+N_P, 2]
    token_attrs: np.ndarray  # [1+N_A+N_S+N_P] role codes
    ego_history: np.ndarray  # [T_H, 5]: (x, y, heading, vx, vy), raw ego-frame history
    ref_features: np.ndarray  # [N_R, n_p, 8]
    ref_points: np.ndarray  # [N_R, n_p, 2] resampled reference centerlines
    ref_line_ids: tuple  # scenario indices of the selected reference lines

    @property
    def num_agents(self) -> int:
        return self.agent_features.shape[0] - 1

    @property
    def num_obstacles(self) -> int:
        return self.obstacle_features.shape[0]

    @property
    def num_polylines(self) -> int:
        return self.polyline_features.shape[0]


def _local_track_states(track: AgentTrack, sl: slice, origin, heading) -> np.ndarray:
    """Per-frame (x, y, heading, vx, vy) in the ego frame for history frames."""
    pos = to_local(track.positions[sl], origin, heading)
    head = wrap_angle(track.headings[sl] - heading)
    vel = track.velocities[sl] @ np.array(
        [[np.cos(heading), -np.sin(heading)], [np.sin(heading), np.cos(heading)]]
    )
    return np.concatenate([pos, head[:, None], vel], axis=1)


def _diff_features(states: np.ndarray, observed: np.ndarray, bbox) -> tuple[np.ndarray, np.ndarray]:
    """Differenced per-step features [T_H-1, 8] plus the per-frame validity row."""
    t_h = states.shape[0]
    feats = np.zeros((t_h - 1, 8))
    valid_pair = observed[1:] & observed[:-1]
    d = states[1:] - states[:-1]
    d[:, 2] = wrap_angle(d[:, 2])
    feats[:, 0:2] = d[:, 0:2]
    feats[:, 2] = d[:, 2]
    feats[:, 3:5] = d[:, 3:5]
    feats[:, 5] = bbox[0]
    feats[:, 6] = bbox[1]
    feats[:, 7] = valid_pair.astype(float)
    feats[~valid_pair, :] = 0.0
    return feats, observed.astype(bool)


def _select_agents(w: ObservationWindow, params: FeatureParams) -> list[int]:
    """Agent indices observed in the window and within the radius.

    Capped to the nearest max_agents; the surviving set is ordered by original
    index so token order is stable under rigid world transforms.
    """
    ego_pos = w.scenario.ego_track.positions[w.t_now]
    sl = w.history_slice
    ranked = []
    for i, track in enumerate(w.scenario.agent_tracks):
        obs = track.observed[sl]
        if not obs.any():
            continue
        last = np.where(obs)[0][-1]
        pos = track.positions[sl][last]
        dist = float(np.linalg.norm(pos - ego_pos))
        if dist <= params.radius:
            ranked.append((dist, i))
    ranked.sort()
    return sorted(i for _, i in ranked[: params.max_agents])


def build_agent_features(
    w: ObservationWindow, params: FeatureParams | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Differenced agent histories [N_A+1, T_H-1, 8] and validity [N_A+1, T_H]."""
    params = params or FeatureParams()
    ego_now = w.ego_now()
    origin, heading = ego_now.position, ego_now.heading
    sl = w.history_slice

    rows, valids = [], []
    ego_states = _local_track_states(w.scenario.ego_track, sl, origin, heading)
    f, v = _diff_features(ego_states, w.scenario.ego_track.observed[sl], w.scenario.ego_track.bbox)
    rows.append(f)
    valids.append(v)
    for i in _select_agents(w, params):
        track = w.scenario.agent_tracks[i]
        states = _local_track_states(track, sl, origin, heading)
        f, v = _diff_features(states, track.observed[sl], track.bbox)
        rows.append(f)
        valids.append(v)
    return np.stack(rows), np.stack(valids)


def _polyline_point_features(
    line: Polyline, origin, heading, n_points: int
) -> tuple[np.ndarray, np.ndarray]:
    """8-channel per-point features and the resampled local centerline."""
    pts = to_local(resample_polyline(line.points, n_points), origin, heading)
    left = to_local(resample_polyline(line.left_boundary, n_points), origin, heading)
    right = to_local(resample_polyline(line.right_boundary, n_points), origin, heading)
    feats = np.zeros((n_points, 8))
    feats[:, 0:2] = pts - pts[0]
    feats[1:, 2:4] = pts[1:] - pts[:-1]
    feats[:, 4:6] = pts - left
    feats[:, 6:8] = pts - right
    return feats, pts


def _select_polylines(polylines, ego_pos, radius, cap) -> list[int]:
    """Nearest-capped polyline indices, returned in original (stable) order."""
    ranked = []
    for i, line in enumerate(polylines):
        dist = float(np.min(np.linalg.norm(line.points - ego_pos, axis=1)))
        if dist <= radius:
            ranked.append((dist, i))
    ranked.sort()
    return sorted(i for _, i in ranked[:cap])


def build_polyline_features(w: ObservationWindow, params: FeatureParams | None = None) -> np.ndarray:
    """Per-point polyline features [N_P, n_p, 8] in the ego frame."""
    params = params or FeatureParams()
    ego_now = w.ego_now()
    idx = _select_polylines(w.scenario.map_polylines, ego_now.position, params.radius, params.max_polylines)
    feats = [
        _polyline_point_features(w.scenario.map_polylines[i], ego_now.position, ego_now.heading,
                                 params.points_per_polyline)[0]
        for i in idx
    ]
    if not feats:
        return np.zeros((0, params.points_per_polyline, 8))
    return np.stack(feats)


def build_obstacle_features(w: ObservationWindow, params: FeatureParams | None = None) -> np.ndarray:
    """Obstacle features [N_S, 5]: ego-frame (x, y, heading, length, width)."""
    params = params or FeatureParams()
    ego_now = w.ego_now()
    rows = []
    for o in w.scenario.obstacles:
        pos = to_local(o.position, ego_now.position, ego_now.heading)
        if np.linalg.norm(pos) > params.radius:
            continue
        rows.append([pos[0], pos[1], wrap_angle(o.heading - ego_now.heading), o.bbox[0], o.bbox[1]])
    return np.array(rows, dtype=float).reshape(-1, 5)


def to_ego_frame(w: ObservationWindow, params: FeatureParams | None = None) -> FeatureBundle:
    """Assemble the full FeatureBundle for one window."""
    params = params or FeatureParams()
    ego_now = w.ego_now()
    origin, heading = ego_now.position, ego_now.heading
    sl = w.history_slice

    agent_features, agent_valid = build_agent_features(w, params)
    obstacle_features = build_obstacle_features(w, params)
    ego_history = _local_track_states(w.scenario.ego_track, sl, origin, heading)

    map_idx = _select_polylines(w.scenario.map_polylines, origin, params.radius, params.max_polylines)
    map_feats, map_pts = [], []
    for i in map_idx:
        f, pts = _polyline_point_features(
            w.scenario.map_polylines[i], origin, heading, params.points_per_polyline
        )
        map_feats.append(f)
        map_pts.append(pts)
    n_p = params.points_per_polyline
    polyline_features = np.stack(map_feats) if map_feats else np.zeros((0, n_p, 8))

    ref_idx = _select_polylines(w.scenario.reference_lines, origin, params.radius, params.max_ref_lines)
    ref_feats, ref_pts = [], []
    for i in ref_idx:
        f, pts = _polyline_point_features(
            w.scenario.reference_lines[i], origin, heading, params.points_per_polyline
        )
        ref_feats.append(f)
        ref_pts.append(pts)
    ref_features = np.stack(ref_feats) if ref_feats else np.zeros((0, n_p, 8))
    ref_points = np.stack(ref_pts) if ref_pts else np.zeros((0, n_p, 2))

    # latest known position per token, ego-frame, for positional embeddings
    positions = [np.zeros(2)]
    for row, i in enumerate(_select_agents(w, params)):
        track = w.scenario.agent_tracks[i]
        obs = track.observed[sl]
        last = np.where(obs)[0][-1]
        positions.append(to_local(track.positions[sl][last], origin, heading))
    positions.extend(obstacle_features[:, 0:2])
    positions.extend(pts[n_p // 2] for pts in map_pts)
    token_positions = np.asarray(positions, dtype=float).reshape(-1, 2)

    n_a = agent_features.shape[0] - 1
    token_attrs = np.concatenate(
        [
            [ROLE_EGO],
            np.full(n_a, ROLE_AGENT),
            np.full(obstacle_features.shape[0], ROLE_OBSTACLE),
            np.full(polyline_features.shape[0], ROLE_MAP),
        ]
    ).astype(np.int64)

    return FeatureBundle(
        agent_features=agent_features,
        agent_valid=agent_valid,
        polyline_features=polyline_features,
        obstacle_features=obstacle_features,
        token_positions=token_positions,
        token_attrs=token_attrs,
        ego_history=ego_history,
        ref_features=ref_features,
        ref_points=ref_points,
        ref_line_ids=tuple(ref_idx),
    )
