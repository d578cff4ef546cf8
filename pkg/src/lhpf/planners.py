"""Planner interfaces used by the closed-loop simulator.

A planner is reset once per episode and then asked for a plan at every step.
Plans are expressed in the ego frame at planning time; the simulator converts
them back to the world frame.
"""

from __future__ import annotations

import numpy as np

from .decoder import PlanResult, emit_plan
from .features import FeatureParams, to_ego_frame
from .geometry import to_local, wrap_angle
from .history import HistoryPool
from .model import LHPFModel, infer
from .scenario import ObservationWindow, ScenarioWorld


class PlannerFailure(RuntimeError):
    """Raised when a planner cannot produce a usable plan."""


class ExpertPlanner:
    """Oracle that replays the logged expert trajectory."""

    name = "expert"

    def __init__(self, horizon_frames: int = 80):
        self.horizon_frames = horizon_frames
        self.scenario: ScenarioWorld | None = None

    def reset(self, scenario: ScenarioWorld) -> None:
        self.scenario = scenario

    def plan(self, window: ObservationWindow) -> PlanResult:
        log = self.scenario.ego_track
        t = window.t_now
        idx = np.minimum(np.arange(t + 1, t + 1 + self.horizon_frames), len(log) - 1)
        ego = window.ego_now()
        pos = to_local(log.positions[idx], ego.position, ego.heading)
        heading = wrap_angle(log.headings[idx] - ego.heading)
        rot = np.array(
            [[np.cos(ego.heading), -np.sin(ego.heading)],
             [np.sin(ego.heading), np.cos(ego.heading)]]
        )
        vel = log.velocities[idx] @ rot
        traj = np.concatenate(
            [pos, np.cos(heading)[:, None], np.sin(heading)[:, None], vel], axis=1
        )
        return PlanResult(
            trajectories=traj[None, None],
            scores=np.zeros((1, 1)),
            free_trajectory=traj.copy(),
            selected_index=(0, 0),
            selected=traj,
            ref_line_ids=(),
        )


class BackbonePlanner:
    """Single-frame planner: the phase-one backbone without any history fusion."""

    name = "backbone"

    def __init__(self, model: LHPFModel, feature_params: FeatureParams | None = None):
        self.model = model
        self.feature_params = feature_params or model.cfg.features

    def reset(self, scenario: ScenarioWorld) -> None:
        pass

    def plan(self, window: ObservationWindow) -> PlanResult:
        import torch

        bundle = to_ego_frame(window, self.feature_params)
        self.model.eval()
        with torch.no_grad():
            _, _, _, plan = self.model.backbone(bundle)
        return emit_plan(plan, bundle.ref_line_ids)


class LHPFPlanner:
    """History-aware planner: backbone + pooled embeddings + spatio-temporal decoder."""

    name = "lhpf"

    def __init__(self, model: LHPFModel, feature_params: FeatureParams | None = None,
                 pool_interval: int | None = None):
        self.model = model
        self.feature_params = feature_params or model.cfg.features
        self.pool_interval = pool_interval or model.cfg.pool_interval
        self.pool: HistoryPool | None = None

    def reset(self, scenario: ScenarioWorld) -> None:
        self.pool = HistoryPool(
            capacity_frames=self.model.cfg.history_frames, interval=self.pool_interval
        )

    def plan(self, window: ObservationWindow) -> PlanResult:
        if self.pool is None:
            self.reset(window.scenario)
        bundle = to_ego_frame(window, self.feature_params)
        result, self.pool = infer(self.model, bundle, self.pool, window.t_now)
        return result
