"""Desk-scale ablation sweeps over fusion mode, pool interval, fine-tune epochs,
and the comfort loss, plus the plan-continuity diagnostic."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .geometry import to_world
from .model import LHPFModel, ModelConfig, load_checkpoint
from .planners import LHPFPlanner
from .simulation import EPISODE_STEPS, EpisodeTrace, IDMParams, run_episode
from .training import TrainConfig, TrainingSample, train_phase2

logger = logging.getLogger(__name__)

SWEEP_AXES = ("fusion", "interval", "epochs", "comfort")


class ConsistencyUndefinedError(ValueError):
    """Raised when a trace has fewer than two plans."""


def consistency_metric(trace: EpisodeTrace) -> float:
    """Mean world-frame distance between the overlapping segments of successive
    selected plans. Zero means consecutive plans agree exactly on their overlap."""
    if len(trace.steps) < 2:
        raise ConsistencyUndefinedError("need at least two planned steps")
    dists = []
    for prev, cur in zip(trace.steps[:-1], trace.steps[1:]):
        a = to_world(prev.plan.selected[1:, 0:2], *prev.plan_origin)
        b = to_world(cur.plan.selected[:-1, 0:2], *cur.plan_origin)
        n = min(len(a), len(b))
        if n == 0:
            continue
        dists.append(float(np.linalg.norm(a[:n] - b[:n], axis=1).mean()))
    return float(np.mean(dists))


@dataclass
class SweepRow:
    axis: str
    value: object
    composite_score: float
    comfort: float
    progress: float
    consistency: float
    failed: bool = False

    def to_csv_row(self) -> list[str]:
        return [self.axis, str(self.value), repr(self.composite_score), repr(self.comfort),
                repr(self.progress), repr(self.consistency), str(self.failed)]


SWEEP_CSV_FIELDS = ("axis", "value", "composite_score", "comfort", "progress",
                    "consistency", "failed")


@dataclass
class AblationConfig:
    """Everything one sweep point needs: a frozen backbone, fine-tune settings,
    and the evaluation episode setup."""

    backbone_path: str | Path
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "reactive"
    seed: int = 0
    idm: IDMParams = field(default_factory=IDMParams)
    episode_steps: int = EPISODE_STEPS


def _finetuned_model(base: AblationConfig, samples: list[TrainingSample],
                     fusion_mode: str | None = None, interval: int | None = None,
                     epochs: int | None = None, use_comfort: bool | None = None) -> LHPFModel:
    model, _ = load_checkpoint(base.backbone_path)
    cfg: ModelConfig = model.cfg
    if fusion_mode is not None and fusion_mode != cfg.fusion.mode:
        cfg = replace(cfg, fusion=replace(cfg.fusion, mode=fusion_mode))
        fresh = LHPFModel(cfg)
        fresh.backbone.load_state_dict(model.backbone.state_dict())
        model = fresh
    if interval is not None:
        model.cfg = replace(model.cfg, pool_interval=int(interval))
    train_cfg = copy.deepcopy(base.train_cfg)
    if epochs is not None:
        train_cfg.epochs = int(epochs)
    if use_comfort is not None:
        train_cfg.use_comfort = bool(use_comfort)
    train_phase2(model, samples, train_cfg)
    return model


def evaluate_model(model: LHPFModel, eval_scenarios, mode: str = "reactive",
                   seed: int = 0, idm: IDMParams | None = None,
                   steps: int = EPISODE_STEPS, planner_factory=None
                   ) -> tuple[float, float, float, float]:
    """Closed-loop evaluation; returns (composite, comfort, progress, consistency) means."""
    reports = []
    consistencies = []
    for scenario in eval_scenarios:
        planner = planner_factory(model) if planner_factory else LHPFPlanner(model)
        report = run_episode(scenario, planner, mode=mode, seed=seed,
                             idm=idm or IDMParams(), steps=steps)
        reports.append(report)
        if len(report.trace.steps) >= 2:
            consistencies.append(consistency_metric(report.trace))
    composite = float(np.mean([r.composite_score for r in reports]))
    comfort = float(np.mean([r.comfort_ok for r in reports]))
    progress = float(np.mean([r.progress_ratio for r in reports]))
    consistency = float(np.mean(consistencies)) if consistencies else float("nan")
    return composite, comfort, progress, consistency


def sweep(axis: str, values, base_cfg: AblationConfig, samples: list[TrainingSample],
          eval_scenarios, out_csv=None) -> list[SweepRow]:
    """One fine-tune plus closed-loop evaluation per axis value."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r} (choose from {SWEEP_AXES})")
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for value in values:
        torch.manual_seed(base_cfg.seed)
        try:
            kwargs = {}
            if axis == "fusion":
                kwargs["fusion_mode"] = str(value)
            elif axis == "interval":
                kwargs["interval"] = int(value)
            elif axis == "epochs":
                kwargs["epochs"] = int(value)
            else:
                kwargs["use_comfort"] = bool(value)
            model = _finetuned_model(base_cfg, samples, **kwargs)
            composite, comfort, progress, consistency = evaluate_model(
                model, eval_scenarios, base_cfg.mode, base_cfg.seed, base_cfg.idm,
                steps=base_cfg.episode_steps,
            )
            rows.append(SweepRow(axis, value, composite, comfort, progress, consistency))
        except Exception as e:  # noqa: BLE001 - a failed point must not kill the sweep
            logger.warning("sweep point %s=%r failed: %s", axis, value, e)
            rows.append(SweepRow(axis, value, float("nan"), float("nan"),
                                 float("nan"), float("nan"), failed=True))
    if out_csv is not None:
        write_sweep_csv(rows, out_csv)
    return rows


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(SWEEP_CSV_FIELDS)]
    lines += [",".join(r.to_csv_row()) for r in rows]
    path.write_text("\n".join(lines) + "\n")
