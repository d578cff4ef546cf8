"""Two-phase training: full backbone imitation first, then fine-tuning of the
fusion projection, spatio-temporal decoder, and its heads with the backbone
frozen."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .decoder import PlanningEmbedding, emit_plan
from .features import FeatureBundle, to_ego_frame
from .geometry import to_local, wrap_angle
from .history import pool_slot_count
from .losses import ComfortLimits, comfort_loss, imitation_loss, project_target
from .model import LHPFModel, ModelConfig
from .scenario import HORIZON_FRAMES, ObservationWindow, ScenarioWorld, slice_window

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass
class TrainConfig:
    epochs: int = 5
    warmup_epochs: int = 3
    peak_lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    grad_clip: float = 5.0
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)  # (reg, cls, comfort)
    use_comfort: bool = True
    seed: int = 0
    sample_stride: int = 10  # frames between training windows
    early_stop_loss: float | None = None
    duplicate_history: bool = True  # phase 2: duplicate the current embedding

    def __post_init__(self):
        if any(w < 0 for w in self.loss_weights):
            raise ValueError("loss weights must be non-negative")


@dataclass
class TrainingSample:
    bundle: FeatureBundle
    target: np.ndarray  # [T_f, 6], ego frame
    target_index: tuple[int, int]
    scenario_index: int
    t_now: int
    scenario: ScenarioWorld | None = None  # needed only for true-history fine-tuning


def expert_target(window: ObservationWindow) -> np.ndarray:
    """Expert horizon re-expressed in the ego frame at t_now, [T_f, 6]."""
    ego = window.ego_now()
    world = window.expert_horizon()
    pos = to_local(world[:, 0:2], ego.position, ego.heading)
    heading = wrap_angle(np.arctan2(world[:, 3], world[:, 2]) - ego.heading)
    vel = world[:, 4:6] @ np.array(
        [[np.cos(ego.heading), -np.sin(ego.heading)], [np.sin(ego.heading), np.cos(ego.heading)]]
    )
    return np.concatenate(
        [pos, np.cos(heading)[:, None], np.sin(heading)[:, None], vel], axis=1
    )


def build_training_samples(
    scenarios: list[ScenarioWorld], cfg: ModelConfig, stride: int = 10,
    horizon_frames: int = HORIZON_FRAMES,
) -> list[TrainingSample]:
    """Precompute feature bundles and supervision targets for all windows."""
    samples = []
    for si, scenario in enumerate(scenarios):
        t_first = cfg.history_frames
        t_last = scenario.last_frame - horizon_frames
        for t_now in range(t_first, t_last + 1, stride):
            window = slice_window(scenario, t_now, cfg.history_frames, horizon_frames)
            bundle = to_ego_frame(window, cfg.features)
            target = expert_target(window)
            if bundle.ref_points.shape[0] == 0:
                continue
            _, target_index = project_target(target, bundle.ref_points, cfg.decoder.num_modes)
            samples.append(TrainingSample(bundle, target, target_index, si, t_now, scenario))
    return samples


def lr_for_epoch(epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup to peak_lr, then cosine decay to zero."""
    if epoch < cfg.warmup_epochs:
        return cfg.peak_lr * (epoch + 1) / cfg.warmup_epochs
    span = max(cfg.epochs - cfg.warmup_epochs, 1)
    progress = (epoch - cfg.warmup_epochs) / span
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def _sample_loss(model: LHPFModel, sample: TrainingSample, cfg: TrainConfig,
                 phase: int, limits: ComfortLimits):
    dtype = model.backbone.dtype
    target = torch.as_tensor(sample.target, dtype=dtype)
    if phase == 1:
        _, _, _, plan = model.backbone(sample.bundle)
    else:
        entries = _phase2_entries(model, sample, cfg)
        _, plan = model.plan_with_history(sample.bundle, entries)
    l_reg, l_cls = imitation_loss(plan, target, sample.target_index)
    w_reg, w_cls, w_comfort = cfg.loss_weights
    total = w_reg * l_reg + w_cls * l_cls
    if cfg.use_comfort and w_comfort > 0:
        r, l = sample.target_index
        total = total + w_comfort * (
            comfort_loss(plan.trajectories[r, l], limits)
            + comfort_loss(plan.free_trajectory, limits)
        )
    return total, l_reg.detach(), l_cls.detach()


def _phase2_entries(model: LHPFModel, sample: TrainingSample, cfg: TrainConfig):
    """History entries for phase-two training.

    Default: duplicate the current planning embedding across all pool slots.
    Alternative: re-encode true past windows of the same scenario (slower)."""
    slots = pool_slot_count(model.cfg.history_frames, model.cfg.pool_interval)
    if cfg.duplicate_history:
        with torch.no_grad():
            _, _, q_dec, _ = model.backbone(sample.bundle)
        pe = PlanningEmbedding(q_dec, sample.t_now, sample.bundle.ref_line_ids)
        return [pe] * slots
    scenario = sample.scenario
    if scenario is None:
        raise ValueError("true-history training needs samples built with scenarios attached")
    entries = []
    for k in reversed(range(slots)):
        t_past = sample.t_now - k * model.cfg.pool_interval
        if t_past < model.cfg.history_frames:
            continue
        window = slice_window(scenario, t_past, model.cfg.history_frames, 0)
        bundle = to_ego_frame(window, model.cfg.features)
        with torch.no_grad():
            _, _, q_dec, _ = model.backbone(bundle)
        entries.append(PlanningEmbedding(q_dec, t_past, bundle.ref_line_ids))
    return entries


def _run_training(model: LHPFModel, samples: list[TrainingSample], cfg: TrainConfig,
                  phase: int, parameters) -> dict:
    if not samples:
        raise ValueError("training needs a non-empty sample list")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    params = [p for p in parameters if p.requires_grad]
    optimizer = torch.optim.AdamW(params, lr=cfg.peak_lr, weight_decay=cfg.weight_decay)
    limits = ComfortLimits()
    history = {"epoch": [], "lr": [], "loss": [], "l_reg": [], "l_cls": [], "l_imitation": []}

    model.train()
    for epoch in range(cfg.epochs):
        lr = lr_for_epoch(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = rng.permutation(len(samples))
        epoch_loss, epoch_reg, epoch_cls = 0.0, 0.0, 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            optimizer.zero_grad()
            total = 0.0
            for idx in batch:
                loss, l_reg, l_cls = _sample_loss(model, samples[idx], cfg, phase, limits)
                total = total + loss
                epoch_reg += float(l_reg)
                epoch_cls += float(l_cls)
            total = total / len(batch)
            if not torch.isfinite(total):
                raise TrainingDivergedError(
                    f"phase {phase}: non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            total.backward()
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            optimizer.step()
            epoch_loss += float(total.detach()) * len(batch)

        n = len(samples)
        imitation = (epoch_reg + epoch_cls) / n
        history["epoch"].append(epoch)
        history["lr"].append(lr)
        history["loss"].append(epoch_loss / n)
        history["l_reg"].append(epoch_reg / n)
        history["l_cls"].append(epoch_cls / n)
        history["l_imitation"].append(imitation)
        logger.info("phase %d epoch %d lr %.2e loss %.4f imitation %.4f",
                    phase, epoch, lr, epoch_loss / n, imitation)
        if cfg.early_stop_loss is not None and imitation < cfg.early_stop_loss:
            break
    model.eval()
    return history


def train_phase1(model: LHPFModel, samples: list[TrainingSample], cfg: TrainConfig) -> dict:
    """Train encoder + spatial decoder with the imitation loss (comfort optional)."""
    return _run_training(model, samples, cfg, phase=1,
                         parameters=list(model.backbone_parameters()))


def train_phase2(model: LHPFModel, samples: list[TrainingSample], cfg: TrainConfig) -> dict:
    """Freeze the backbone; train fusion projection, the spatio-temporal decoder,
    and its trajectory/score heads."""
    model.freeze_backbone()
    return _run_training(model, samples, cfg, phase=2,
                         parameters=list(model.finetune_parameters()))


def open_loop_ade(model: LHPFModel, samples: list[TrainingSample],
                  use_history: bool = False) -> float:
    """Mean displacement between the selected plan and the expert target."""
    model.eval()
    errors = []
    with torch.no_grad():
        for sample in samples:
            if use_history:
                entries = _phase2_entries(
                    model, sample, TrainConfig(duplicate_history=True)
                )
                _, plan = model.plan_with_history(sample.bundle, entries)
            else:
                _, _, _, plan = model.backbone(sample.bundle)
            result = emit_plan(plan, sample.bundle.ref_line_ids)
            err = np.linalg.norm(result.selected[:, 0:2] - sample.target[:, 0:2], axis=1)
            errors.append(err.mean())
    return float(np.mean(errors))
