"""Training losses: target construction, smooth-L1 imitation, cross-entropy
confidence, and the hinge comfort penalty on seven dynamic quantities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .decoder import PlanTensors
from .geometry import cumulative_arclength, project_to_polyline
from .scenario import DT


@dataclass(frozen=True)
class ComfortLimits:
    """Dynamic limits; the longitudinal-acceleration pair is signed, the rest
    bound absolute values."""

    lon_acc_min: float = -4.05  # m/s^2
    lon_acc_max: float = 2.40  # m/s^2
    lat_acc_abs_max: float = 4.89  # m/s^2
    yaw_acc_abs_max: float = 1.93  # rad/s^2
    yaw_rate_abs_max: float = 0.95  # rad/s
    lon_jerk_abs_max: float = 4.13  # m/s^3
    jerk_mag_abs_max: float = 8.37  # m/s^3

    def __post_init__(self):
        if self.lon_acc_min >= self.lon_acc_max:
            raise ValueError("lon_acc_min must be below lon_acc_max")
        for name in ("lat_acc_abs_max", "yaw_acc_abs_max", "yaw_rate_abs_max",
                     "lon_jerk_abs_max", "jerk_mag_abs_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class DynamicProfile:
    """Per-frame dynamic quantities of a trajectory (each shaped [T])."""

    lon_acc: torch.Tensor
    lat_acc: torch.Tensor
    yaw_acc: torch.Tensor
    yaw_rate: torch.Tensor
    lon_jerk: torch.Tensor
    jerk_mag: torch.Tensor


class HorizonTooShortError(ValueError):
    """Raised when a trajectory is too short for jerk estimation."""


def _ddt(x: torch.Tensor, dt: float) -> torch.Tensor:
    """Time derivative: central differences inside, one-sided at the ends."""
    d = torch.empty_like(x)
    d[1:-1] = (x[2:] - x[:-2]) / (2.0 * dt)
    d[0] = (x[1] - x[0]) / dt
    d[-1] = (x[-1] - x[-2]) / dt
    return d


def dynamic_profile(traj: torch.Tensor, dt: float = DT) -> DynamicProfile:
    """Differentiable dynamic quantities of a [T, 6] trajectory.

    Channels: (x, y, cos h, sin h, vx, vy). Yaw rate comes from the heading
    channels directly, so no unwrap step is needed; the longitudinal/lateral
    split uses the instantaneous heading frame.
    """
    traj = torch.as_tensor(traj)
    if traj.shape[0] < 4:
        raise HorizonTooShortError("need at least 4 points for jerk estimation")
    c, s = traj[:, 2], traj[:, 3]
    vx, vy = traj[:, 4], traj[:, 5]

    ax, ay = _ddt(vx, dt), _ddt(vy, dt)
    norm2 = torch.clamp(c * c + s * s, min=1e-12)
    norm = torch.sqrt(norm2)
    lon_acc = (ax * c + ay * s) / norm
    lat_acc = (-ax * s + ay * c) / norm
    yaw_rate = (c * _ddt(s, dt) - s * _ddt(c, dt)) / norm2
    yaw_acc = _ddt(yaw_rate, dt)
    lon_jerk = _ddt(lon_acc, dt)
    jx, jy = _ddt(ax, dt), _ddt(ay, dt)
    jerk_mag = torch.sqrt(jx * jx + jy * jy + 1e-16)
    return DynamicProfile(lon_acc, lat_acc, yaw_acc, yaw_rate, lon_jerk, jerk_mag)


def comfort_penalty(profile: DynamicProfile, limits: ComfortLimits) -> torch.Tensor:
    """Mean-over-frames hinge penalty of a dynamic profile against the limits."""
    per_frame = (
        torch.clamp(profile.lon_acc - limits.lon_acc_max, min=0.0)
        + torch.clamp(limits.lon_acc_min - profile.lon_acc, min=0.0)
        + torch.clamp(profile.lat_acc.abs() - limits.lat_acc_abs_max, min=0.0)
        + torch.clamp(profile.yaw_acc.abs() - limits.yaw_acc_abs_max, min=0.0)
        + torch.clamp(profile.yaw_rate.abs() - limits.yaw_rate_abs_max, min=0.0)
        + torch.clamp(profile.lon_jerk.abs() - limits.lon_jerk_abs_max, min=0.0)
        + torch.clamp(profile.jerk_mag.abs() - limits.jerk_mag_abs_max, min=0.0)
    )
    return per_frame.mean()


def comfort_loss(traj: torch.Tensor, limits: ComfortLimits | None = None,
                 dt: float = DT) -> torch.Tensor:
    """Hinge comfort loss of a [T, 6] trajectory."""
    return comfort_penalty(dynamic_profile(traj, dt), limits or ComfortLimits())


def violates_limits(profile: DynamicProfile, limits: ComfortLimits) -> bool:
    """True when any aspect exceeds its limit at any frame."""
    return bool(
        (profile.lon_acc > limits.lon_acc_max).any()
        or (profile.lon_acc < limits.lon_acc_min).any()
        or (profile.lat_acc.abs() > limits.lat_acc_abs_max).any()
        or (profile.yaw_acc.abs() > limits.yaw_acc_abs_max).any()
        or (profile.yaw_rate.abs() > limits.yaw_rate_abs_max).any()
        or (profile.lon_jerk.abs() > limits.lon_jerk_abs_max).any()
        or (profile.jerk_mag.abs() > limits.jerk_mag_abs_max).any()
    )


def project_target(
    expert_traj: np.ndarray, ref_points: np.ndarray, num_modes: int
) -> tuple[np.ndarray, tuple[int, int]]:
    """Build the supervision target from the expert horizon.

    expert_traj: [T_f, 6] in the ego frame; ref_points: [N_R, n_p, 2] resampled
    reference centerlines in the same frame. The reference line is the one
    nearest the expert end point; the longitudinal mode is the end point's
    arc-length progress bucket along that line. A (near-)stationary expert maps
    to mode 0 and the line nearest the start point.
    """
    if ref_points.shape[0] == 0:
        raise ValueError("need at least one reference line")
    end = expert_traj[-1, 0:2]
    start = expert_traj[0, 0:2]
    moved = float(np.linalg.norm(np.diff(expert_traj[:, 0:2], axis=0), axis=1).sum())

    anchor = start if moved < 1e-6 else end
    best_r, best_dist, best_s = 0, np.inf, 0.0
    for r in range(ref_points.shape[0]):
        s, dist = project_to_polyline(anchor, ref_points[r])
        if dist < best_dist:
            best_r, best_dist, best_s = r, dist, s
    if moved < 1e-6:
        return expert_traj.copy(), (best_r, 0)
    length = cumulative_arclength(ref_points[best_r])[-1]
    progress = best_s / max(length, 1e-9)
    mode = min(int(progress * num_modes), num_modes - 1)
    return expert_traj.copy(), (best_r, mode)


def imitation_loss(
    plan: PlanTensors, target: torch.Tensor, target_index: tuple[int, int],
    beta: float = 1.0,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Smooth-L1 regression on the target-indexed and free trajectories plus
    cross-entropy over the candidate scores; returns (L_reg, L_cls)."""
    r, l = target_index
    picked = plan.trajectories[r, l]
    l_reg = F.smooth_l1_loss(picked, target, beta=beta) + F.smooth_l1_loss(
        plan.free_trajectory, target, beta=beta
    )
    flat_scores = plan.scores.reshape(1, -1)
    label = torch.tensor([r * plan.scores.shape[1] + l], device=flat_scores.device)
    l_cls = F.cross_entropy(flat_scores, label)
    return l_reg, l_cls
