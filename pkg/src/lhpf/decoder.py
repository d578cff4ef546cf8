"""Query-based planning decoder: lateral/longitudinal spatial queries, the
factorized-attention decoder stack, and the trajectory/score/free heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .encoder import PolylineEncoder, SceneEncoding


@dataclass
class DecoderConfig:
    hidden_dim: int = 128
    num_layers: int = 4
    num_heads: int = 8
    dropout: float = 0.1
    num_modes: int = 4  # longitudinal query slots
    max_ref_lines: int = 4
    horizon_frames: int = 80

    def __post_init__(self):
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError("hidden_dim must be divisible by num_heads")


@dataclass
class SpatialQueries:
    lateral: torch.Tensor  # [N_R, D]
    longitudinal: torch.Tensor  # [N_L, D]
    q0: torch.Tensor  # [N_R, N_L, D]
    ref_line_ids: tuple


@dataclass
class PlanningEmbedding:
    """Decoder latent per (reference line x longitudinal mode); the pool unit."""

    values: torch.Tensor  # [N_R, N_L, D]
    t_frame: int
    ref_line_ids: tuple


@dataclass
class PlanTensors:
    """Raw head outputs kept differentiable for training."""

    trajectories: torch.Tensor  # [N_R, N_L, T_f, 6]
    scores: torch.Tensor  # [N_R, N_L]
    free_trajectory: torch.Tensor  # [T_f, 6]


@dataclass
class PlanResult:
    """Final plan candidates; heading channels renormalized, best one selected."""

    trajectories: np.ndarray  # [N_R, N_L, T_f, 6]
    scores: np.ndarray  # [N_R, N_L] pre-softmax logits
    free_trajectory: np.ndarray  # [T_f, 6]
    selected_index: tuple[int, int]
    selected: np.ndarray  # [T_f, 6]
    ref_line_ids: tuple = ()


class SpatialQueryBuilder(nn.Module):
    """Builds Q0 from reference-line encodings and learned longitudinal slots."""

    def __init__(self, cfg: DecoderConfig, polyline_encoder: PolylineEncoder):
        super().__init__()
        d = cfg.hidden_dim
        self.polyline_encoder = polyline_encoder  # shared with the scene encoder
        self.longitudinal = nn.Parameter(torch.randn(cfg.num_modes, d) * 0.02)
        self.mix = nn.Sequential(nn.Linear(2 * d, d), nn.ReLU(), nn.Linear(d, d))

    def forward(self, ref_features: torch.Tensor, ref_line_ids: tuple) -> SpatialQueries:
        lateral = self.polyline_encoder(ref_features)  # [N_R, D]
        n_r = lateral.shape[0]
        n_l = self.longitudinal.shape[0]
        lat = lateral.unsqueeze(1).expand(n_r, n_l, -1)
        lon = self.longitudinal.unsqueeze(0).expand(n_r, n_l, -1).to(lateral.dtype)
        q0 = self.mix(torch.cat([lat, lon], dim=-1))
        return SpatialQueries(lateral=lateral, longitudinal=self.longitudinal,
                              q0=q0, ref_line_ids=ref_line_ids)


class CrossAttentionBlock(nn.Module):
    """Pre-norm cross-attention with a feed-forward tail."""

    def __init__(self, dim: int, num_heads: int, dropout: float):
        super().__init__()
        self.norm_q = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, num_heads, dropout=dropout, batch_first=True)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Dropout(dropout), nn.Linear(4 * dim, dim)
        )
        self.dropout = nn.Dropout(dropout)

    def forward(self, q, kv, key_padding_mask):
        h, _ = self.attn(self.norm_q(q), kv, kv, key_padding_mask=key_padding_mask)
        q = q + self.dropout(h)
        q = q + self.dropout(self.ffn(self.norm_ffn(q)))
        return q


class SelfAttentionBlock(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, dim: int, num_heads: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, num_heads, dropout=dropout, batch_first=True)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        h = self.norm(x)
        attended, _ = self.attn(h, h, h)
        return x + self.dropout(attended)


class FactorizedDecoderLayer(nn.Module):
    """One decoder layer: self-attention over reference lines (axis 0), then over
    longitudinal modes (axis 1), then cross-attention into the scene tokens."""

    def __init__(self, dim: int, num_heads: int, dropout: float):
        super().__init__()
        self.lateral_self_attn = SelfAttentionBlock(dim, num_heads, dropout)
        self.longitudinal_self_attn = SelfAttentionBlock(dim, num_heads, dropout)
        self.scene_cross_attn = CrossAttentionBlock(dim, num_heads, dropout)

    def forward(self, q: torch.Tensor, enc: SceneEncoding) -> torch.Tensor:
        n_r, n_l, d = q.shape
        q = self.lateral_self_attn(q.transpose(0, 1)).transpose(0, 1)  # attend across N_R
        q = self.longitudinal_self_attn(q)  # attend across N_L
        flat = q.reshape(1, n_r * n_l, d)
        kv = enc.tokens.unsqueeze(0)
        key_padding = (~enc.token_valid).unsqueeze(0)
        flat = self.scene_cross_attn(flat, kv, key_padding)
        return flat.reshape(n_r, n_l, d)


class FactorizedDecoder(nn.Module):
    """Stack of factorized-attention layers with a final output norm."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.layers = nn.ModuleList(
            [FactorizedDecoderLayer(cfg.hidden_dim, cfg.num_heads, cfg.dropout)
             for _ in range(cfg.num_layers)]
        )
        self.out_norm = nn.LayerNorm(cfg.hidden_dim)

    def forward(self, q0: torch.Tensor, enc: SceneEncoding) -> torch.Tensor:
        if q0.shape[0] == 0:  # reference-free mode: nothing to decode
            return self.out_norm(q0)
        q = q0
        for layer in self.layers:
            q = layer(q, enc)
        return self.out_norm(q)


class PlanHeads(nn.Module):
    """Trajectory, score, and reference-free heads over decoder outputs."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        d = cfg.hidden_dim
        out = cfg.horizon_frames * 6
        self.horizon_frames = cfg.horizon_frames
        self.trajectory_mlp = nn.Sequential(nn.Linear(d, d), nn.ReLU(), nn.Linear(d, out))
        self.score_mlp = nn.Sequential(nn.Linear(d, d), nn.ReLU(), nn.Linear(d, 1))
        self.free_mlp = nn.Sequential(nn.Linear(d, d), nn.ReLU(), nn.Linear(d, out))

    def forward(self, q_dec: torch.Tensor, ego_token: torch.Tensor) -> PlanTensors:
        n_r, n_l, _ = q_dec.shape
        traj = self.trajectory_mlp(q_dec).reshape(n_r, n_l, self.horizon_frames, 6)
        scores = self.score_mlp(q_dec).squeeze(-1)
        free = self.free_mlp(ego_token).reshape(self.horizon_frames, 6)
        return PlanTensors(trajectories=traj, scores=scores, free_trajectory=free)


def normalize_heading_channels(traj: np.ndarray) -> np.ndarray:
    """Rescale (cos, sin) channels onto the unit circle."""
    out = traj.copy()
    norm = np.sqrt(out[..., 2] ** 2 + out[..., 3] ** 2)
    norm = np.maximum(norm, 1e-15)
    out[..., 2] /= norm
    out[..., 3] /= norm
    return out


def emit_plan(tensors: PlanTensors, ref_line_ids: tuple = ()) -> PlanResult:
    """Turn raw head outputs into a PlanResult (pure argmax selection)."""
    traj = normalize_heading_channels(tensors.trajectories.detach().cpu().double().numpy())
    scores = tensors.scores.detach().cpu().double().numpy()
    free = normalize_heading_channels(tensors.free_trajectory.detach().cpu().double().numpy())
    if scores.size == 0:  # reference-free only mode
        selected_index = (-1, -1)
        selected = free
    else:
        flat = int(np.argmax(scores))
        selected_index = tuple(np.unravel_index(flat, scores.shape))
        selected = traj[selected_index[0], selected_index[1]]
    return PlanResult(
        trajectories=traj,
        scores=scores,
        free_trajectory=free,
        selected_index=selected_index,
        selected=selected,
        ref_line_ids=tuple(ref_line_ids),
    )
