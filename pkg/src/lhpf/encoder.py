"""Scene encoding: agent history pyramid, ego state-dropout encoder, polyline and
obstacle encoders, Fourier position embeddings, and a pre-norm Transformer stack."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .features import FeatureBundle
from .scenario import DT


@dataclass
class EncoderConfig:
    hidden_dim: int = 128
    num_encoder_layers: int = 4
    num_heads: int = 8
    dropout: float = 0.1
    sde_dropout: float = 0.5
    fourier_bands: int = 64

    def __post_init__(self):
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 <= self.sde_dropout <= 1.0:
            raise ValueError("sde_dropout must be in [0, 1]")


@dataclass
class SceneEncoding:
    """Encoded token sequence plus per-token metadata."""

    tokens: torch.Tensor  # [N_tok, D]
    token_valid: torch.Tensor  # [N_tok] bool
    token_attrs: torch.Tensor  # [N_tok] long


def bundle_to_tensors(bundle: FeatureBundle, dtype: torch.dtype) -> dict[str, torch.Tensor]:
    """Convert a FeatureBundle's arrays to torch tensors of the model dtype."""
    return {
        "agent_features": torch.as_tensor(bundle.agent_features, dtype=dtype),
        "agent_valid": torch.as_tensor(bundle.agent_valid, dtype=torch.bool),
        "polyline_features": torch.as_tensor(bundle.polyline_features, dtype=dtype),
        "obstacle_features": torch.as_tensor(bundle.obstacle_features, dtype=dtype),
        "token_positions": torch.as_tensor(bundle.token_positions, dtype=dtype),
        "token_attrs": torch.as_tensor(bundle.token_attrs, dtype=torch.long),
        "ego_history": torch.as_tensor(bundle.ego_history, dtype=dtype),
        "ref_features": torch.as_tensor(bundle.ref_features, dtype=dtype),
    }


class FourierPositionEncoder(nn.Module):
    """Fourier embedding of 2-D positions with learned frequencies."""

    def __init__(self, dim: int, num_bands: int = 64):
        super().__init__()
        self.freqs = nn.Parameter(torch.randn(2, num_bands))
        self.proj = nn.Linear(4 * num_bands + 2, dim)

    def forward(self, positions: torch.Tensor) -> torch.Tensor:
        ang = 2.0 * math.pi * positions.unsqueeze(-1) * self.freqs  # [N, 2, B]
        feats = torch.cat([torch.cos(ang), torch.sin(ang)], dim=-1).flatten(-2)
        return self.proj(torch.cat([feats, positions], dim=-1))


class PolylineEncoder(nn.Module):
    """PointNet-like encoder: shared per-point feed-forward then max-pool."""

    def __init__(self, in_channels: int, dim: int):
        super().__init__()
        self.point_net = nn.Sequential(
            nn.Linear(in_channels, dim), nn.ReLU(), nn.Linear(dim, dim)
        )
        self.out = nn.Sequential(nn.LayerNorm(dim), nn.Linear(dim, dim))

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        # feats: [N, P, C] -> [N, D]
        if feats.shape[0] == 0:
            return feats.new_zeros((0, self.out[1].out_features))
        x = self.point_net(feats)
        x = x.max(dim=1).values
        return self.out(x)


class ObstacleEncoder(nn.Module):
    """Two-layer feed-forward over 5-channel obstacle features."""

    def __init__(self, dim: int):
        super().__init__()
        self.mlp = nn.Sequential(nn.Linear(5, dim), nn.ReLU(), nn.Linear(dim, dim))
        self.dim = dim

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        if feats.shape[0] == 0:
            return feats.new_zeros((0, self.dim))
        return self.mlp(feats)


class AgentHistoryEncoder(nn.Module):
    """Feature pyramid over differenced agent histories with neighbor attention.

    Strided temporal convolutions halve the time axis per stage; each stage is
    max-pooled over time and summed into a single embedding, then one attention
    round across agents mixes neighbor context at the coarsest level. Fully
    invalid agents map exactly to the learned null embedding.
    """

    def __init__(self, in_channels: int, dim: int, num_heads: int):
        super().__init__()
        widths = (dim // 4, dim // 2, dim)
        convs, projs = [], []
        c_prev = in_channels
        for c in widths:
            convs.append(nn.Sequential(nn.Conv1d(c_prev, c, 3, stride=2, padding=1), nn.ReLU()))
            projs.append(nn.Linear(c, dim))
            c_prev = c
        self.convs = nn.ModuleList(convs)
        self.level_projs = nn.ModuleList(projs)
        self.neighbor_attn = nn.MultiheadAttention(dim, num_heads, batch_first=True)
        self.norm = nn.LayerNorm(dim)
        self.null_embedding = nn.Parameter(torch.zeros(dim))

    def forward(self, feats: torch.Tensor, valid: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        # feats: [N, T-1, 8]; valid: [N, T] -> ([N, D], [N] token validity)
        n = feats.shape[0]
        token_valid = valid.any(dim=1)
        if n == 0:
            return feats.new_zeros((0, self.null_embedding.shape[0])), token_valid

        x = feats.transpose(1, 2)  # [N, C, T-1]
        emb = 0.0
        for conv, proj in zip(self.convs, self.level_projs):
            x = conv(x)
            emb = emb + proj(x.max(dim=2).values)
        emb = self.norm(emb)

        if token_valid.any():
            attended, _ = self.neighbor_attn(
                emb.unsqueeze(0), emb.unsqueeze(0), emb.unsqueeze(0),
                key_padding_mask=~token_valid.unsqueeze(0),
            )
            emb = emb + attended.squeeze(0)
        emb = torch.where(token_valid.unsqueeze(1), emb, self.null_embedding.to(emb.dtype))
        return emb, token_valid


class EgoStateEncoder(nn.Module):
    """Attention-based state dropout encoder over ego state attribute groups.

    Groups: current pose (position + heading, identically zero in the ego
    frame), bbox-free velocity, acceleration, and yaw rate, each embedded as a
    token. During training the kinematic groups (velocity, acceleration, yaw
    rate) are independently dropped with probability `sde_dropout` via the
    attention key padding mask; a learned query pools the surviving tokens.
    """

    GROUP_DIMS = (3, 2, 2, 1)  # pose, velocity, acceleration, yaw rate
    NUM_STATIC = 1  # only the pose group is never dropped

    def __init__(self, dim: int, num_heads: int, sde_dropout: float = 0.5, dt: float = DT):
        super().__init__()
        self.sde_dropout = sde_dropout
        self.dt = dt
        self.group_linears = nn.ModuleList([nn.Linear(d, dim) for d in self.GROUP_DIMS])
        self.group_embed = nn.Parameter(torch.zeros(len(self.GROUP_DIMS), dim))
        self.query = nn.Parameter(torch.zeros(1, dim))
        self.attn = nn.MultiheadAttention(dim, num_heads, batch_first=True)
        nn.init.normal_(self.group_embed, std=0.02)
        nn.init.normal_(self.query, std=0.02)

    def _group_values(self, ego_history: torch.Tensor) -> list[torch.Tensor]:
        pose = ego_history[-1, 0:3]
        vel = ego_history[-1, 3:5]
        accel = (ego_history[-1, 3:5] - ego_history[-2, 3:5]) / self.dt
        dh = ego_history[-1, 2] - ego_history[-2, 2]
        dh = torch.atan2(torch.sin(dh), torch.cos(dh))
        yaw_rate = (dh / self.dt).reshape(1)
        return [pose, vel, accel, yaw_rate]

    def forward(self, ego_history: torch.Tensor, train_mode: bool | None = None) -> torch.Tensor:
        # ego_history: [T_H, 5] -> [1, D]
        train_mode = self.training if train_mode is None else train_mode
        groups = self._group_values(ego_history)
        tokens = torch.stack(
            [lin(g) for lin, g in zip(self.group_linears, groups)]
        ) + self.group_embed
        tokens = tokens.unsqueeze(0)  # [1, G, D]

        key_padding = None
        if train_mode and self.sde_dropout > 0:
            num_dyn = len(self.GROUP_DIMS) - self.NUM_STATIC
            dropped = torch.rand(num_dyn, device=tokens.device) < self.sde_dropout
            key_padding = torch.cat(
                [torch.zeros(self.NUM_STATIC, dtype=torch.bool, device=tokens.device), dropped]
            ).unsqueeze(0)

        pooled, _ = self.attn(
            self.query.unsqueeze(0).to(tokens.dtype), tokens, tokens, key_padding_mask=key_padding
        )
        return pooled.squeeze(0)


class EncoderLayer(nn.Module):
    """Pre-norm Transformer encoder layer with key-padding-masked attention."""

    def __init__(self, dim: int, num_heads: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, num_heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Dropout(dropout), nn.Linear(4 * dim, dim)
        )
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, key_padding_mask: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        attended, _ = self.attn(h, h, h, key_padding_mask=key_padding_mask)
        x = x + self.dropout(attended)
        x = x + self.dropout(self.ffn(self.norm2(x)))
        return x


class SceneEncoder(nn.Module):
    """Full scene encoder producing the token sequence consumed by the decoders."""

    NUM_ROLES = 4

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden_dim
        self.agent_encoder = AgentHistoryEncoder(8, d, cfg.num_heads)
        self.ego_encoder = EgoStateEncoder(d, cfg.num_heads, cfg.sde_dropout)
        self.polyline_encoder = PolylineEncoder(8, d)
        self.obstacle_encoder = ObstacleEncoder(d)
        self.position_encoder = FourierPositionEncoder(d, cfg.fourier_bands)
        self.attr_embed = nn.Embedding(self.NUM_ROLES, d)
        self.layers = nn.ModuleList(
            [EncoderLayer(d, cfg.num_heads, cfg.dropout) for _ in range(cfg.num_encoder_layers)]
        )
        self.out_norm = nn.LayerNorm(d)

    def forward(self, tensors: dict[str, torch.Tensor]) -> SceneEncoding:
        ego_emb = self.ego_encoder(tensors["ego_history"])
        agent_emb, agent_tok_valid = self.agent_encoder(
            tensors["agent_features"][1:], tensors["agent_valid"][1:]
        )
        obstacle_emb = self.obstacle_encoder(tensors["obstacle_features"])
        map_emb = self.polyline_encoder(tensors["polyline_features"])

        tokens = torch.cat([ego_emb, agent_emb, obstacle_emb, map_emb], dim=0)
        tokens = tokens + self.position_encoder(tensors["token_positions"])
        tokens = tokens + self.attr_embed(tensors["token_attrs"])

        token_valid = torch.cat(
            [
                torch.ones(1, dtype=torch.bool, device=tokens.device),
                agent_tok_valid,
                torch.ones(obstacle_emb.shape[0], dtype=torch.bool, device=tokens.device),
                torch.ones(map_emb.shape[0], dtype=torch.bool, device=tokens.device),
            ]
        )

        x = tokens.unsqueeze(0)
        key_padding = (~token_valid).unsqueeze(0)
        for layer in self.layers:
            x = layer(x, key_padding)
        x = self.out_norm(x).squeeze(0)
        return SceneEncoding(tokens=x, token_valid=token_valid, token_attrs=tensors["token_attrs"])
