"""Full planner model: backbone (encoder + spatial decoder) plus the history
fusion and spatio-temporal decoder trained in the second phase."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn as nn

from .decoder import (
    DecoderConfig,
    FactorizedDecoder,
    PlanHeads,
    PlanningEmbedding,
    PlanResult,
    PlanTensors,
    SpatialQueries,
    SpatialQueryBuilder,
    emit_plan,
)
from .encoder import EncoderConfig, SceneEncoder, SceneEncoding, bundle_to_tensors
from .features import FeatureBundle, FeatureParams
from .history import FusionConfig, HistoryFusion, HistoryPool
from .scenario import HISTORY_FRAMES

CHECKPOINT_FORMAT = "lhpf-checkpoint v1"


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    features: FeatureParams = field(default_factory=FeatureParams)
    history_frames: int = HISTORY_FRAMES
    pool_interval: int = 10

    def __post_init__(self):
        if self.decoder.hidden_dim != self.encoder.hidden_dim:
            raise ValueError("encoder and decoder hidden_dim must match")
        if self.fusion.projection_dim != self.encoder.hidden_dim:
            raise ValueError("fusion projection_dim must match hidden_dim")

    @classmethod
    def small(cls, hidden_dim=64, layers=2, heads=4, num_modes=4, horizon_frames=80,
              fusion_mode="sum", pool_interval=10, dropout=0.1):
        """Compact configuration for desk-scale experiments."""
        return cls(
            encoder=EncoderConfig(hidden_dim=hidden_dim, num_encoder_layers=layers,
                                  num_heads=heads, dropout=dropout, fourier_bands=32),
            decoder=DecoderConfig(hidden_dim=hidden_dim, num_layers=layers, num_heads=heads,
                                  dropout=dropout, num_modes=num_modes,
                                  horizon_frames=horizon_frames),
            fusion=FusionConfig(mode=fusion_mode, projection_dim=hidden_dim),
            features=FeatureParams(),
            pool_interval=pool_interval,
        )


class PlannerBackbone(nn.Module):
    """Phase-one model: scene encoder, spatial queries, factorized decoder, heads."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.scene_encoder = SceneEncoder(cfg.encoder)
        self.query_builder = SpatialQueryBuilder(cfg.decoder, self.scene_encoder.polyline_encoder)
        self.decoder = FactorizedDecoder(cfg.decoder)
        self.heads = PlanHeads(cfg.decoder)

    @property
    def dtype(self) -> torch.dtype:
        return self.heads.score_mlp[0].weight.dtype

    def encode(self, bundle: FeatureBundle) -> tuple[SceneEncoding, dict]:
        tensors = bundle_to_tensors(bundle, self.dtype)
        return self.scene_encoder(tensors), tensors

    def forward(self, bundle: FeatureBundle):
        enc, tensors = self.encode(bundle)
        queries = self.query_builder(tensors["ref_features"], bundle.ref_line_ids)
        q_dec = self.decoder(queries.q0, enc)
        plan = self.heads(q_dec, enc.tokens[0])
        return enc, queries, q_dec, plan


class LHPFModel(nn.Module):
    """Backbone plus history fusion and the spatio-temporal decoder (STD)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = PlannerBackbone(cfg)
        self.fusion = HistoryFusion(cfg.fusion, num_heads=cfg.decoder.num_heads)
        self.st_decoder = FactorizedDecoder(cfg.decoder)
        self.st_heads = PlanHeads(cfg.decoder)

    # --- parameter groups ---------------------------------------------------
    def backbone_parameters(self):
        return self.backbone.parameters()

    def finetune_parameters(self):
        for module in (self.fusion, self.st_decoder, self.st_heads):
            yield from module.parameters()

    def freeze_backbone(self):
        for p in self.backbone.parameters():
            p.requires_grad_(False)

    # --- forward paths --------------------------------------------------------
    def plan_backbone(self, bundle: FeatureBundle):
        """Single-frame path; returns (encoding, queries, planning embedding, plan)."""
        enc, queries, q_dec, plan = self.backbone(bundle)
        pe = PlanningEmbedding(values=q_dec, t_frame=-1, ref_line_ids=bundle.ref_line_ids)
        return enc, queries, pe, plan

    def decode_st(self, fused_q0: torch.Tensor, enc: SceneEncoding) -> tuple[torch.Tensor, PlanTensors]:
        q_dec = self.st_decoder(fused_q0, enc)
        plan = self.st_heads(q_dec, enc.tokens[0])
        return q_dec, plan

    def plan_with_history(self, bundle: FeatureBundle, entries) -> tuple[SceneEncoding, PlanTensors]:
        """Fused path used in phase-two training (entries supplied by caller)."""
        enc, queries, q_dec, _ = self.backbone(bundle)
        fused = self.fusion(queries.q0, entries, bundle.ref_line_ids)
        _, plan = self.decode_st(fused, enc)
        return enc, plan


def infer(model: LHPFModel, bundle: FeatureBundle, pool: HistoryPool, t_frame: int
          ) -> tuple[PlanResult, HistoryPool]:
    """One closed-loop planning step: encode, decode, pool, fuse, decode again.

    The freshly produced planning embedding is pushed first (stored only on the
    pool's interval grid), then fusion reads the updated pool.
    """
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            enc, queries, q_dec, _ = model.backbone(bundle)
            pe = PlanningEmbedding(values=q_dec, t_frame=t_frame, ref_line_ids=bundle.ref_line_ids)
            pool.push(pe, t_frame)
            fused = model.fusion(queries.q0, pool.entries_for(t_frame), bundle.ref_line_ids)
            _, plan = model.decode_st(fused, enc)
    finally:
        if was_training:
            model.train()
    return emit_plan(plan, bundle.ref_line_ids), pool


def save_checkpoint(model: LHPFModel, path, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(model.cfg),
            "state_dict": model.state_dict(),
            "meta": dict(meta or {}),
        },
        path,
    )


def config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(**d["encoder"]),
        decoder=DecoderConfig(**d["decoder"]),
        fusion=FusionConfig(**d["fusion"]),
        features=FeatureParams(**d["features"]),
        history_frames=d.get("history_frames", HISTORY_FRAMES),
        pool_interval=d.get("pool_interval", 10),
    )


def load_checkpoint(path) -> tuple[LHPFModel, dict]:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    except (RuntimeError, EOFError, KeyError) as e:
        raise ValueError(f"unreadable checkpoint file {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} file: {path}")
    model = LHPFModel(config_from_dict(payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload.get("meta", {})
