"""Historical planning-embedding pool and spatio-temporal query fusion.

The pool stores planning embeddings on an interval grid anchored at the first
push. Entries older than `capacity_frames` are dropped; with interval >=
capacity the pool degenerates to the current entry only, which reduces the
fused queries to single-frame (baseline) behavior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .decoder import PlanningEmbedding


class PoolOrderingError(ValueError):
    """Raised when embeddings are pushed with non-increasing frame indices."""


def pool_slot_count(capacity_frames: int, interval: int) -> int:
    """Number of pool slots a full pool holds (1 in the degenerate regime)."""
    if interval >= capacity_frames:
        return 1
    return capacity_frames // interval + 1


@dataclass
class FusionConfig:
    mode: str = "sum"  # "sum" or "attention"
    projection_dim: int = 128

    def __post_init__(self):
        if self.mode not in ("sum", "attention"):
            raise ValueError(f"unknown fusion mode {self.mode!r}")


@dataclass
class HistoryPool:
    capacity_frames: int = 20
    interval: int = 10
    entries: list[PlanningEmbedding] = field(default_factory=list)
    _anchor: int | None = None

    @property
    def frames(self) -> tuple[int, ...]:
        return tuple(e.t_frame for e in self.entries)

    def _prune(self, t_now: int) -> None:
        if self.interval >= self.capacity_frames:
            self.entries = self.entries[-1:]
            return
        self.entries = [e for e in self.entries if t_now - e.t_frame <= self.capacity_frames]

    def push(self, pe: PlanningEmbedding, t_frame: int) -> bool:
        """Store the embedding if t_frame sits on the interval grid.

        Returns True when stored. The grid is anchored at the first stored
        frame; pushes must use strictly increasing frames.
        """
        if self.entries and t_frame <= self.entries[-1].t_frame:
            raise PoolOrderingError(
                f"push at frame {t_frame} not after newest entry {self.entries[-1].t_frame}"
            )
        if self._anchor is None:
            self._anchor = int(t_frame)
        if (t_frame - self._anchor) % self.interval != 0:
            return False
        self.entries.append(
            PlanningEmbedding(values=pe.values.detach(), t_frame=int(t_frame),
                              ref_line_ids=tuple(pe.ref_line_ids))
        )
        self._prune(t_frame)
        return True

    def entries_for(self, t_now: int) -> list[PlanningEmbedding]:
        """Entries usable for fusion at t_now (stale ones filtered out)."""
        if self.interval >= self.capacity_frames:
            return self.entries[-1:]
        return [e for e in self.entries if t_now - e.t_frame <= self.capacity_frames]

    def state_payload(self) -> dict:
        """JSON-serializable pool state for simulation checkpointing."""
        return {
            "capacity_frames": self.capacity_frames,
            "interval": self.interval,
            "anchor": self._anchor,
            "entries": [
                {
                    "t_frame": e.t_frame,
                    "ref_line_ids": list(e.ref_line_ids),
                    "values": e.values.cpu().numpy().tolist(),
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_state_payload(cls, payload: dict) -> "HistoryPool":
        pool = cls(capacity_frames=payload["capacity_frames"], interval=payload["interval"])
        pool._anchor = payload["anchor"]
        pool.entries = [
            PlanningEmbedding(
                values=torch.as_tensor(np.array(e["values"], dtype=np.float32)),
                t_frame=int(e["t_frame"]),
                ref_line_ids=tuple(e["ref_line_ids"]),
            )
            for e in payload["entries"]
        ]
        return pool


def aligned_history_sum(
    entries: list[PlanningEmbedding], q0: torch.Tensor, ref_line_ids: tuple
) -> torch.Tensor:
    """Sum pooled embeddings aligned to the current reference lines.

    Lines absent from an entry contribute zeros for that entry; an empty pool
    yields an all-zero array.
    """
    total = torch.zeros_like(q0)
    for entry in entries:
        total = total + _align_entry(entry, q0, ref_line_ids)
    return total


def _align_entry(entry: PlanningEmbedding, q0: torch.Tensor, ref_line_ids: tuple) -> torch.Tensor:
    values = entry.values.to(dtype=q0.dtype, device=q0.device)
    if tuple(entry.ref_line_ids) == tuple(ref_line_ids) and values.shape == q0.shape:
        return values
    aligned = torch.zeros_like(q0)
    lookup = {rid: k for k, rid in enumerate(entry.ref_line_ids)}
    for r, rid in enumerate(ref_line_ids):
        if rid in lookup and lookup[rid] < values.shape[0]:
            aligned[r] = values[lookup[rid]]
    return aligned


class HistoryFusion(nn.Module):
    """Fuses current spatial queries with pooled historical planning embeddings.

    Both modes concatenate a history summary onto Q0 along the feature axis and
    project back to D. The projection starts as [I | 0] with zero bias, so at
    initialization the fused queries equal Q0 regardless of pool contents.
    """

    def __init__(self, cfg: FusionConfig, num_heads: int = 4):
        super().__init__()
        self.cfg = cfg
        d = cfg.projection_dim
        self.projection = nn.Linear(2 * d, d)
        with torch.no_grad():
            self.projection.weight.zero_()
            self.projection.weight[:, :d] = torch.eye(d)
            self.projection.bias.zero_()
        if cfg.mode == "attention":
            self.entry_attn = nn.MultiheadAttention(d, num_heads, batch_first=True)

    def history_summary(
        self, q0: torch.Tensor, entries: list[PlanningEmbedding], ref_line_ids: tuple
    ) -> torch.Tensor:
        if self.cfg.mode == "sum":
            return aligned_history_sum(entries, q0, ref_line_ids)
        if not entries or q0.shape[0] == 0:
            return torch.zeros_like(q0)
        n_r, n_l, d = q0.shape
        stack = torch.stack(
            [_align_entry(e, q0, ref_line_ids) for e in entries], dim=2
        )  # [N_R, N_L, K, D]
        queries = q0.reshape(n_r * n_l, 1, d)
        keys = stack.reshape(n_r * n_l, len(entries), d)
        attended, _ = self.entry_attn(queries, keys, keys)
        return attended.reshape(n_r, n_l, d)

    def forward(
        self, q0: torch.Tensor, entries: list[PlanningEmbedding], ref_line_ids: tuple
    ) -> torch.Tensor:
        summary = self.history_summary(q0, entries, ref_line_ids)
        return self.projection(torch.cat([q0, summary], dim=-1))
