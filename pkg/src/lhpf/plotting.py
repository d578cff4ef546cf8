"""Static figure emission: sweep line plots and bird's-eye scenario snapshots."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .collision import rectangle_corners  # noqa: E402
from .scenario import PolylineKind, ScenarioWorld  # noqa: E402

logger = logging.getLogger(__name__)


def plot_sweep_csv(csv_path, out_dir) -> list[Path]:
    """Score-vs-axis line plots from a sweep CSV; one figure per metric."""
    csv_path = Path(csv_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with csv_path.open() as f:
        rows = list(csv.DictReader(f))
    if not rows:
        logger.warning("empty sweep csv %s: nothing to plot", csv_path)
        return []
    axis = rows[0]["axis"]
    xs = [r["value"] for r in rows]
    outputs = []
    for metric in ("composite_score", "comfort", "progress", "consistency"):
        ys = [float(r[metric]) for r in rows]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(range(len(xs)), ys, marker="o")
        ax.set_xticks(range(len(xs)), xs)
        ax.set_xlabel(axis)
        ax.set_ylabel(metric)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        out = out_dir / f"sweep_{axis}_{metric}.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        outputs.append(out)
    return outputs


def plot_report_csv(csv_path, out_dir) -> list[Path]:
    """Per-scenario composite score bar chart from a simulation report CSV."""
    csv_path = Path(csv_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with csv_path.open() as f:
        rows = [r for r in csv.DictReader(f) if r["scenario_kind"] != "summary"]
    if not rows:
        logger.warning("empty report csv %s: nothing to plot", csv_path)
        return []
    scores = [float(r["composite_score"]) for r in rows]
    labels = [f"{r['scenario_kind']}:{r['scenario_seed']}" for r in rows]
    fig, ax = plt.subplots(figsize=(max(5, 0.5 * len(rows)), 3.5))
    ax.bar(range(len(scores)), scores)
    ax.set_xticks(range(len(labels)), labels, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("composite score")
    ax.set_ylim(0, 105)
    fig.tight_layout()
    out = out_dir / "report_scores.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return [out]


def _draw_rect(ax, center, heading, bbox, **kwargs):
    corners = rectangle_corners(center, heading, *bbox)
    ax.fill(corners[:, 0], corners[:, 1], **kwargs)


def plot_scenario_snapshot(scenario: ScenarioWorld, t: int, out_path,
                           plan_world: np.ndarray | None = None) -> Path:
    """Bird's-eye view of a scenario at frame t, optionally with a plan overlay."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 7))
    for line in scenario.map_polylines:
        if line.kind is PolylineKind.LANE:
            ax.plot(line.left_boundary[:, 0], line.left_boundary[:, 1], "k-", lw=0.6)
            ax.plot(line.right_boundary[:, 0], line.right_boundary[:, 1], "k-", lw=0.6)
            ax.plot(line.points[:, 0], line.points[:, 1], "--", color="0.7", lw=0.5)
        else:
            ax.plot(line.points[:, 0], line.points[:, 1], ":", color="tab:purple", lw=0.8)
    for line in scenario.reference_lines:
        ax.plot(line.points[:, 0], line.points[:, 1], "-", color="tab:cyan", lw=0.8, alpha=0.6)
    for o in scenario.obstacles:
        _draw_rect(ax, o.position, o.heading, o.bbox, color="tab:red", alpha=0.7)
    for track in scenario.agent_tracks:
        if track.observed[t]:
            s = track.state_at(t)
            _draw_rect(ax, s.position, s.heading, s.bbox, color="tab:green", alpha=0.7)
    ego = scenario.ego_track.state_at(t)
    _draw_rect(ax, ego.position, ego.heading, ego.bbox, color="tab:orange", alpha=0.9)
    if plan_world is not None:
        ax.plot(plan_world[:, 0], plan_world[:, 1], "-", color="tab:blue", lw=1.5)
    ax.set_aspect("equal")
    ax.set_title(f"{scenario.kind} seed={scenario.seed} frame={t}")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
