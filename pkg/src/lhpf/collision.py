"""Oriented-rectangle collision tests via the separating-axis theorem."""

from __future__ import annotations

import numpy as np


def rectangle_corners(center, heading: float, length: float, width: float) -> np.ndarray:
    """Corner points [4, 2] of an oriented rectangle, counter-clockwise."""
    c, s = np.cos(heading), np.sin(heading)
    rot = np.array([[c, -s], [s, c]])
    half = np.array(
        [[length / 2, width / 2], [-length / 2, width / 2],
         [-length / 2, -width / 2], [length / 2, -width / 2]]
    )
    return np.asarray(center, float)[None, :] + half @ rot.T


def _axes(heading: float) -> np.ndarray:
    c, s = np.cos(heading), np.sin(heading)
    return np.array([[c, s], [-s, c]])


def overlap_margin(center_a, heading_a, bbox_a, center_b, heading_b, bbox_b) -> float:
    """Signed overlap measure for two oriented rectangles.

    Positive values are the minimum projection overlap over the four edge-normal
    axes (the penetration depth). Negative values are -1 times the largest
    projection gap, a lower bound on the true separation distance.
    """
    corners_a = rectangle_corners(center_a, heading_a, *bbox_a)
    corners_b = rectangle_corners(center_b, heading_b, *bbox_b)
    axes = np.concatenate([_axes(heading_a), _axes(heading_b)], axis=0)
    proj_a = corners_a @ axes.T  # [4 corners, 4 axes]
    proj_b = corners_b @ axes.T
    overlap = np.minimum(proj_a.max(axis=0), proj_b.max(axis=0)) - np.maximum(
        proj_a.min(axis=0), proj_b.min(axis=0)
    )
    if np.all(overlap > 0):
        return float(overlap.min())
    return float(overlap[overlap <= 0].max())


def rectangles_overlap(center_a, heading_a, bbox_a, center_b, heading_b, bbox_b) -> bool:
    """Separating-axis overlap test (touching counts as overlap)."""
    return overlap_margin(center_a, heading_a, bbox_a, center_b, heading_b, bbox_b) >= 0.0
