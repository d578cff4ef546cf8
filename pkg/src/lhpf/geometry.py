"""Planar geometry helpers: angle wrapping, SE(2) frames, polyline arc-length ops."""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(theta):
    """Wrap angles into (-pi, pi]."""
    m = np.mod(theta, TWO_PI)
    return np.where(m > np.pi, m - TWO_PI, m) if isinstance(m, np.ndarray) else (
        m - TWO_PI if m > np.pi else m
    )


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def to_local(points: np.ndarray, origin: np.ndarray, heading: float) -> np.ndarray:
    """Express world-frame points [..., 2] in the frame at (origin, heading)."""
    return (np.asarray(points) - np.asarray(origin)) @ rotation_matrix(heading)


def to_world(points: np.ndarray, origin: np.ndarray, heading: float) -> np.ndarray:
    """Inverse of :func:`to_local`."""
    return np.asarray(points) @ rotation_matrix(heading).T + np.asarray(origin)


def rotate(vectors: np.ndarray, theta: float) -> np.ndarray:
    return np.asarray(vectors) @ rotation_matrix(theta).T


def cumulative_arclength(points: np.ndarray) -> np.ndarray:
    """Cumulative arc length per vertex, starting at 0."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def polyline_length(points: np.ndarray) -> float:
    return float(cumulative_arclength(points)[-1])


def resample_polyline(points: np.ndarray, n: int) -> np.ndarray:
    """Resample a polyline to n points uniformly spaced in arc length."""
    points = np.asarray(points, dtype=float)
    s = cumulative_arclength(points)
    target = np.linspace(0.0, s[-1], n)
    x = np.interp(target, s, points[:, 0])
    y = np.interp(target, s, points[:, 1])
    return np.stack([x, y], axis=1)


def interp_along(points: np.ndarray, s_query) -> np.ndarray:
    """Point(s) at arc length s_query along the polyline (clamped to its extent)."""
    s = cumulative_arclength(points)
    s_query = np.clip(np.asarray(s_query, dtype=float), 0.0, s[-1])
    x = np.interp(s_query, s, points[:, 0])
    y = np.interp(s_query, s, points[:, 1])
    return np.stack([x, y], axis=-1)


def tangent_along(points: np.ndarray, s_query) -> np.ndarray:
    """Unit tangent(s) of the polyline at arc length s_query."""
    s = cumulative_arclength(points)
    seg = np.diff(points, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    unit = seg / seg_len[:, None]
    idx = np.clip(np.searchsorted(s, np.asarray(s_query, dtype=float), side="right") - 1,
                  0, len(seg) - 1)
    return unit[idx]


def project_to_polyline(point: np.ndarray, points: np.ndarray) -> tuple[float, float]:
    """Project a point onto a polyline.

    Returns (arc length of the closest point, unsigned lateral distance),
    found by brute-force search over all segments.
    """
    p = np.asarray(point, dtype=float)
    a = points[:-1]
    b = points[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom < 1e-12, 1.0, denom)
    t = np.clip(np.einsum("ij,ij->i", p[None, :] - a, ab) / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    dist = np.linalg.norm(closest - p[None, :], axis=1)
    i = int(np.argmin(dist))
    s = cumulative_arclength(points)
    seg_len = np.linalg.norm(ab[i])
    return float(s[i] + t[i] * seg_len), float(dist[i])


def offset_polyline(points: np.ndarray, offset: float) -> np.ndarray:
    """Offset a polyline laterally; positive offsets go to the left of travel."""
    points = np.asarray(points, dtype=float)
    d = np.gradient(points, axis=0)
    n = np.stack([-d[:, 1], d[:, 0]], axis=1)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return points + offset * n


def heading_to_unit(theta) -> np.ndarray:
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
