"""Procedurally generated anatomical-complexity surrogate surfaces.

Three shapes with deliberately broken symmetries (non-commensurate
ridge frequencies plus off-axis bumps) so rigid registration has a
unique answer. All generators are deterministic for a given seed.
"""

from __future__ import annotations

import numpy as np

from .cloud import PointCloud


def rescale_to_diagonal(cloud: PointCloud, diagonal_mm: float = 200.0) -> PointCloud:
    """Center a cloud and scale its bounding-box diagonal to diagonal_mm."""
    points = cloud.points
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if diag <= 0:
        raise ValueError("cloud has zero extent")
    center = 0.5 * (lo + hi)
    scaled = (points - center) * (diagonal_mm / diag)
    return PointCloud(scaled, id=cloud.id, meta=dict(cloud.meta))


def _bump(directions: np.ndarray, center: np.ndarray, width: float, height: float):
    dots = directions @ (center / np.linalg.norm(center))
    return height * np.exp(-((1.0 - dots) / width) ** 2)


def ridged_ellipsoid(n_points: int = 20000, seed: int = 0) -> PointCloud:
    """Unequal-axis ellipsoid with longitudinal ridges and two bumps."""
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_points, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
    phi = np.arctan2(dirs[:, 1], dirs[:, 0])

    radial = (
        1.0
        + 0.07 * np.cos(5.0 * phi) * np.sin(theta) ** 2
        + 0.05 * np.cos(3.0 * theta + 0.7)
        + _bump(dirs, np.array([0.8, 0.45, 0.4]), 0.18, 0.16)
        + _bump(dirs, np.array([-0.3, 0.7, -0.65]), 0.12, 0.12)
    )
    axes = np.array([1.0, 0.78, 0.62])
    points = dirs * radial[:, None] * axes
    return rescale_to_diagonal(PointCloud(points, id="ridged_ellipsoid"))


def helical_tube(n_points: int = 20000, seed: int = 0) -> PointCloud:
    """Tube swept along a helix with a rippled radius (chiral, asymmetric)."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 4.0 * np.pi, n_points)
    u = rng.uniform(0.0, 2.0 * np.pi, n_points)

    center = np.column_stack([np.cos(t), np.sin(t), 0.22 * t])
    tangent = np.column_stack([-np.sin(t), np.cos(t), np.full_like(t, 0.22)])
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    ref = np.column_stack([np.cos(t), np.sin(t), np.zeros_like(t)])
    n1 = ref - tangent * np.einsum("ij,ij->i", ref, tangent)[:, None]
    n1 /= np.linalg.norm(n1, axis=1, keepdims=True)
    n2 = np.cross(tangent, n1)

    radius = 0.28 * (1.0 + 0.18 * np.sin(3.0 * t + 0.4) * np.cos(2.0 * u))
    points = center + radius[:, None] * (np.cos(u)[:, None] * n1 + np.sin(u)[:, None] * n2)
    return rescale_to_diagonal(PointCloud(points, id="helical_tube"))


def bumpy_torus(n_points: int = 20000, seed: int = 0) -> PointCloud:
    """Torus with non-commensurate bump pattern (no rotational symmetry)."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, 2.0 * np.pi, n_points)
    v = rng.uniform(0.0, 2.0 * np.pi, n_points)
    r_major, r_minor = 1.0, 0.42
    bump = 1.0 + 0.14 * np.sin(5.0 * u) * np.sin(7.0 * v) + 0.1 * np.sin(2.0 * u + 1.1) * np.cos(
        3.0 * v + 0.4
    )
    r = r_minor * bump
    x = (r_major + r * np.cos(v)) * np.cos(u)
    y = (r_major + r * np.cos(v)) * np.sin(u)
    z = r * np.sin(v) + 0.12 * np.sin(u + 0.9)
    return rescale_to_diagonal(PointCloud(np.column_stack([x, y, z]), id="bumpy_torus"))


BUILTIN_MESHES = {
    "ridged_ellipsoid": ridged_ellipsoid,
    "helical_tube": helical_tube,
    "bumpy_torus": bumpy_torus,
}
