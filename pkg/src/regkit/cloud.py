"""Core data carriers: point clouds, rigid transforms, and planes.

All coordinates are millimeters. Normals may contain NaN rows marking
points whose local neighborhood was degenerate; consumers treat those
rows as "no normal".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCloud

_UNIT_TOL = 1e-6
_ORTHO_TOL = 1e-9


def as_points(points) -> np.ndarray:
    """Coerce array-like input to a contiguous (N, 3) float64 array."""
    arr = np.ascontiguousarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {arr.shape}")
    return arr


@dataclass
class PointCloud:
    """Positions with optional per-point unit normals and curvatures."""

    points: np.ndarray
    normals: np.ndarray | None = None
    curvatures: np.ndarray | None = None
    id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = as_points(self.points)
        if self.points.shape[0] == 0:
            raise EmptyCloud("point cloud has no points")
        if self.normals is not None:
            self.normals = as_points(self.normals)
            if self.normals.shape[0] != len(self):
                raise ValueError("normals length does not match points")
            norms = np.linalg.norm(self.normals, axis=1)
            valid = np.isfinite(norms)
            if np.any(np.abs(norms[valid] - 1.0) > _UNIT_TOL):
                raise ValueError("normals must be unit length (NaN rows allowed)")
        if self.curvatures is not None:
            self.curvatures = np.ascontiguousarray(
                self.curvatures, dtype=np.float64
            ).reshape(-1)
            if self.curvatures.shape[0] != len(self):
                raise ValueError("curvatures length does not match points")
            if np.any(self.curvatures < 0):
                raise ValueError("curvatures must be non-negative")

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def select(self, indices) -> "PointCloud":
        """New cloud restricted to the given indices or boolean mask."""
        idx = np.asarray(indices)
        return PointCloud(
            points=self.points[idx],
            normals=None if self.normals is None else self.normals[idx],
            curvatures=None if self.curvatures is None else self.curvatures[idx],
            id=self.id,
            meta=dict(self.meta),
        )

    def valid_normal_mask(self) -> np.ndarray:
        """Boolean mask of points carrying a finite (non-null) normal."""
        if self.normals is None:
            return np.zeros(len(self), dtype=bool)
        return np.all(np.isfinite(self.normals), axis=1)


@dataclass
class RigidTransform:
    """Similarity map p -> scale * R @ p + t with R in SO(3)."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        self.rotation = np.ascontiguousarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.ascontiguousarray(
            self.translation, dtype=np.float64
        ).reshape(3)
        self.scale = float(self.scale)
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > _ORTHO_TOL:
            raise ValueError(f"rotation not orthogonal (max deviation {err:.3e})")
        if abs(np.linalg.det(self.rotation) - 1.0) > 1e-8:
            raise ValueError("rotation must have determinant +1")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_any_matrix(cls, rotation, translation, scale: float = 1.0) -> "RigidTransform":
        """Build a transform, projecting ``rotation`` onto SO(3) first."""
        R = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        u, _, vt = np.linalg.svd(R)
        proj = u @ vt
        if np.linalg.det(proj) < 0:
            u[:, -1] *= -1.0
            proj = u @ vt
        return cls(proj, translation, scale)

    def apply_points(self, points) -> np.ndarray:
        pts = as_points(points)
        return self.scale * (pts @ self.rotation.T) + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying ``other`` first, then ``self``."""
        return RigidTransform(
            rotation=self.rotation @ other.rotation,
            translation=self.scale * (self.rotation @ other.translation)
            + self.translation,
            scale=self.scale * other.scale,
        )

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        inv_scale = 1.0 / self.scale
        return RigidTransform(
            rotation=self.rotation.T,
            translation=-inv_scale * (self.rotation.T @ self.translation),
            scale=inv_scale,
        )

    def to_dict(self) -> dict:
        return {
            "rotation_row_major_9": [float(v) for v in self.rotation.reshape(-1)],
            "translation_mm_3": [float(v) for v in self.translation],
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RigidTransform":
        return cls(
            rotation=np.asarray(data["rotation_row_major_9"], dtype=np.float64).reshape(3, 3),
            translation=np.asarray(data["translation_mm_3"], dtype=np.float64),
            scale=float(data.get("scale", 1.0)),
        )


@dataclass(frozen=True)
class Plane:
    """Plane a*x + b*y + c*z + d = 0 with (a, b, c) a unit normal."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        n2 = self.a * self.a + self.b * self.b + self.c * self.c
        if abs(n2 - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c], dtype=np.float64)

    def signed_distance(self, points) -> np.ndarray:
        pts = as_points(points)
        return pts @ self.normal + self.d
