"""Depth-sensor error profiling against planar references and
region-specific rigid correction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloud import Plane, PointCloud, RigidTransform, as_points
from .errors import AlreadyCorrected, EmptyNeighborhood, TooFewPairs
from .geometry import fit_plane_least_squares, kabsch_align


@dataclass(frozen=True)
class RegionSpec:
    """Spherical target region: center (mm) and radius (default 70 mm)."""

    center: tuple
    radius_mm: float = 70.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if len(self.center) != 3:
            raise ValueError("center must be a 3-vector")
        if self.radius_mm <= 0:
            raise ValueError("radius must be positive")

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64)

    def contains(self, points) -> np.ndarray:
        d = np.linalg.norm(as_points(points) - self.center_array, axis=1)
        return d <= self.radius_mm  # closed ball


@dataclass
class DepthErrorProfile:
    """Per-point distances to the fitted reference plane, with summary."""

    errors_mm: np.ndarray
    median_mm: float
    iqr_mm: float
    max_mm: float
    plane: Plane
    neighborhood_radius_mm: float

    def __post_init__(self):
        self.errors_mm = np.asarray(self.errors_mm, dtype=np.float64).reshape(-1)


@dataclass
class CorrectionModel:
    """Rigid correction fitted for one region."""

    region: RegionSpec
    transform: RigidTransform
    residual_rms_mm: float
    pair_count: int

    def __post_init__(self):
        if self.pair_count < 3:
            raise ValueError("a correction model needs >= 3 pairs")

    def to_dict(self) -> dict:
        return {
            "center": list(self.region.center),
            "radius_mm": self.region.radius_mm,
            **self.transform.to_dict(),
            "residual_rms_mm": self.residual_rms_mm,
            "n": self.pair_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "CorrectionModel":
        return cls(
            region=RegionSpec(tuple(data["center"]), float(data["radius_mm"])),
            transform=RigidTransform.from_dict(data),
            residual_rms_mm=float(data["residual_rms_mm"]),
            pair_count=int(data["n"]),
        )


def profile_depth_error(
    scene: PointCloud, reference_points, neighborhood_radius: float = 20.0
) -> DepthErrorProfile:
    """Distance of scene points near the references to the reference plane.

    Fits a total-least-squares plane to the reference points, gathers the
    scene points within ``neighborhood_radius`` of any reference, and
    reports each one's orthogonal distance to the plane.
    """
    refs = as_points(reference_points)
    plane = fit_plane_least_squares(refs)
    d, _ = cKDTree(refs).query(scene.points)
    near = d <= neighborhood_radius
    if not np.any(near):
        raise EmptyNeighborhood("no scene points within the profiling radius")
    errors = np.abs(plane.signed_distance(scene.points[near]))
    q25, q75 = np.percentile(errors, [25.0, 75.0])
    return DepthErrorProfile(
        errors_mm=errors,
        median_mm=float(np.median(errors)),
        iqr_mm=float(q75 - q25),
        max_mm=float(errors.max()),
        plane=plane,
        neighborhood_radius_mm=float(neighborhood_radius),
    )


def pair_ground_truth(ground_truth, scene: PointCloud, region: RegionSpec):
    """Nearest sensor point for each ground-truth point.

    Returns (L, P) arrays of equal length; pairs farther apart than the
    region radius are rejected. Raises TooFewPairs when fewer than three
    survive.
    """
    gt = as_points(ground_truth)
    inside = region.contains(gt)
    if not np.all(inside):
        raise ValueError("ground-truth points must lie within the region")
    d, idx = cKDTree(scene.points).query(gt)
    keep = d <= region.radius_mm
    if int(keep.sum()) < 3:
        raise TooFewPairs(f"only {int(keep.sum())} ground-truth pairs within the region")
    return gt[keep], scene.points[idx[keep]]


def fit_region_correction(pairs, region: RegionSpec) -> CorrectionModel:
    """Least-squares rigid map from sensor points onto ground truth.

    ``pairs`` is the (L, P) tuple from pair_ground_truth (or any two
    equal-length point arrays, ground truth first).
    """
    gt, sensed = pairs
    gt = as_points(gt)
    sensed = as_points(sensed)
    if gt.shape != sensed.shape or gt.shape[0] < 3:
        raise TooFewPairs("need >= 3 (ground truth, sensor) pairs")
    transform = kabsch_align(sensed, gt)
    resid = transform.apply_points(sensed) - gt
    rms = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
    return CorrectionModel(
        region=region,
        transform=transform,
        residual_rms_mm=rms,
        pair_count=gt.shape[0],
    )


def apply_region_correction(scene: PointCloud, model: CorrectionModel) -> PointCloud:
    """Transform scene points inside the model's region; leave the rest.

    The boundary is closed (distance <= radius is corrected). The output
    cloud carries a corrected flag; correcting twice raises
    AlreadyCorrected because the fitted map is only valid for raw sensor
    data.
    """
    if scene.meta.get("corrected"):
        raise AlreadyCorrected("this cloud was already corrected once")
    mask = model.region.contains(scene.points)
    points = scene.points.copy()
    points[mask] = model.transform.apply_points(points[mask])
    normals = None
    if scene.normals is not None:
        normals = scene.normals.copy()
        normals[mask] = normals[mask] @ model.transform.rotation.T
    out = PointCloud(
        points=points,
        normals=normals,
        curvatures=None if scene.curvatures is None else scene.curvatures.copy(),
        id=scene.id,
        meta=dict(scene.meta),
    )
    out.meta["corrected"] = True
    out.meta["corrected_points"] = int(mask.sum())
    return out
