"""Spatial indexing, local surface estimates, plane fitting, and
closed-form rigid alignment. This is the numeric substrate every other
module builds on.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .cloud import Plane, PointCloud, RigidTransform, as_points
from .errors import DegenerateInput


class NeighborIndex:
    """Exact k-nearest / radius queries over a fixed point set.

    Backed by a kd-tree; results are exact (no approximate neighbors).
    Construction is single-threaded, queries are safe to share across
    concurrent readers.
    """

    def __init__(self, points):
        if isinstance(points, PointCloud):
            points = points.points
        self._points = as_points(points)
        self._tree = cKDTree(self._points)

    @property
    def points(self) -> np.ndarray:
        return self._points

    def knn(self, query, k: int):
        """Distances and indices of the k nearest points to each query."""
        d, i = self._tree.query(as_points(query), k=k)
        if k == 1:
            d = np.atleast_1d(d)
            i = np.atleast_1d(i)
        return d, i

    def radius(self, query, r: float):
        """Index lists of points within distance r of each query point."""
        return self._tree.query_ball_point(as_points(query), r)


# ---------------------------------------------------------------------------
# Rigid alignment
# ---------------------------------------------------------------------------


def kabsch_align(source, target, weights=None) -> RigidTransform:
    """Least-squares rigid transform mapping source[i] onto target[i].

    Centroids are aligned, the rotation comes from the SVD of the
    weighted cross-covariance, and a reflection is repaired by flipping
    the sign of the last column of V so that det(R) = +1.

    Raises DegenerateInput for fewer than 3 pairs or a rank-deficient
    cross-covariance (collinear points).
    """
    src = as_points(source)
    dst = as_points(target)
    if src.shape != dst.shape:
        raise ValueError("source and target must have the same shape")
    n = src.shape[0]
    if n < 3:
        raise DegenerateInput("need at least 3 point pairs")
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != n or np.any(w < 0):
            raise ValueError("weights must be non-negative and match pair count")
        total = w.sum()
        if total <= 0:
            raise DegenerateInput("all weights are zero")
        w = w / total

    c_src = w @ src
    c_dst = w @ dst
    a = src - c_src
    b = dst - c_dst
    h = (a * w[:, None]).T @ b
    u, s, vt = np.linalg.svd(h)
    if s[1] <= max(s[0], 1e-300) * 1e-9:
        raise DegenerateInput("rank-deficient covariance (collinear points)")
    v = vt.T
    if np.linalg.det(v @ u.T) < 0:
        v = v.copy()
        v[:, -1] *= -1.0
    rot = v @ u.T
    t = c_dst - rot @ c_src
    return RigidTransform(rot, t)


def rotation_align(source_vectors, target_vectors, weights=None) -> np.ndarray:
    """Rotation-only Procrustes fit: minimize sum w |target - R source|^2.

    No centroid subtraction; intended for translation-invariant vector
    pairs. Returns a proper rotation matrix.
    """
    src = as_points(source_vectors)
    dst = as_points(target_vectors)
    if src.shape != dst.shape:
        raise ValueError("vector sets must have the same shape")
    n = src.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape[0] != n:
        raise ValueError("weights must match vector count")
    h = (src * w[:, None]).T @ dst
    u, s, vt = np.linalg.svd(h)
    if s[1] <= max(s[0], 1e-300) * 1e-9:
        raise DegenerateInput("rank-deficient vector set")
    v = vt.T
    if np.linalg.det(v @ u.T) < 0:
        v = v.copy()
        v[:, -1] *= -1.0
    return v @ u.T


def apply_transform(cloud: PointCloud, transform: RigidTransform) -> PointCloud:
    """Map a cloud through a transform; normals rotate, curvatures carry over."""
    normals = cloud.normals
    if normals is not None:
        normals = normals @ transform.rotation.T
    return PointCloud(
        points=transform.apply_points(cloud.points),
        normals=normals,
        curvatures=None if cloud.curvatures is None else cloud.curvatures.copy(),
        id=cloud.id,
        meta=dict(cloud.meta),
    )


def alignment_rmse(
    source: PointCloud,
    target: PointCloud,
    transform: RigidTransform,
    pairing: str = "index-matched",
) -> float:
    """Root-mean-square residual (mm) after applying ``transform`` to source.

    pairing:
        "index-matched"    residual i is |T(s_i) - t_i| (equal lengths required)
        "nearest-neighbor" residual i is the distance to the closest target point
    """
    moved = transform.apply_points(source.points)
    if pairing == "index-matched":
        if len(source) != len(target):
            raise ValueError("index-matched pairing requires equal-length clouds")
        d = np.linalg.norm(moved - target.points, axis=1)
    elif pairing == "nearest-neighbor":
        d, _ = cKDTree(target.points).query(moved)
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    return float(np.sqrt(np.mean(d * d)))


# ---------------------------------------------------------------------------
# Downsampling
# ---------------------------------------------------------------------------


def _voxel_labels(points: np.ndarray, origin: np.ndarray, edge: float) -> np.ndarray:
    return np.floor((points - origin) / edge).astype(np.int64)


def _voxel_centroids(points: np.ndarray, origin: np.ndarray, edge: float):
    labels = _voxel_labels(points, origin, edge)
    keys, inverse = np.unique(labels, axis=0, return_inverse=True)
    sums = np.zeros((keys.shape[0], 3))
    np.add.at(sums, inverse, points)
    counts = np.bincount(inverse, minlength=keys.shape[0]).astype(np.float64)
    return sums / counts[:, None], keys.shape[0]


def voxel_downsample(cloud: PointCloud, target_count: int) -> PointCloud:
    """Reduce a cloud to roughly ``target_count`` voxel centroids.

    The voxel edge length is found by bisection so the output count lands
    within +/-10% of the target. Clouds at or below the target are
    returned unchanged. Normals and curvatures are dropped (centroids are
    new points); callers re-estimate them as needed.
    """
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    n = len(cloud)
    if n <= target_count:
        return cloud
    points = cloud.points
    origin = points.min(axis=0)
    diag = float(np.linalg.norm(points.max(axis=0) - origin))
    if diag == 0.0:
        centroids, _ = _voxel_centroids(points, origin, 1.0)
        out = PointCloud(centroids, id=cloud.id, meta=dict(cloud.meta))
        out.meta.update(voxel_edge_mm=1.0, voxel_origin=origin.tolist())
        return out

    lo, hi = diag * 1e-6, diag * 2.0
    best_edge, best_gap = hi, np.inf
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        _, count = _voxel_centroids(points, origin, mid)
        gap = abs(count - target_count)
        if gap < best_gap:
            best_gap, best_edge = gap, mid
        if abs(count - target_count) <= 0.1 * target_count:
            best_edge = mid
            break
        if count > target_count:
            lo = mid
        else:
            hi = mid
    centroids, _ = _voxel_centroids(points, origin, best_edge)
    out = PointCloud(centroids, id=cloud.id, meta=dict(cloud.meta))
    out.meta.update(voxel_edge_mm=float(best_edge), voxel_origin=origin.tolist())
    return out


# ---------------------------------------------------------------------------
# Local surface estimates
# ---------------------------------------------------------------------------


def _local_pca(cloud: PointCloud, k: int):
    """Eigen-decomposition of each point's k-neighborhood covariance.

    Returns (eigenvalues ascending (N, 3), eigenvectors (N, 3, 3)) where
    eigenvectors[:, :, 0] belongs to the smallest eigenvalue.
    """
    n = len(cloud)
    if not 3 <= k < n:
        raise ValueError("need cloud.points.len > k >= 3")
    index = NeighborIndex(cloud)
    _, idx = index.knn(cloud.points, k)
    nbrs = cloud.points[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigvals, eigvecs = np.linalg.eigh(cov)
    return eigvals, eigvecs


def _degenerate_mask(eigvals: np.ndarray) -> np.ndarray:
    lam2 = eigvals[:, 2]
    return (lam2 <= 0) | (eigvals[:, 1] <= lam2 * 1e-9)


def estimate_normals(cloud: PointCloud, k: int = 30, viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    """Per-point normals from the smallest local-PCA eigenvector.

    Orientation is disambiguated toward ``viewpoint``. Points whose k
    neighbors are collinear get a NaN (null) normal instead of raising.
    """
    eigvals, eigvecs = _local_pca(cloud, k)
    normals = eigvecs[:, :, 0].copy()
    flip = np.einsum("ni,ni->n", normals, np.asarray(viewpoint, dtype=np.float64) - cloud.points)
    normals[flip < 0] *= -1.0
    normals[_degenerate_mask(eigvals)] = np.nan
    return PointCloud(
        points=cloud.points,
        normals=normals,
        curvatures=None if cloud.curvatures is None else cloud.curvatures.copy(),
        id=cloud.id,
        meta=dict(cloud.meta),
    )


def estimate_curvature(cloud: PointCloud, k: int = 30) -> PointCloud:
    """Surface-variation curvature lam0 / (lam0 + lam1 + lam2) in [0, 1/3].

    Degenerate neighborhoods get curvature 0 so a single bad point cannot
    abort a pipeline.
    """
    eigvals, _ = _local_pca(cloud, k)
    total = eigvals.sum(axis=1)
    curv = np.zeros(len(cloud))
    ok = total > 0
    curv[ok] = np.clip(eigvals[ok, 0], 0.0, None) / total[ok]
    curv[_degenerate_mask(eigvals)] = 0.0
    return PointCloud(
        points=cloud.points,
        normals=None if cloud.normals is None else cloud.normals.copy(),
        curvatures=np.clip(curv, 0.0, 1.0 / 3.0),
        id=cloud.id,
        meta=dict(cloud.meta),
    )


# ---------------------------------------------------------------------------
# Planes
# ---------------------------------------------------------------------------


def fit_plane_least_squares(points) -> Plane:
    """Total-least-squares plane through >= 3 non-collinear points."""
    pts = as_points(points)
    if pts.shape[0] < 3:
        raise DegenerateInput("need at least 3 points for a plane")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[1] <= max(eigvals[2], 1e-300) * 1e-9:
        raise DegenerateInput("points are collinear or coincident")
    normal = eigvecs[:, 0]
    normal = normal / np.linalg.norm(normal)
    d = -float(normal @ centroid)
    return Plane(float(normal[0]), float(normal[1]), float(normal[2]), d)


def project_onto_plane(point, plane: Plane) -> np.ndarray:
    """Orthogonal projection of a point (or (N,3) array) onto the plane."""
    pts = np.asarray(point, dtype=np.float64)
    single = pts.ndim == 1
    arr = as_points(pts)
    offsets = plane.signed_distance(arr)
    projected = arr - offsets[:, None] * plane.normal[None, :]
    return projected[0] if single else projected


# ---------------------------------------------------------------------------
# Rotation helpers
# ---------------------------------------------------------------------------


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues(rotvec) -> np.ndarray:
    """Rotation matrix from an axis-angle vector (exp map on SO(3))."""
    w = np.asarray(rotvec, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        return np.eye(3)
    k = skew(w / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def rotation_vector(rot: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (log map on SO(3))."""
    rot = np.asarray(rot, dtype=np.float64).reshape(3, 3)
    cos_theta = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    axis_raw = np.array(
        [rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]
    )
    if theta < 1e-7:
        return 0.5 * axis_raw
    if np.pi - theta < 1e-7:
        # Near pi the off-diagonal difference vanishes; recover the axis
        # from the dominant diagonal of (R + I) / 2.
        m = (rot + np.eye(3)) / 2.0
        i = int(np.argmax(np.diag(m)))
        axis = m[:, i] / np.sqrt(max(m[i, i], 1e-300))
        axis = axis / np.linalg.norm(axis)
        if axis_raw @ axis < 0:
            axis = -axis
        return theta * axis
    return theta * axis_raw / (2.0 * np.sin(theta))


def quaternion_from_rotation(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix."""
    r = np.asarray(rot, dtype=np.float64).reshape(3, 3)
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array(
            [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        )
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array(
            [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array(
            [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        )
    return q / np.linalg.norm(q)


def rotation_from_quaternion(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.sqrt(w * w + x * x + y * y + z * z)
    w, x, y, z = w / n, x / n, y / n, z / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_angle_deg(rot: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in degrees."""
    cos_theta = np.clip((np.trace(np.asarray(rot).reshape(3, 3)) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(cos_theta)))


def rotation_geodesic_deg(rot_a: np.ndarray, rot_b: np.ndarray) -> float:
    """Angle (degrees) between two rotations."""
    return rotation_angle_deg(np.asarray(rot_a).reshape(3, 3).T @ np.asarray(rot_b).reshape(3, 3))
