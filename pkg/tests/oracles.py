"""Independent reference implementations used to verify the toolkit.

These stay deliberately separate from the package code paths they
check: a quaternion (Horn) absolute-orientation solver, brute-force
voxel bucketing, brute-force 1-D truncated least squares, a classical
point-to-plane ICP, and an exhaustive-minimal-sample rotation solver.
"""

from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree


def horn_align(source, target):
    """Closed-form absolute orientation via the quaternion eigenproblem."""
    a = np.asarray(source, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    ca = a.mean(axis=0)
    cb = b.mean(axis=0)
    m = (a - ca).T @ (b - cb)
    sxx, sxy, sxz = m[0]
    syx, syy, syz = m[1]
    szx, szy, szz = m[2]
    n = np.array(
        [
            [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
            [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
            [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
            [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
        ]
    )
    eigvals, eigvecs = np.linalg.eigh(n)
    w, x, y, z = eigvecs[:, np.argmax(eigvals)]
    rot = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    t = cb - rot @ ca
    return rot, t


def brute_force_voxel_centroids(points, origin, edge):
    """Dictionary of voxel key -> centroid, by direct bucketing."""
    buckets = {}
    for p in np.asarray(points, dtype=np.float64):
        key = tuple(np.floor((p - origin) / edge).astype(int))
        buckets.setdefault(key, []).append(p)
    return {k: np.mean(v, axis=0) for k, v in buckets.items()}


def brute_force_tls_objective(x_hat, values, bounds, weights, c=1.0):
    r = weights * (x_hat - values) ** 2 / bounds**2
    return float(np.sum(np.minimum(r, weights * c * c)))


def brute_force_tls_min(values, bounds, weights, c=1.0, grid_points=4001):
    """Global minimum of the 1-D TLS objective by exhaustive search.

    Every consensus subset's closed-form weighted mean is evaluated,
    plus a dense grid over the full measurement span.
    """
    x = np.asarray(values, dtype=np.float64)
    b = np.asarray(bounds, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    n = x.size
    assert n <= 16, "exhaustive oracle limited to small instances"

    candidates = []
    quad = w / b**2
    for size in range(1, n + 1):
        for subset in combinations(range(n), size):
            idx = list(subset)
            candidates.append(float(np.sum(quad[idx] * x[idx]) / np.sum(quad[idx])))
    lo = float(np.min(x - c * b))
    hi = float(np.max(x + c * b))
    candidates.extend(np.linspace(lo, hi, grid_points))

    best = np.inf
    best_x = candidates[0]
    for cand in candidates:
        obj = brute_force_tls_objective(cand, x, b, w, c)
        if obj < best:
            best = obj
            best_x = cand
    return best_x, best


def _rodrigues(w):
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3)
    k = w / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * kx + (1 - np.cos(theta)) * (kx @ kx)


def classical_point_to_plane_icp(
    source, target, target_normals, init_rot, init_trans,
    max_corr_dist, rot_delta_rad, trans_delta, max_iterations,
):
    """Plain (unweighted) point-to-plane ICP with small-angle updates."""
    rot = np.asarray(init_rot, dtype=np.float64).copy()
    trans = np.asarray(init_trans, dtype=np.float64).copy()
    tree = cKDTree(target)
    for _ in range(max_iterations):
        moved = source @ rot.T + trans
        d, j = tree.query(moved)
        sel = d <= max_corr_dist
        p = moved[sel]
        nrm = target_normals[j[sel]]
        r = np.einsum("ij,ij->i", nrm, p - target[j[sel]])
        jac = np.hstack([np.cross(p, nrm), nrm])
        x, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        d_rot = _rodrigues(x[:3])
        rot = d_rot @ rot
        u, _, vt = np.linalg.svd(rot)
        rot = u @ vt
        if np.linalg.det(rot) < 0:
            u[:, -1] *= -1
            rot = u @ vt
        trans = d_rot @ trans + x[3:]
        if np.linalg.norm(x[:3]) < rot_delta_rad and np.linalg.norm(x[3:]) < trans_delta:
            break
    return rot, trans


def ransac_rotation_exhaustive(delta_p, delta_q, bound):
    """Best rotation over all 2-edge minimal samples, refit on inliers.

    The minimal sample for a rotation from translation-invariant vector
    pairs is two (non-parallel) vectors.
    """
    dp = np.asarray(delta_p, dtype=np.float64)
    dq = np.asarray(delta_q, dtype=np.float64)
    n = dp.shape[0]
    best_count = -1
    best_inliers = None
    for i, k in combinations(range(n), 2):
        h = dp[[i, k]].T @ dq[[i, k]]
        u, s, vt = np.linalg.svd(h)
        if s[1] < 1e-9 * max(s[0], 1e-30):
            continue
        v = vt.T
        if np.linalg.det(v @ u.T) < 0:
            v = v.copy()
            v[:, -1] *= -1
        rot = v @ u.T
        resid = np.linalg.norm(dq - dp @ rot.T, axis=1)
        inliers = resid <= bound
        if int(inliers.sum()) > best_count:
            best_count = int(inliers.sum())
            best_inliers = inliers
    h = dp[best_inliers].T @ dq[best_inliers]
    u, _, vt = np.linalg.svd(h)
    v = vt.T
    if np.linalg.det(v @ u.T) < 0:
        v = v.copy()
        v[:, -1] *= -1
    return v @ u.T
