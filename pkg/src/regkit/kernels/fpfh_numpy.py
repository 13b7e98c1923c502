"""Vectorized fallback for the pair-feature histogram kernel."""

import numpy as np

N_BINS = 11


def pair_feature_histograms(points, normals, centers, neighbors, n_points):
    """Accumulate Darboux-frame pair features into 33-bin histograms.

    For every pair (center c, neighbor j) the three angular features of
    the local frame at c are computed and binned (11 bins each). Pairs
    with coincident points or a neighbor direction parallel to the
    center normal are skipped.

    Returns an (n_points, 33) float64 count array indexed by center.
    """
    points = np.asarray(points, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.int64)
    neighbors = np.asarray(neighbors, dtype=np.int64)

    hist = np.zeros((n_points, 3 * N_BINS))
    if centers.size == 0:
        return hist

    d = points[neighbors] - points[centers]
    dist = np.linalg.norm(d, axis=1)
    ok = dist > 1e-12
    d_hat = np.zeros_like(d)
    d_hat[ok] = d[ok] / dist[ok, None]

    u = normals[centers]
    n2 = normals[neighbors]
    v = np.cross(d_hat, u)
    v_norm = np.linalg.norm(v, axis=1)
    ok &= v_norm > 1e-12
    v[ok] = v[ok] / v_norm[ok, None]
    w = np.cross(u, v)

    f1 = np.einsum("ij,ij->i", v, n2)
    f2 = np.einsum("ij,ij->i", u, d_hat)
    f3 = np.arctan2(np.einsum("ij,ij->i", w, n2), np.einsum("ij,ij->i", u, n2))

    b1 = np.clip(((f1 + 1.0) * 0.5 * N_BINS).astype(np.int64), 0, N_BINS - 1)
    b2 = np.clip(((f2 + 1.0) * 0.5 * N_BINS).astype(np.int64), 0, N_BINS - 1)
    b3 = np.clip(
        ((f3 + np.pi) / (2.0 * np.pi) * N_BINS).astype(np.int64), 0, N_BINS - 1
    )

    c_ok = centers[ok]
    np.add.at(hist, (c_ok, b1[ok]), 1.0)
    np.add.at(hist, (c_ok, N_BINS + b2[ok]), 1.0)
    np.add.at(hist, (c_ok, 2 * N_BINS + b3[ok]), 1.0)
    return hist
