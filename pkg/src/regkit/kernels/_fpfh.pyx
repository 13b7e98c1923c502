# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pair-feature histogram kernel (same contract as fpfh_numpy)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, sqrt, M_PI

cnp.import_array()

DEF N_BINS = 11


def pair_feature_histograms(points, normals, centers, neighbors, Py_ssize_t n_points):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] nrm = np.ascontiguousarray(normals, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cen = np.ascontiguousarray(centers, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] nbr = np.ascontiguousarray(neighbors, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] hist = np.zeros((n_points, 3 * N_BINS))

    cdef Py_ssize_t n_pairs = cen.shape[0]
    cdef Py_ssize_t p, c, j
    cdef double dx, dy, dz, dist, inv
    cdef double ux, uy, uz, n2x, n2y, n2z
    cdef double vx, vy, vz, vn, wx, wy, wz
    cdef double f1, f2, f3
    cdef Py_ssize_t b1, b2, b3

    for p in range(n_pairs):
        c = cen[p]
        j = nbr[p]
        dx = pts[j, 0] - pts[c, 0]
        dy = pts[j, 1] - pts[c, 1]
        dz = pts[j, 2] - pts[c, 2]
        dist = sqrt(dx * dx + dy * dy + dz * dz)
        if dist <= 1e-12:
            continue
        inv = 1.0 / dist
        dx *= inv
        dy *= inv
        dz *= inv

        ux = nrm[c, 0]
        uy = nrm[c, 1]
        uz = nrm[c, 2]
        n2x = nrm[j, 0]
        n2y = nrm[j, 1]
        n2z = nrm[j, 2]

        # v = d_hat x u, w = u x v
        vx = dy * uz - dz * uy
        vy = dz * ux - dx * uz
        vz = dx * uy - dy * ux
        vn = sqrt(vx * vx + vy * vy + vz * vz)
        if vn <= 1e-12:
            continue
        vx /= vn
        vy /= vn
        vz /= vn
        wx = uy * vz - uz * vy
        wy = uz * vx - ux * vz
        wz = ux * vy - uy * vx

        f1 = vx * n2x + vy * n2y + vz * n2z
        f2 = ux * dx + uy * dy + uz * dz
        f3 = atan2(wx * n2x + wy * n2y + wz * n2z, ux * n2x + uy * n2y + uz * n2z)

        b1 = <Py_ssize_t>((f1 + 1.0) * 0.5 * N_BINS)
        if b1 < 0:
            b1 = 0
        elif b1 > N_BINS - 1:
            b1 = N_BINS - 1
        b2 = <Py_ssize_t>((f2 + 1.0) * 0.5 * N_BINS)
        if b2 < 0:
            b2 = 0
        elif b2 > N_BINS - 1:
            b2 = N_BINS - 1
        b3 = <Py_ssize_t>((f3 + M_PI) / (2.0 * M_PI) * N_BINS)
        if b3 < 0:
            b3 = 0
        elif b3 > N_BINS - 1:
            b3 = N_BINS - 1

        hist[c, b1] += 1.0
        hist[c, N_BINS + b2] += 1.0
        hist[c, 2 * N_BINS + b3] += 1.0

    return hist
