"""Exact 1-D truncated-least-squares estimation by adaptive voting.

Minimizes sum_i w_i * min((x - x_i)^2 / a_i^2, c^2) over x. The
objective is piecewise quadratic with breakpoints at the interval
endpoints x_i +/- c*a_i, so sweeping the sorted endpoints and minimizing
the active quadratic on each segment finds the global minimum exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class TlsResult:
    value: float
    objective: float
    inlier_mask: np.ndarray
    consensus_fallback: bool  # weighted-median fallback (all intervals disjoint)


def weighted_median(values, weights) -> float:
    """Lower weighted median: smallest v with cumulative weight >= half."""
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(w[order])
    pivot = np.searchsorted(cum, 0.5 * cum[-1])
    return float(v[order[min(pivot, v.size - 1)]])


def _objective_at(x, values, quad_coeff, weights, c_sq):
    resid = (x - values) ** 2 * quad_coeff  # w * (x - xi)^2 / alpha^2
    return float(np.sum(np.minimum(resid, weights * c_sq)))


def solve_tls_1d(measurements, bounds, weights, c: float = 1.0) -> TlsResult:
    """Exact TLS estimate of a scalar from bounded noisy measurements.

    measurements: values x_i
    bounds:       per-measurement noise bounds alpha_i > 0
    weights:      positive weights w_i
    c:            truncation normalization (objective capped at w_i c^2)

    When every confidence interval is disjoint (no two measurements ever
    agree) the result is still the exact minimizer but it carries no
    consensus; consensus_fallback=True warns the caller.
    """
    x = np.asarray(measurements, dtype=np.float64).reshape(-1)
    a = np.asarray(bounds, dtype=np.float64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    n = x.size
    if n == 0:
        raise ValueError("no measurements")
    if a.shape != x.shape or w.shape != x.shape:
        raise ValueError("measurements, bounds, weights must have equal length")
    if np.any(a <= 0) or np.any(w <= 0):
        raise ValueError("bounds and weights must be positive")

    half = c * a
    quad = w / (a * a)  # quadratic coefficient per measurement
    c_sq = c * c
    total_cap = float(np.sum(w)) * c_sq

    if n == 1:
        return TlsResult(float(x[0]), 0.0, np.array([True]), False)

    # Sweep events: +1 at interval start, -1 past interval end.
    starts = x - half
    ends = x + half
    positions = np.concatenate([starts, ends])
    deltas = np.concatenate([np.ones(n, dtype=np.int64), -np.ones(n, dtype=np.int64)])
    idx = np.concatenate([np.arange(n), np.arange(n)])
    # Starts sort before ends at equal positions so touching intervals count
    # as overlapping on the shared point.
    order = np.lexsort((deltas * -1, positions))

    best_obj = np.inf
    best_x = float(x[0])
    best_var = np.inf
    max_active = 0

    s_quad = 0.0  # sum w/a^2 over active
    s_qx = 0.0  # sum (w/a^2) x
    s_qxx = 0.0  # sum (w/a^2) x^2
    s_wcap = 0.0  # sum w over active
    n_active = 0

    k = 0
    m = order.size
    while k < m:
        pos = positions[order[k]]
        while k < m and positions[order[k]] == pos:
            e = order[k]
            i = idx[e]
            if deltas[e] > 0:
                s_quad += quad[i]
                s_qx += quad[i] * x[i]
                s_qxx += quad[i] * x[i] * x[i]
                s_wcap += w[i]
                n_active += 1
            else:
                s_quad -= quad[i]
                s_qx -= quad[i] * x[i]
                s_qxx -= quad[i] * x[i] * x[i]
                s_wcap -= w[i]
                n_active -= 1
            k += 1
        if n_active <= 0 or k >= m:
            continue
        max_active = max(max_active, n_active)
        seg_lo = pos
        seg_hi = positions[order[k]]
        x_star = s_qx / s_quad
        x_star = min(max(x_star, seg_lo), seg_hi)
        obj = (s_qxx - 2.0 * x_star * s_qx + x_star * x_star * s_quad) + (
            total_cap - s_wcap * c_sq
        )
        tol = 1e-12 * max(1.0, abs(obj))
        if not np.isfinite(best_obj) or obj < best_obj - tol:
            best_obj = obj
            best_x = float(x_star)
            best_var = max(s_qxx / s_quad - (s_qx / s_quad) ** 2, 0.0)
        elif abs(obj - best_obj) <= tol:
            # Tie: prefer the consensus set with the smaller weighted variance.
            var = max(s_qxx / s_quad - (s_qx / s_quad) ** 2, 0.0)
            if var < best_var:
                best_x = float(x_star)
                best_var = var

    fallback = max_active <= 1
    inliers = np.abs(best_x - x) <= half
    return TlsResult(best_x, float(best_obj), inliers, fallback)
