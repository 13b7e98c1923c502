"""Outlier-robust global registration from weighted correspondences.

Translation-invariant measurements decouple the similarity estimate:
scale by exact 1-D truncated least squares, rotation by graduated
non-convexity over a truncated cost, translation component-wise by the
same exact 1-D solver, with optional maximum-clique pruning of the
pairwise consistency graph in between.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .cloud import PointCloud, RigidTransform
from .errors import (
    DegenerateInput,
    NoCorrespondences,
    RegistrationFailed,
    TooFewCorrespondences,
)
from .features import (
    CorrespondenceSet,
    compute_fpfh,
    curvature_weighted_sample,
    match_descriptors,
)
from .geometry import (
    NeighborIndex,
    estimate_curvature,
    estimate_normals,
    rotation_align,
)
from .tls import solve_tls_1d


@dataclass(frozen=True)
class CoarseConfig:
    """Tuning knobs for the coarse registration cascade.

    noise_sigma_mm drives every default bound: the truncation threshold
    and the scale/rotation/translation noise bounds all default to three
    sigma.
    """

    noise_sigma_mm: float = 0.33
    epsilon_mm: float | None = None  # TLS truncation; None -> 3 * sigma
    c_sq: float = 1.0
    known_scale: float | None = 1.0  # rigid anatomy default; None estimates scale
    gnc_div_factor: float = 1.4
    gnc_max_iterations: int = 64
    max_tim_correspondences: int = 300
    clique_pruning: bool | None = None  # None -> on when correspondences > 50
    sample_count: int = 300
    target_sample_count: int | None = None  # None -> descriptors at every target point
    fpfh_radius_mm: float | None = None  # None -> 6x median point spacing
    match_tau: float | None = None  # None -> adaptive
    mutual_match: bool = True
    normal_k: int = 30
    curvature_k: int = 30

    def __post_init__(self):
        if self.epsilon_mm is not None and self.epsilon_mm <= 0:
            raise ValueError("epsilon_mm must be positive")
        if self.c_sq <= 0:
            raise ValueError("c_sq must be positive")
        if self.known_scale is not None and self.known_scale <= 0:
            raise ValueError("known_scale must be positive")

    @property
    def noise_bound_mm(self) -> float:
        return self.epsilon_mm if self.epsilon_mm is not None else 3.0 * self.noise_sigma_mm


@dataclass
class TimSet:
    """Translation-invariant measurements over correspondence pairs."""

    edges: np.ndarray  # (E, 2) correspondence indices
    delta_p: np.ndarray  # (E, 3) source differences (mm)
    delta_q: np.ndarray  # (E, 3) target differences (mm)
    weights: np.ndarray  # (E,) min of the endpoint weights
    alpha: np.ndarray  # (E,) scale-ratio noise bounds
    delta_bound: np.ndarray  # (E,) rotation noise bounds (mm)
    nodes: np.ndarray  # correspondence indices this set spans
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        for name in ("delta_p", "delta_q"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1, 3))
        for name in ("weights", "alpha", "delta_bound"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))
        self.nodes = np.asarray(self.nodes, dtype=np.int64).reshape(-1)
        n = self.edges.shape[0]
        for name in ("delta_p", "delta_q", "weights", "alpha", "delta_bound"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} length does not match edges")

    def __len__(self) -> int:
        return int(self.edges.shape[0])


@dataclass
class CoarseResult:
    """Coarse registration estimate plus surviving inlier structure."""

    transform: RigidTransform
    inlier_edges: TimSet
    inlier_pairs: CorrespondenceSet
    diagnostics: list
    flags: list = field(default_factory=list)

    def diagnostics_json(self) -> str:
        return json.dumps(self.diagnostics, indent=2)


def build_tims(
    corr: CorrespondenceSet,
    source: PointCloud,
    target: PointCloud,
    config: CoarseConfig,
    seed: int = 0,
) -> TimSet:
    """Pairwise difference measurements over the correspondence graph.

    Uses the complete graph up to config.max_tim_correspondences
    correspondences; larger sets are first reduced by a weighted random
    subsample. Edges with near-zero source difference are dropped.
    """
    if len(corr) < 3:
        raise TooFewCorrespondences(f"{len(corr)} correspondences, need >= 3")
    corr_idx = np.arange(len(corr))
    if len(corr) > config.max_tim_correspondences:
        rng = np.random.default_rng(seed)
        probs = corr.weights / corr.weights.sum()
        corr_idx = np.sort(
            rng.choice(len(corr), size=config.max_tim_correspondences, replace=False, p=probs)
        )
    pairs = corr.pairs[corr_idx]
    weights = corr.weights[corr_idx]
    p = source.points[pairs[:, 0]]
    q = target.points[pairs[:, 1]]

    n = corr_idx.shape[0]
    ii, kk = np.triu_indices(n, k=1)
    dp = p[ii] - p[kk]
    dq = q[ii] - q[kk]
    norm_dp = np.linalg.norm(dp, axis=1)
    keep = norm_dp > 1e-6
    ii, kk, dp, dq, norm_dp = ii[keep], kk[keep], dp[keep], dq[keep], norm_dp[keep]

    bound = config.noise_bound_mm
    return TimSet(
        edges=np.column_stack([corr_idx[ii], corr_idx[kk]]),
        delta_p=dp,
        delta_q=dq,
        weights=np.minimum(weights[ii], weights[kk]),
        alpha=bound / norm_dp,
        delta_bound=np.full(ii.shape[0], bound),
        nodes=corr_idx,
    )


def estimate_scale_tls(tims: TimSet, config: CoarseConfig, diagnostics: dict | None = None) -> float:
    """Global scale from pairwise length ratios, solved exactly.

    Returns config.known_scale untouched when it is set (the rigid
    surgical default pins scale at 1).
    """
    if config.known_scale is not None:
        return float(config.known_scale)
    if len(tims) == 0:
        raise TooFewCorrespondences("no measurements for scale estimation")
    norm_dp = np.linalg.norm(tims.delta_p, axis=1)
    norm_dq = np.linalg.norm(tims.delta_q, axis=1)
    ratios = norm_dq / norm_dp
    result = solve_tls_1d(ratios, tims.alpha, tims.weights, c=np.sqrt(config.c_sq))
    if diagnostics is not None:
        diagnostics.update(
            scale_inliers=int(result.inlier_mask.sum()),
            scale_fallback=result.consensus_fallback,
        )
    return float(max(result.value, 1e-12))


def _gnc_weights(r_sq: np.ndarray, c_sq: float, m: float) -> np.ndarray:
    """Closed-form truncated-least-squares surrogate weights.

    The control parameter m anneals downward; m -> 0 recovers the binary
    truncated weights (1 inside the threshold, 0 outside), large m makes
    every residual count.
    """
    if m <= 1e-9:
        return (r_sq <= c_sq).astype(np.float64)
    th_in = c_sq / (1.0 + m)
    th_out = c_sq * (1.0 + m)
    w = np.zeros_like(r_sq)
    w[r_sq <= th_in] = 1.0
    mid = (r_sq > th_in) & (r_sq < th_out)
    r = np.sqrt(r_sq[mid])
    w[mid] = (np.sqrt(c_sq * (1.0 + m)) / r - 1.0) / m
    return np.clip(w, 0.0, 1.0)


def estimate_rotation_gnc(
    tims: TimSet,
    kappa: float,
    config: CoarseConfig,
    diagnostics: dict | None = None,
) -> np.ndarray:
    """Rotation minimizing the truncated pairwise cost via graduated
    non-convexity.

    Alternates a weighted rotation-only Procrustes fit with the
    closed-form surrogate weight update, annealing the control parameter
    geometrically (m <- m / factor) until the weights are binary. If the
    truncated cost fails to decrease for five consecutive iterations the
    best iterate so far is returned and a divergence flag is recorded.
    """
    if len(tims) < 3:
        raise TooFewCorrespondences("need >= 3 edges for rotation estimation")
    dp = tims.delta_p * kappa
    dq = tims.delta_q
    inv_var = 1.0 / (tims.delta_bound**2)
    base_w = tims.weights * inv_var
    c_sq = config.c_sq

    def residual_sq(rot: np.ndarray) -> np.ndarray:
        diff = dq - dp @ rot.T
        return np.einsum("ij,ij->i", diff, diff) * inv_var

    def tls_cost(r_sq: np.ndarray) -> float:
        return float(np.sum(tims.weights * np.minimum(r_sq, c_sq)))

    rot = rotation_align(dp, dq, base_w)
    r_sq = residual_sq(rot)
    m = (2.0 * float(r_sq.max()) / c_sq) - 1.0

    best_rot = rot
    best_cost = tls_cost(r_sq)
    gnc_w = np.ones(len(tims))
    diverged = False
    prev_cost = np.inf
    stall = 0
    iterations = 0

    if m > 1e-9:
        prev_w = None
        for iterations in range(1, config.gnc_max_iterations + 1):
            gnc_w = _gnc_weights(r_sq, c_sq, m)
            if np.count_nonzero(gnc_w) < 3:
                diverged = True
                break
            try:
                rot = rotation_align(dp, dq, base_w * gnc_w)
            except DegenerateInput:
                diverged = True
                break
            r_sq = residual_sq(rot)
            cost = tls_cost(r_sq)
            if cost < best_cost:
                best_cost = cost
                best_rot = rot
            # A flat truncated cost is normal while the surrogate is still
            # soft; only strictly increasing cost counts as divergence.
            if cost > prev_cost + 1e-12:
                stall += 1
                if stall >= 5:
                    diverged = True
                    break
            else:
                stall = 0
            prev_cost = cost
            binary = np.all((gnc_w <= 1e-6) | (gnc_w >= 1.0 - 1e-6))
            if binary and prev_w is not None and np.array_equal(gnc_w, prev_w):
                break
            prev_w = gnc_w
            m /= config.gnc_div_factor
            if m < 1e-9:
                m = 0.0
    else:
        # Every residual already lies inside the truncation threshold;
        # the plain weighted fit is the TLS optimum.
        gnc_w = np.ones(len(tims))

    inlier_mask = _gnc_weights(r_sq, c_sq, 0.0).astype(bool) if diverged else gnc_w >= 0.5
    if inlier_mask.sum() >= 3:
        try:
            final = rotation_align(dp[inlier_mask], dq[inlier_mask], base_w[inlier_mask])
            if tls_cost(residual_sq(final)) <= best_cost + 1e-12:
                best_rot = final
                best_cost = tls_cost(residual_sq(final))
        except DegenerateInput:
            pass
    r_sq_final = residual_sq(best_rot)
    inlier_mask = r_sq_final <= c_sq

    if diagnostics is not None:
        diagnostics.update(
            gnc_iterations=iterations,
            gnc_diverged=diverged,
            rotation_inliers=int(inlier_mask.sum()),
            rotation_cost=best_cost,
            rotation_inlier_mask=inlier_mask,
        )
    return best_rot


def prune_max_clique(tims: TimSet, kappa: float, c: float = 1.0) -> TimSet:
    """Keep the TIM subgraph induced by an approximate maximum clique of
    the scale-consistency graph.

    Correspondences i, k are linked when | |dq| - kappa |dp| | is inside
    c times the edge noise bound. The clique search is greedy over a
    degeneracy ordering with a local add/swap augmentation pass.
    """
    if len(tims) == 0:
        out = replace_tims(tims, np.zeros(0, dtype=bool))
        out.flags.append("clique_singleton")
        return out
    norm_dp = np.linalg.norm(tims.delta_p, axis=1)
    norm_dq = np.linalg.norm(tims.delta_q, axis=1)
    consistent = np.abs(norm_dq - kappa * norm_dp) <= c * tims.delta_bound

    nodes = tims.nodes
    local = {int(v): i for i, v in enumerate(nodes)}
    n = nodes.shape[0]
    adj = [set() for _ in range(n)]
    for (i, k), ok in zip(tims.edges, consistent):
        if ok:
            a, b = local[int(i)], local[int(k)]
            adj[a].add(b)
            adj[b].add(a)

    clique = _greedy_max_clique(adj)
    clique_nodes = set(nodes[sorted(clique)].tolist())

    edge_keep = np.array(
        [int(i) in clique_nodes and int(k) in clique_nodes for i, k in tims.edges],
        dtype=bool,
    )
    out = replace_tims(tims, edge_keep)
    out.nodes = np.array(sorted(clique_nodes), dtype=np.int64)
    if len(clique_nodes) <= 1:
        out.flags.append("clique_singleton")
    return out


def replace_tims(tims: TimSet, edge_mask: np.ndarray) -> TimSet:
    return TimSet(
        edges=tims.edges[edge_mask],
        delta_p=tims.delta_p[edge_mask],
        delta_q=tims.delta_q[edge_mask],
        weights=tims.weights[edge_mask],
        alpha=tims.alpha[edge_mask],
        delta_bound=tims.delta_bound[edge_mask],
        nodes=tims.nodes.copy(),
        flags=list(tims.flags),
    )


def _greedy_max_clique(adj: list) -> list:
    """Approximate maximum clique: degeneracy-ordered greedy expansion
    from the top seeds plus a one-swap augmentation."""
    n = len(adj)
    if n == 0:
        return []
    degree = np.array([len(a) for a in adj])
    removed = np.zeros(n, dtype=bool)
    order = []
    deg_work = degree.copy()
    for _ in range(n):
        candidates = np.flatnonzero(~removed)
        v = candidates[np.argmin(deg_work[candidates])]
        order.append(int(v))
        removed[v] = True
        for u in adj[v]:
            if not removed[u]:
                deg_work[u] -= 1

    best: list = []
    seeds = list(reversed(order))[: min(n, 48)]
    for seed in seeds:
        clique = [seed]
        cand = set(adj[seed])
        while cand:
            v = max(cand, key=lambda u: (len(adj[u] & cand), -u))
            clique.append(v)
            cand &= adj[v]
        if len(clique) > len(best):
            best = clique

    # Local augmentation: a single swap that admits two replacements.
    improved = True
    while improved:
        improved = False
        members = set(best)
        for u in list(best):
            rest = members - {u}
            addable = [
                v
                for v in range(n)
                if v not in members and rest <= adj[v]
            ]
            for a_i in range(len(addable)):
                for b_i in range(a_i + 1, len(addable)):
                    va, vb = addable[a_i], addable[b_i]
                    if vb in adj[va]:
                        best = sorted(rest | {va, vb})
                        members = set(best)
                        improved = True
                        break
                if improved:
                    break
            if improved:
                break
    return sorted(best)


def estimate_translation_tls(
    corr: CorrespondenceSet,
    source: PointCloud,
    target: PointCloud,
    kappa: float,
    rotation: np.ndarray,
    config: CoarseConfig,
    diagnostics: dict | None = None,
) -> np.ndarray:
    """Component-wise exact TLS translation from rotated residuals."""
    if len(corr) == 0:
        raise TooFewCorrespondences("no correspondences for translation")
    p = source.points[corr.pairs[:, 0]]
    q = target.points[corr.pairs[:, 1]]
    resid = q - kappa * (p @ np.asarray(rotation).reshape(3, 3).T)
    bound = np.full(len(corr), config.noise_bound_mm)
    t = np.zeros(3)
    fallbacks = []
    inlier_counts = []
    for axis in range(3):
        result = solve_tls_1d(resid[:, axis], bound, corr.weights, c=np.sqrt(config.c_sq))
        t[axis] = result.value
        fallbacks.append(result.consensus_fallback)
        inlier_counts.append(int(result.inlier_mask.sum()))
    if diagnostics is not None:
        diagnostics.update(
            translation_fallback=fallbacks,
            translation_inliers=inlier_counts,
        )
    return t


def _ensure_features(cloud: PointCloud, config: CoarseConfig) -> PointCloud:
    out = cloud
    if out.normals is None:
        out = estimate_normals(out, k=min(config.normal_k, len(out) - 1))
    if out.curvatures is None:
        out = estimate_curvature(out, k=min(config.curvature_k, len(out) - 1))
    return out


def _auto_radius(cloud: PointCloud) -> float:
    index = NeighborIndex(cloud)
    d, _ = index.knn(cloud.points, 2)
    spacing = float(np.median(d[:, 1]))
    return max(6.0 * spacing, 1e-6)


def coarse_register(
    source: PointCloud,
    target: PointCloud,
    config: CoarseConfig | None = None,
    seed: int = 0,
) -> CoarseResult:
    """Full coarse cascade: curvature-aware sampling, FPFH matching,
    translation-invariant measurements, optional clique pruning, then
    scale / rotation / translation estimation.

    Deterministic for a given seed. Raises RegistrationFailed when the
    front end cannot produce enough correspondences.
    """
    config = config or CoarseConfig()
    diagnostics: list = []
    flags: list = []

    def stage(name: str, t0: float, **info):
        diagnostics.append(
            {"stage": name, "wall_time_ms": (time.perf_counter() - t0) * 1000.0, **info}
        )

    t0 = time.perf_counter()
    source = _ensure_features(source, config)
    target = _ensure_features(target, config)
    stage("prepare", t0, input_count=len(source) + len(target))

    t0 = time.perf_counter()
    n_src = min(config.sample_count, len(source))
    src_idx = curvature_weighted_sample(source, n_src, seed=seed)
    if config.target_sample_count is None:
        dst_idx = np.arange(len(target))
    else:
        dst_idx = curvature_weighted_sample(
            target, min(config.target_sample_count, len(target)), seed=seed + 1
        )
    stage("sample", t0, input_count=len(source), inlier_count=int(n_src))

    t0 = time.perf_counter()
    radius_s = config.fpfh_radius_mm or _auto_radius(source)
    radius_t = config.fpfh_radius_mm or _auto_radius(target)
    src_desc = compute_fpfh(source, src_idx, radius_s)
    dst_desc = compute_fpfh(target, dst_idx, radius_t)
    stage("fpfh", t0, input_count=int(n_src + dst_idx.shape[0]))

    t0 = time.perf_counter()
    try:
        corr = match_descriptors(
            src_desc,
            dst_desc,
            tau=config.match_tau,
            source_curvatures=source.curvatures,
            mutual=config.mutual_match,
        )
    except NoCorrespondences as exc:
        raise RegistrationFailed(str(exc)) from exc
    stage("match", t0, input_count=len(src_desc), inlier_count=len(corr))

    t0 = time.perf_counter()
    try:
        tims = build_tims(corr, source, target, config, seed=seed + 2)
    except TooFewCorrespondences as exc:
        raise RegistrationFailed(str(exc)) from exc
    stage("tims", t0, input_count=len(corr), inlier_count=len(tims))

    scale_diag: dict = {}
    t0 = time.perf_counter()
    kappa = estimate_scale_tls(tims, config, diagnostics=scale_diag)
    if scale_diag.get("scale_fallback"):
        flags.append("scale_consensus_fallback")
    stage("scale", t0, input_count=len(tims), **{k: v for k, v in scale_diag.items() if k != "scale_fallback"})

    use_clique = config.clique_pruning
    if use_clique is None:
        use_clique = len(corr) > 50
    if use_clique:
        t0 = time.perf_counter()
        pruned = prune_max_clique(tims, kappa, c=np.sqrt(config.c_sq))
        if len(pruned) >= 3:
            tims = pruned
        else:
            flags.append("clique_too_small")
        stage("clique", t0, input_count=len(corr), inlier_count=int(tims.nodes.shape[0]))

    rot_diag: dict = {}
    t0 = time.perf_counter()
    try:
        rotation = estimate_rotation_gnc(tims, kappa, config, diagnostics=rot_diag)
    except TooFewCorrespondences as exc:
        raise RegistrationFailed(str(exc)) from exc
    if rot_diag.get("gnc_diverged"):
        flags.append("gnc_diverged")
    inlier_mask = rot_diag.pop("rotation_inlier_mask", np.ones(len(tims), dtype=bool))
    resid_norm = np.linalg.norm(
        tims.delta_q - kappa * (tims.delta_p @ rotation.T), axis=1
    )
    stage(
        "rotation",
        t0,
        input_count=len(tims),
        inlier_count=int(inlier_mask.sum()),
        residual_median=float(np.median(resid_norm)),
        **{k: v for k, v in rot_diag.items() if not isinstance(v, np.ndarray)},
    )

    inlier_edges = replace_tims(tims, inlier_mask)
    surviving = np.unique(inlier_edges.edges.reshape(-1)) if len(inlier_edges) else tims.nodes
    inlier_pairs = corr.select(surviving)
    inlier_edges.nodes = surviving

    trans_diag: dict = {}
    t0 = time.perf_counter()
    translation = estimate_translation_tls(
        inlier_pairs, source, target, kappa, rotation, config, diagnostics=trans_diag
    )
    if any(trans_diag.get("translation_fallback", [])):
        flags.append("translation_consensus_fallback")
    final_resid = np.linalg.norm(
        target.points[inlier_pairs.pairs[:, 1]]
        - (kappa * (source.points[inlier_pairs.pairs[:, 0]] @ rotation.T) + translation),
        axis=1,
    )
    stage(
        "translation",
        t0,
        input_count=len(inlier_pairs),
        inlier_count=int(np.sum(final_resid <= config.noise_bound_mm)),
        residual_median=float(np.median(final_resid)),
    )

    return CoarseResult(
        transform=RigidTransform.from_any_matrix(rotation, translation, scale=kappa),
        inlier_edges=inlier_edges,
        inlier_pairs=inlier_pairs,
        diagnostics=diagnostics,
        flags=flags,
    )
