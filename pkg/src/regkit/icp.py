"""Local refinement: robust point-to-plane ICP, tracking-grade
point-to-point ICP with safeguarded Anderson acceleration, and
axis-aligned scene cropping.

Within each fixed robust-kernel width, candidate steps are accepted only
when they do not increase the robust energy, so the recorded energy
trace is non-increasing per stage by construction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, RigidTransform
from .errors import EmptyCrop, NoCorrespondencesInRange, NonFiniteEnergy
from .geometry import kabsch_align, rodrigues, rotation_vector


@dataclass(frozen=True)
class IcpConfig:
    """Shared configuration for both ICP modes.

    The robust kernel is Welsch with geometric annealing of the width nu
    from the initial median residual down to nu_min_mm; set
    robust_kernel="none" for classical unweighted behavior.
    """

    mode: str = "robust-point-to-plane"  # or "fast-point-to-point"
    max_iterations: int = 60
    rot_delta_deg: float = 0.01
    trans_delta_mm: float = 0.01
    nu_min_mm: float = 0.33
    nu_anneal_factor: float = 2.0
    max_corr_dist_mm: float = 3.3
    anderson_depth: int = 5
    budget_ms: float | None = 250.0
    robust_kernel: str = "welsch"  # or "none"
    noise_sigma_mm: float = 0.33
    min_inlier_fraction: float = 0.3

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("rot_delta_deg", "trans_delta_mm", "nu_min_mm", "max_corr_dist_mm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.robust_kernel not in ("welsch", "none"):
            raise ValueError("robust_kernel must be 'welsch' or 'none'")


@dataclass
class IcpResult:
    transform: RigidTransform
    iterations: int
    energy: float
    inlier_rmse_mm: float
    inlier_fraction: float
    converged: bool
    budget_exceeded: bool = False
    energy_trace: list = field(default_factory=list)  # (stage_index, energy)
    tracking_success: bool = False

    def to_dict(self) -> dict:
        return {
            **self.transform.to_dict(),
            "iterations": self.iterations,
            "energy": self.energy,
            "inlier_rmse_mm": self.inlier_rmse_mm,
            "inlier_fraction": self.inlier_fraction,
            "converged": self.converged,
            "budget_exceeded": self.budget_exceeded,
            "tracking_success": self.tracking_success,
        }


def crop_aabb(
    scene: PointCloud, model: PointCloud, pose: RigidTransform, margin: float
) -> PointCloud:
    """Scene points inside the axis-aligned box of the posed model,
    expanded by ``margin`` on every axis. The box is closed."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    posed = pose.apply_points(model.points)
    lo = posed.min(axis=0) - margin
    hi = posed.max(axis=0) + margin
    mask = np.all((scene.points >= lo) & (scene.points <= hi), axis=1)
    if not np.any(mask):
        raise EmptyCrop("no scene points inside the model bounding box")
    return scene.select(mask)


def _welsch_rho(r: np.ndarray, nu: float) -> np.ndarray:
    return nu * nu * (1.0 - np.exp(-(r * r) / (nu * nu)))


def _welsch_weight(r: np.ndarray, nu: float) -> np.ndarray:
    return np.exp(-(r * r) / (nu * nu))


def _reorthonormalize(rot: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(rot)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u = u.copy()
        u[:, -1] *= -1.0
        out = u @ vt
    return out


def _finalize(
    points: np.ndarray,
    tree: cKDTree,
    rot: np.ndarray,
    trans: np.ndarray,
    scale: float,
    config: IcpConfig,
    iterations: int,
    energy: float,
    converged: bool,
    budget_exceeded: bool,
    trace: list,
) -> IcpResult:
    moved = (scale * points) @ rot.T + trans
    d, _ = tree.query(moved)
    inlier = d <= config.max_corr_dist_mm
    frac = float(inlier.mean())
    rmse = float(np.sqrt(np.mean(d[inlier] ** 2))) if np.any(inlier) else np.inf
    success = (
        converged
        and frac >= config.min_inlier_fraction
        and rmse <= 3.0 * config.noise_sigma_mm
    )
    return IcpResult(
        transform=RigidTransform.from_any_matrix(rot, trans, scale=scale),
        iterations=iterations,
        energy=energy,
        inlier_rmse_mm=rmse,
        inlier_fraction=frac,
        converged=converged,
        budget_exceeded=budget_exceeded,
        energy_trace=trace,
        tracking_success=success,
    )


def _nu_schedule(initial_resid: np.ndarray, config: IcpConfig) -> list:
    if config.robust_kernel == "none":
        return [np.inf]
    nu0 = max(float(np.median(np.abs(initial_resid))), config.nu_min_mm)
    schedule = [nu0]
    while schedule[-1] > config.nu_min_mm * (1.0 + 1e-9):
        schedule.append(max(schedule[-1] / config.nu_anneal_factor, config.nu_min_mm))
    return schedule


def icp_refine(
    source: PointCloud,
    target_scene: PointCloud,
    init: RigidTransform,
    config: IcpConfig | None = None,
) -> IcpResult:
    """Welsch-weighted point-to-plane refinement.

    Each iteration matches nearest neighbors within the maximum
    correspondence distance, solves the small-angle linearization of the
    point-to-plane objective, and re-orthonormalizes the rotation. The
    kernel width anneals geometrically; a step that would increase the
    stage energy is back-tracked and, failing that, ends the stage.
    """
    config = config or IcpConfig(mode="robust-point-to-plane")
    if target_scene.normals is None:
        raise ValueError("target scene has no normals; run estimate_normals first")
    valid = target_scene.valid_normal_mask()
    if not np.any(valid):
        raise ValueError("target scene has no valid normals")
    q_pts = target_scene.points[valid]
    q_nrm = target_scene.normals[valid]
    tree = cKDTree(q_pts)

    scale = init.scale
    rot = init.rotation.copy()
    trans = init.translation.copy()
    src = source.points

    def residuals(rot_c, trans_c):
        moved = (scale * src) @ rot_c.T + trans_c
        d, j = tree.query(moved)
        in_range = d <= config.max_corr_dist_mm
        if not np.any(in_range):
            raise NoCorrespondencesInRange(
                f"no neighbors within {config.max_corr_dist_mm} mm"
            )
        r = np.einsum("ij,ij->i", q_nrm[j], moved - q_pts[j])
        return moved, j, r, in_range

    def stage_energy(r, in_range, nu):
        if config.robust_kernel == "none":
            e = float(np.sum(r[in_range] ** 2))
        else:
            e = float(np.sum(_welsch_rho(r, nu)))
        if not np.isfinite(e):
            raise NonFiniteEnergy("ICP energy is not finite; bad initial pose?")
        return e

    _, _, r0, in0 = residuals(rot, trans)
    schedule = _nu_schedule(r0[in0], config)

    trace: list = []
    iterations = 0
    converged_last_stage = False
    rot_tol = np.radians(config.rot_delta_deg)

    for stage_idx, nu in enumerate(schedule):
        moved, j, r, in_range = residuals(rot, trans)
        energy = stage_energy(r, in_range, nu)
        trace.append((stage_idx, energy))
        converged_last_stage = False
        while iterations < config.max_iterations:
            p = moved[in_range]
            n = q_nrm[j[in_range]]
            b = -r[in_range]
            if config.robust_kernel == "none":
                w = np.ones(p.shape[0])
            else:
                w = _welsch_weight(r[in_range], nu)
            sw = np.sqrt(w)
            jac = np.hstack([np.cross(p, n), n]) * sw[:, None]
            rhs = b * sw
            x, *_ = np.linalg.lstsq(jac, rhs, rcond=None)
            if not np.all(np.isfinite(x)):
                raise NonFiniteEnergy("linearized solve produced non-finite update")

            accepted = False
            for back in range(7):
                step = x * (0.5**back)
                d_rot = rodrigues(step[:3])
                rot_c = _reorthonormalize(d_rot @ rot)
                trans_c = d_rot @ trans + step[3:]
                try:
                    moved_c, j_c, r_c, in_c = residuals(rot_c, trans_c)
                except NoCorrespondencesInRange:
                    continue
                energy_c = stage_energy(r_c, in_c, nu)
                if energy_c <= energy:
                    accepted = True
                    break
            if not accepted:
                break
            rot, trans = rot_c, trans_c
            moved, j, r, in_range = moved_c, j_c, r_c, in_c
            energy = energy_c
            iterations += 1
            trace.append((stage_idx, energy))
            if (
                np.linalg.norm(step[:3]) < rot_tol
                and np.linalg.norm(step[3:]) < config.trans_delta_mm
            ):
                converged_last_stage = True
                break
        if iterations >= config.max_iterations and not (
            converged_last_stage and stage_idx == len(schedule) - 1
        ):
            converged_last_stage = False
            break

    converged = converged_last_stage
    return _finalize(
        src, tree, rot, trans, scale, config, iterations, trace[-1][1], converged, False, trace
    )


def _encode(rot: np.ndarray, trans: np.ndarray) -> np.ndarray:
    return np.concatenate([rotation_vector(rot), trans])


def _decode(u: np.ndarray):
    return rodrigues(u[:3]), u[3:].copy()


def icp_fast(
    source: PointCloud,
    target_scene: PointCloud,
    init: RigidTransform,
    config: IcpConfig | None = None,
) -> IcpResult:
    """Point-to-point robust ICP accelerated with Anderson extrapolation.

    The pose sequence is treated as a fixed-point iteration; an Anderson
    candidate (depth config.anderson_depth) replaces the plain step only
    when it does not increase the stage energy. A wall-clock budget
    (config.budget_ms) returns the best pose so far with a flag.
    """
    config = config or IcpConfig(mode="fast-point-to-point")
    tree = cKDTree(target_scene.points)
    scale = init.scale
    rot = init.rotation.copy()
    trans = init.translation.copy()
    src = source.points
    start = time.perf_counter()

    def distances(rot_c, trans_c):
        moved = (scale * src) @ rot_c.T + trans_c
        d, j = tree.query(moved)
        return moved, d, j

    def stage_energy(d, nu):
        if config.robust_kernel == "none":
            e = float(np.sum(d[d <= config.max_corr_dist_mm] ** 2))
        else:
            e = float(np.sum(_welsch_rho(d, nu)))
        if not np.isfinite(e):
            raise NonFiniteEnergy("ICP energy is not finite")
        return e

    _, d0, _ = distances(rot, trans)
    schedule = _nu_schedule(d0[d0 <= config.max_corr_dist_mm]
                            if np.any(d0 <= config.max_corr_dist_mm) else d0, config)

    trace: list = []
    iterations = 0
    converged_last_stage = False
    budget_exceeded = False
    rot_tol = np.radians(config.rot_delta_deg)

    for stage_idx, nu in enumerate(schedule):
        hist_u: list = []
        hist_g: list = []
        _, d, j = distances(rot, trans)
        energy = stage_energy(d, nu)
        trace.append((stage_idx, energy))
        converged_last_stage = False
        while iterations < config.max_iterations:
            if (
                config.budget_ms is not None
                and (time.perf_counter() - start) * 1000.0 > config.budget_ms
            ):
                budget_exceeded = True
                break

            in_range = d <= config.max_corr_dist_mm
            if not np.any(in_range):
                raise NoCorrespondencesInRange(
                    f"no neighbors within {config.max_corr_dist_mm} mm"
                )
            if config.robust_kernel == "none":
                w = np.ones(int(in_range.sum()))
            else:
                w = _welsch_weight(d[in_range], nu)
            fit = kabsch_align(
                scale * src[in_range], target_scene.points[j[in_range]], weights=w
            )
            u_curr = _encode(rot, trans)
            u_plain = _encode(fit.rotation, fit.translation)

            hist_u.append(u_curr)
            hist_g.append(u_plain)
            if len(hist_u) > config.anderson_depth + 1:
                hist_u.pop(0)
                hist_g.pop(0)

            candidates = [u_plain]
            if len(hist_u) >= 2 and config.anderson_depth > 0:
                f_hist = [g - u for g, u in zip(hist_g, hist_u)]
                df = np.stack([f_hist[i + 1] - f_hist[i] for i in range(len(f_hist) - 1)], axis=1)
                dg = np.stack([hist_g[i + 1] - hist_g[i] for i in range(len(hist_g) - 1)], axis=1)
                gamma, *_ = np.linalg.lstsq(df, f_hist[-1], rcond=None)
                u_aa = u_plain - dg @ gamma
                if np.all(np.isfinite(u_aa)):
                    candidates.insert(0, u_aa)

            best = None
            for u_cand in candidates:
                rot_c, trans_c = _decode(u_cand)
                rot_c = _reorthonormalize(rot_c)
                _, d_c, j_c = distances(rot_c, trans_c)
                energy_c = stage_energy(d_c, nu)
                if energy_c <= energy and (best is None or energy_c < best[0]):
                    best = (energy_c, rot_c, trans_c, d_c, j_c, u_cand)
            if best is None:
                break
            energy, rot, trans, d, j, u_acc = best
            iterations += 1
            trace.append((stage_idx, energy))
            step = u_acc - u_curr
            if (
                np.linalg.norm(step[:3]) < rot_tol
                and np.linalg.norm(step[3:]) < config.trans_delta_mm
            ):
                converged_last_stage = True
                break
        if budget_exceeded or (
            iterations >= config.max_iterations
            and not (converged_last_stage and stage_idx == len(schedule) - 1)
        ):
            converged_last_stage = False
            break

    return _finalize(
        src,
        tree,
        rot,
        trans,
        scale,
        config,
        iterations,
        trace[-1][1],
        converged_last_stage,
        budget_exceeded,
        trace,
    )
