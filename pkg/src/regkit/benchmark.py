"""Synthetic benchmark: test-case generation, method evaluation, and
composite accuracy/runtime scoring, with a plugin interface for external
registration methods.
"""

from __future__ import annotations

import configparser
import csv
import importlib
import inspect
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, RigidTransform
from .coarse import CoarseConfig
from .errors import ConfigError, OverlapUnachievable
from .geometry import alignment_rmse, rodrigues, voxel_downsample
from .icp import IcpConfig, icp_fast, icp_refine
from .io import load_point_cloud
from .meshes import BUILTIN_MESHES, rescale_to_diagonal
from .pipeline import register_clouds


@dataclass
class TestCase:
    """One synthetic registration problem with known ground truth."""

    source: PointCloud  # noisy, partial, displaced sensor-like cloud
    target: PointCloud  # clean downsampled model
    ground_truth: RigidTransform  # maps source back onto the target
    clean_source: PointCloud  # pre-noise source positions at target pose
    noise_rms_mm: float
    params: dict


@dataclass
class BenchmarkRecord:
    method: str
    mesh_id: str
    overlap: float
    rotation_deg: float
    noise_sigma: float
    partial_fraction: float
    seed: int
    rmse_mm: float
    runtime_ms: float
    success: bool
    error: str = ""


@dataclass
class ScoreTable:
    rows: list  # dicts: method, median_rmse_mm, median_runtime_ms, score
    lam: float
    e_max: float
    t_max: float
    flags: list = field(default_factory=list)

    def score_of(self, method: str) -> float:
        for row in self.rows:
            if row["method"] == method:
                return row["score"]
        raise KeyError(method)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "e_max_mm": self.e_max,
            "t_max_ms": self.t_max,
            "rows": self.rows,
            "flags": self.flags,
        }


def lower_median(values) -> float:
    """Deterministic median: the lower of the two middle values."""
    arr = np.sort(np.asarray(values, dtype=np.float64))
    if arr.size == 0:
        raise ValueError("median of empty sequence")
    return float(arr[(arr.size - 1) // 2])


def _measured_overlap(target_points, crop_points, radius: float) -> float:
    d, _ = cKDTree(crop_points).query(target_points)
    return float(np.mean(d <= radius))


def generate_test_case(
    mesh: PointCloud,
    overlap: float,
    rotation_deg: float,
    noise_sigma: float,
    partial_fraction: float,
    seed: int,
    mesh_id: str = "",
) -> TestCase:
    """Build a registration problem from a mesh-like cloud.

    The mesh is normalized to a 200 mm bounding-box diagonal and
    downsampled to ~8k points (the target). The source is a half-space
    crop whose plane offset is bisected until the shared-support
    fraction is within +/-2% of ``overlap``, thinned to
    ``partial_fraction`` by random selection, perturbed with isotropic
    Gaussian noise, then displaced by a rotation of exactly
    ``rotation_deg`` about a random axis plus a random translation
    within +/-50 mm. The stored ground truth is the inverse motion.
    """
    if not 0.0 < overlap <= 1.0:
        raise ValueError("overlap must be in (0, 1]")
    if rotation_deg < 0:
        raise ValueError("rotation_deg must be >= 0")
    if not 0.0 < partial_fraction <= 1.0:
        raise ValueError("partial_fraction must be in (0, 1]")
    if len(mesh) < 1000:
        raise ValueError("mesh must have at least 1000 points")

    rng = np.random.default_rng(seed)
    normalized = rescale_to_diagonal(mesh, 200.0)
    target = voxel_downsample(normalized, 8000)
    tp = target.points

    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    if overlap >= 1.0:
        crop_idx = np.arange(len(target))
    else:
        proj = tp @ direction
        support_radius = max(3.0 * noise_sigma, 1e-6)
        lo, hi = float(proj.min()) - 1e-9, float(proj.max()) + 1e-9
        crop_idx = None
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            mask = proj >= mid
            if not np.any(mask):
                hi = mid
                continue
            measured = _measured_overlap(tp, tp[mask], support_radius)
            if abs(measured - overlap) <= 0.02:
                crop_idx = np.flatnonzero(mask)
                break
            if measured > overlap:
                lo = mid
            else:
                hi = mid
        if crop_idx is None:
            raise OverlapUnachievable(
                f"could not reach overlap {overlap:.2f} on mesh {mesh_id or mesh.id!r}"
            )

    n_keep = max(int(round(partial_fraction * crop_idx.size)), 3)
    keep = np.sort(rng.choice(crop_idx.size, size=n_keep, replace=False))
    clean = tp[crop_idx[keep]]

    noise = rng.normal(0.0, noise_sigma, clean.shape) if noise_sigma > 0 else np.zeros_like(clean)
    noisy = clean + noise

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    rot_move = rodrigues(axis * np.radians(rotation_deg))
    t_move = rng.uniform(-50.0, 50.0, 3)
    source_points = noisy @ rot_move.T + t_move

    gt = RigidTransform(rot_move.T, -(rot_move.T @ t_move))
    mesh_label = mesh_id or mesh.id
    return TestCase(
        source=PointCloud(source_points, id=f"{mesh_label}-src-{seed}"),
        target=target,
        ground_truth=gt,
        clean_source=PointCloud(clean, id=f"{mesh_label}-clean-{seed}"),
        noise_rms_mm=float(np.sqrt(np.mean(np.sum(noise * noise, axis=1)))),
        params={
            "overlap_ratio": overlap,
            "rotation_deg": rotation_deg,
            "noise_sigma": noise_sigma,
            "partial_fraction": partial_fraction,
            "seed": seed,
            "mesh_id": mesh_label,
        },
    )


def _call_method(method, case: TestCase) -> RigidTransform:
    try:
        params = inspect.signature(method).parameters
        takes_seed = "seed" in params or any(
            p.kind is inspect.Parameter.VAR_KEYWORD for p in params.values()
        )
    except (TypeError, ValueError):
        takes_seed = False
    if takes_seed:
        return method(case.source, case.target, seed=case.params["seed"])
    return method(case.source, case.target)


def evaluate_method(
    method,
    cases,
    success_threshold_mm: float = 5.0,
    name: str | None = None,
) -> list:
    """Run a registration callable over test cases.

    The plugin contract is ``method(source, target) -> RigidTransform``
    (an optional ``seed`` keyword is passed through when accepted).
    Accuracy is the index-matched RMSE of the transformed source against
    the pre-noise source at target pose; exceptions become failed
    records instead of crashing the run.
    """
    label = name or getattr(method, "__name__", "method")
    records = []
    for case in cases:
        start = time.perf_counter()
        error = ""
        try:
            transform = _call_method(method, case)
            runtime_ms = (time.perf_counter() - start) * 1000.0
            rmse = alignment_rmse(
                case.source, case.clean_source, transform, pairing="index-matched"
            )
        except Exception as exc:  # plugin failures are data, not crashes
            runtime_ms = (time.perf_counter() - start) * 1000.0
            rmse = float("inf")
            error = f"{type(exc).__name__}: {exc}"
        records.append(
            BenchmarkRecord(
                method=label,
                mesh_id=case.params["mesh_id"],
                overlap=case.params["overlap_ratio"],
                rotation_deg=case.params["rotation_deg"],
                noise_sigma=case.params["noise_sigma"],
                partial_fraction=case.params["partial_fraction"],
                seed=case.params["seed"],
                rmse_mm=float(rmse),
                runtime_ms=max(runtime_ms, 1e-9),
                success=bool(np.isfinite(rmse) and rmse < success_threshold_mm),
                error=error,
            )
        )
    return records


def composite_score(records, lam: float) -> ScoreTable:
    """Blend per-method median RMSE and runtime into a 0-100 score.

    score = 100 * (1 - (lam * E/E_max + (1 - lam) * T/T_max)) where E, T
    are per-method medians and E_max, T_max the maxima across methods.
    A zero maximum contributes nothing (all methods perfect on that
    axis). A single-method table scores 0 by construction and is
    flagged.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    by_method: dict = {}
    for rec in records:
        by_method.setdefault(rec.method, []).append(rec)
    if not by_method:
        raise ValueError("no records to score")

    medians = {}
    for method, recs in by_method.items():
        e = lower_median([r.rmse_mm for r in recs])
        t = lower_median([r.runtime_ms for r in recs])
        if not (np.isfinite(e) and np.isfinite(t)):
            raise ValueError(f"method {method!r} has a non-finite median")
        medians[method] = (e, t)

    e_max = max(e for e, _ in medians.values())
    t_max = max(t for _, t in medians.values())
    rows = []
    for method, (e, t) in medians.items():
        e_term = 0.0 if e_max == 0 else lam * e / e_max
        t_term = 0.0 if t_max == 0 else (1.0 - lam) * t / t_max
        rows.append(
            {
                "method": method,
                "median_rmse_mm": e,
                "median_runtime_ms": t,
                "score": 100.0 * (1.0 - (e_term + t_term)),
            }
        )
    flags = ["single_method_scores_zero"] if len(rows) == 1 else []
    return ScoreTable(rows=rows, lam=lam, e_max=e_max, t_max=t_max, flags=flags)


# ---------------------------------------------------------------------------
# Built-in methods and the suite runner
# ---------------------------------------------------------------------------


def make_builtin_method(name: str, noise_sigma: float):
    """Registration callables wired to the suite's noise level.

    The fast method runs unbudgeted here so records are deterministic.
    """
    coarse_cfg = CoarseConfig(noise_sigma_mm=max(noise_sigma, 1e-3))
    refine_cfg = IcpConfig(
        mode="robust-point-to-plane",
        noise_sigma_mm=max(noise_sigma, 1e-3),
        nu_min_mm=max(noise_sigma, 1e-3),
        max_corr_dist_mm=max(10.0 * noise_sigma, 1.0),
    )
    fast_cfg = IcpConfig(
        mode="fast-point-to-point",
        noise_sigma_mm=max(noise_sigma, 1e-3),
        nu_min_mm=max(noise_sigma, 1e-3),
        max_corr_dist_mm=max(30.0 * noise_sigma, 20.0),
        budget_ms=None,
        max_iterations=60,
    )

    if name == "coarse_fine":

        def coarse_fine(source, target, seed=0):
            return register_clouds(
                source, target, coarse_cfg, refine_cfg, seed=seed
            ).transform

        return coarse_fine
    if name == "fast_icp":

        def fast_icp(source, target, seed=0):
            return icp_fast(source, target, RigidTransform.identity(), fast_cfg).transform

        return fast_icp
    if name == "icp_refine":

        def refine_only(source, target, seed=0):
            from .geometry import estimate_normals

            scene = target if target.normals is not None else estimate_normals(target)
            return icp_refine(source, scene, RigidTransform.identity(), refine_cfg).transform

        return refine_only
    raise ConfigError(f"unknown builtin method {name!r}")


BUILTIN_METHOD_NAMES = ("coarse_fine", "fast_icp", "icp_refine")


@dataclass
class SuiteConfig:
    meshes: dict  # name -> PointCloud factory spec ("builtin" or path)
    overlaps: list
    rotations_deg: list
    noise_sigma: float
    partial_fraction: float
    seeds: list
    methods: dict  # name -> "builtin" or "module:callable"
    lambdas: dict  # label -> weight
    success_threshold_mm: float = 5.0


def _floats(raw: str, section: str, key: str) -> list:
    try:
        return [float(tok) for tok in raw.split()]
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: expected numbers, got {raw!r}") from exc


def parse_suite_config(path) -> SuiteConfig:
    """Read the plain key-value/section benchmark configuration."""
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not read:
        raise ConfigError(f"{path}: file not found or unreadable")

    for section in ("meshes", "grid", "methods"):
        if not parser.has_section(section):
            raise ConfigError(f"{path}: missing [{section}] section")

    meshes = dict(parser.items("meshes"))
    if not meshes:
        raise ConfigError(f"{path}: [meshes] lists no meshes")
    for name, spec in meshes.items():
        if spec.strip().lower() == "builtin" and name not in BUILTIN_MESHES:
            raise ConfigError(f"{path}: unknown builtin mesh {name!r}")

    grid = parser["grid"]
    overlaps = _floats(grid.get("overlaps", ""), "grid", "overlaps")
    rotations = _floats(grid.get("rotations_deg", ""), "grid", "rotations_deg")
    if not overlaps or not rotations:
        raise ConfigError(f"{path}: [grid] needs overlaps and rotations_deg")

    methods = dict(parser.items("methods"))
    if not methods:
        raise ConfigError(f"{path}: [methods] lists no methods")
    for name, spec in methods.items():
        if spec.strip().lower() == "builtin" and name not in BUILTIN_METHOD_NAMES:
            raise ConfigError(f"{path}: unknown builtin method {name!r}")

    suite = parser["suite"] if parser.has_section("suite") else {}
    seeds = [int(s) for s in str(suite.get("seeds", "0")).split()]
    return SuiteConfig(
        meshes=meshes,
        overlaps=overlaps,
        rotations_deg=rotations,
        noise_sigma=float(grid.get("noise_sigma", 0.33)),
        partial_fraction=float(grid.get("partial_fraction", 0.5)),
        seeds=seeds,
        methods=methods,
        lambdas={
            "registration": float(suite.get("lambda_registration", 0.7)),
            "tracking": float(suite.get("lambda_tracking", 0.15)),
        },
        success_threshold_mm=float(suite.get("success_threshold_mm", 5.0)),
    )


def _resolve_mesh(name: str, spec: str) -> PointCloud:
    spec = spec.strip()
    if spec.lower() == "builtin":
        return BUILTIN_MESHES[name]()
    return load_point_cloud(spec)


def _resolve_method(name: str, spec: str, noise_sigma: float):
    spec = spec.strip()
    if spec.lower() == "builtin":
        return make_builtin_method(name, noise_sigma)
    if ":" not in spec:
        raise ConfigError(f"method {name!r}: expected 'builtin' or 'module:callable'")
    module_name, attr = spec.rsplit(":", 1)
    try:
        module = importlib.import_module(module_name)
        return getattr(module, attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"method {name!r}: cannot import {spec!r} ({exc})") from exc


def run_suite(config_path, out_dir) -> dict:
    """Run the whole grid and write records plus score tables.

    Outputs records.csv, scores_<label>.csv per lambda, and a
    summary.json mirroring the score tables. Deterministic for fixed
    seeds except the runtime_ms column.
    """
    config = parse_suite_config(config_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    cases = []
    for mesh_name, mesh_spec in config.meshes.items():
        mesh = _resolve_mesh(mesh_name, mesh_spec)
        for overlap in config.overlaps:
            for rotation in config.rotations_deg:
                for seed in config.seeds:
                    cases.append(
                        generate_test_case(
                            mesh,
                            overlap,
                            rotation,
                            config.noise_sigma,
                            config.partial_fraction,
                            seed,
                            mesh_id=mesh_name,
                        )
                    )

    records = []
    for method_name, method_spec in config.methods.items():
        method = _resolve_method(method_name, method_spec, config.noise_sigma)
        records.extend(
            evaluate_method(
                method, cases, config.success_threshold_mm, name=method_name
            )
        )

    records_path = out_dir / "records.csv"
    with open(records_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "method",
                "mesh_id",
                "overlap",
                "rotation_deg",
                "sigma",
                "partial",
                "seed",
                "rmse_mm",
                "runtime_ms",
                "success",
            ]
        )
        for r in records:
            writer.writerow(
                [
                    r.method,
                    r.mesh_id,
                    f"{r.overlap:g}",
                    f"{r.rotation_deg:g}",
                    f"{r.noise_sigma:g}",
                    f"{r.partial_fraction:g}",
                    r.seed,
                    f"{r.rmse_mm:.9g}",
                    f"{r.runtime_ms:.3f}",
                    int(r.success),
                ]
            )

    summary = {"records_csv": str(records_path), "tables": {}}
    for label, lam in config.lambdas.items():
        table = composite_score(records, lam)
        table_path = out_dir / f"scores_{label}.csv"
        with open(table_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "median_rmse_mm", "median_runtime_ms", "score"])
            for row in table.rows:
                writer.writerow(
                    [
                        row["method"],
                        f"{row['median_rmse_mm']:.9g}",
                        f"{row['median_runtime_ms']:.3f}",
                        f"{row['score']:.4f}",
                    ]
                )
        summary["tables"][label] = table.to_dict()

    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary
