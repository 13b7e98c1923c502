"""End-to-end registration: coarse cascade, scene cropping, local
refinement.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cloud import PointCloud, RigidTransform
from .coarse import CoarseConfig, CoarseResult, coarse_register
from .errors import EmptyCrop
from .geometry import estimate_normals
from .icp import IcpConfig, IcpResult, crop_aabb, icp_refine


@dataclass
class RegistrationReport:
    transform: RigidTransform
    coarse: CoarseResult
    refine: IcpResult
    success: bool

    def to_dict(self) -> dict:
        return {
            **self.transform.to_dict(),
            "success": self.success,
            "refine": self.refine.to_dict(),
            "coarse_flags": list(self.coarse.flags),
            "coarse_stages": self.coarse.diagnostics,
        }


def register_clouds(
    source: PointCloud,
    target: PointCloud,
    coarse_config: CoarseConfig | None = None,
    icp_config: IcpConfig | None = None,
    seed: int = 0,
    crop_margin_mm: float = 20.0,
) -> RegistrationReport:
    """Align source onto target: robust coarse estimate, axis-aligned
    crop of the target around the posed source, then robust
    point-to-plane refinement.
    """
    coarse_config = coarse_config or CoarseConfig()
    icp_config = icp_config or IcpConfig(
        mode="robust-point-to-plane",
        noise_sigma_mm=coarse_config.noise_sigma_mm,
        nu_min_mm=max(coarse_config.noise_sigma_mm, 1e-3),
        max_corr_dist_mm=10.0 * coarse_config.noise_sigma_mm,
    )

    coarse = coarse_register(source, target, coarse_config, seed=seed)

    scene = target
    if scene.normals is None:
        scene = estimate_normals(scene, k=min(coarse_config.normal_k, len(scene) - 1))
    try:
        scene = crop_aabb(scene, source, coarse.transform, crop_margin_mm)
    except EmptyCrop:
        pass  # refine against the full target instead

    refine = icp_refine(source, scene, coarse.transform, icp_config)
    return RegistrationReport(
        transform=refine.transform,
        coarse=coarse,
        refine=refine,
        success=bool(refine.tracking_success),
    )
