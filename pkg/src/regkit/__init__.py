"""Markerless rigid registration and 6-DoF tracking for noisy,
partial, outlier-contaminated depth-sensor point clouds.
"""

from .cloud import Plane, PointCloud, RigidTransform
from .coarse import (
    CoarseConfig,
    CoarseResult,
    TimSet,
    build_tims,
    coarse_register,
    estimate_rotation_gnc,
    estimate_scale_tls,
    estimate_translation_tls,
    prune_max_clique,
)
from .correction import (
    CorrectionModel,
    DepthErrorProfile,
    RegionSpec,
    apply_region_correction,
    fit_region_correction,
    pair_ground_truth,
    profile_depth_error,
)
from .features import (
    CorrespondenceSet,
    DescriptorSet,
    compute_fpfh,
    curvature_weighted_sample,
    match_descriptors,
)
from .geometry import (
    NeighborIndex,
    alignment_rmse,
    apply_transform,
    estimate_curvature,
    estimate_normals,
    fit_plane_least_squares,
    kabsch_align,
    project_onto_plane,
    voxel_downsample,
)
from .icp import IcpConfig, IcpResult, crop_aabb, icp_fast, icp_refine
from .io import load_point_cloud, load_reference_points, save_point_cloud_ply
from .kernels import KERNEL_BACKEND
from .pipeline import RegistrationReport, register_clouds
from .tracking import (
    Frame,
    TrackedPose,
    TrackerState,
    interpolate_pose,
    replay_sequence,
    set_registration_pose,
    track_frame,
    tracker_init,
)

__version__ = "0.1.0"

__all__ = [
    "Plane",
    "PointCloud",
    "RigidTransform",
    "CoarseConfig",
    "CoarseResult",
    "TimSet",
    "build_tims",
    "coarse_register",
    "estimate_rotation_gnc",
    "estimate_scale_tls",
    "estimate_translation_tls",
    "prune_max_clique",
    "CorrectionModel",
    "DepthErrorProfile",
    "RegionSpec",
    "apply_region_correction",
    "fit_region_correction",
    "pair_ground_truth",
    "profile_depth_error",
    "CorrespondenceSet",
    "DescriptorSet",
    "compute_fpfh",
    "curvature_weighted_sample",
    "match_descriptors",
    "NeighborIndex",
    "alignment_rmse",
    "apply_transform",
    "estimate_curvature",
    "estimate_normals",
    "fit_plane_least_squares",
    "kabsch_align",
    "project_onto_plane",
    "voxel_downsample",
    "IcpConfig",
    "IcpResult",
    "crop_aabb",
    "icp_fast",
    "icp_refine",
    "load_point_cloud",
    "load_reference_points",
    "save_point_cloud_ply",
    "KERNEL_BACKEND",
    "RegistrationReport",
    "register_clouds",
    "Frame",
    "TrackedPose",
    "TrackerState",
    "interpolate_pose",
    "replay_sequence",
    "set_registration_pose",
    "track_frame",
    "tracker_init",
    "__version__",
]
