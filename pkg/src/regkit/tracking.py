"""Stateful 6-DoF tracking: per-frame fast ICP seeded by a pose
initialization cascade, plus display-rate pose interpolation.

The cascade picks, in order: the previous frame's pose when that frame
succeeded; otherwise the most recent successful pose in the history
window; otherwise the registration pose; otherwise the tracker is lost
for this frame (a distinguished no-pose sentinel, never numeric zeros).
"""

from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import PointCloud, RigidTransform
from .errors import EmptyCrop, NoCorrespondencesInRange, NonFiniteEnergy, StaleFrame
from .geometry import quaternion_from_rotation, rotation_from_quaternion
from .icp import IcpConfig, crop_aabb, icp_fast
from .io import load_point_cloud

BRANCH_PREVIOUS = "previous"
BRANCH_HISTORY = "history"
BRANCH_REGISTRATION = "registration"
BRANCH_NONE = "none"

STATUS_TRACKED = "tracked"
STATUS_RECOVERED = "recovered"
STATUS_REINITIALIZED = "reinitialized"
STATUS_LOST = "lost"

_STATUS_BY_BRANCH = {
    BRANCH_PREVIOUS: STATUS_TRACKED,
    BRANCH_HISTORY: STATUS_RECOVERED,
    BRANCH_REGISTRATION: STATUS_REINITIALIZED,
}


@dataclass
class Frame:
    """One sensor frame: scene cloud plus a strictly increasing timestamp."""

    cloud: PointCloud
    timestamp_ms: float


@dataclass
class TrackedPose:
    pose: RigidTransform | None
    status: str
    rmse_mm: float
    compute_ms: float
    timestamp_ms: float
    init_branch: str

    def to_dict(self) -> dict:
        if self.pose is None:
            rot, trans = None, None
        else:
            d = self.pose.to_dict()
            rot, trans = d["rotation_row_major_9"], d["translation_mm_3"]
        return {
            "timestamp_ms": self.timestamp_ms,
            "status": self.status,
            "rotation_row_major_9": rot,
            "translation_mm_3": trans,
            "rmse_mm": None if not np.isfinite(self.rmse_mm) else self.rmse_mm,
            "compute_ms": self.compute_ms,
        }


@dataclass
class _HistoryEntry:
    timestamp_ms: float
    pose: RigidTransform | None
    success: bool


@dataclass
class TrackerState:
    """Single-owner tracker state; never share mutably."""

    model: PointCloud
    icp_config: IcpConfig
    crop_margin_mm: float = 25.0
    history_depth: int = 30
    registration_pose: RigidTransform | None = None
    registration_latency_ms: float = 0.0
    history: deque = field(default_factory=deque)

    def last_successful(self) -> _HistoryEntry | None:
        for entry in reversed(self.history):
            if entry.success:
                return entry
        return None


def tracker_init(
    model: PointCloud,
    registration_pose: RigidTransform | None = None,
    latency_ms: float = 0.0,
    icp_config: IcpConfig | None = None,
    crop_margin_mm: float = 25.0,
    history_depth: int = 30,
) -> TrackerState:
    """Fresh tracker around a model cloud; history starts empty."""
    config = icp_config or IcpConfig(
        mode="fast-point-to-point",
        max_corr_dist_mm=30.0,
        max_iterations=40,
    )
    state = TrackerState(
        model=model,
        icp_config=config,
        crop_margin_mm=crop_margin_mm,
        history_depth=history_depth,
        registration_pose=registration_pose,
        registration_latency_ms=latency_ms,
    )
    state.history = deque(maxlen=history_depth)
    return state


def set_registration_pose(state: TrackerState, pose: RigidTransform, latency_ms: float = 0.0):
    """Install (or refresh) the registration pose used by the cascade."""
    state.registration_pose = pose
    state.registration_latency_ms = latency_ms


def choose_init_pose(state: TrackerState):
    """The cascade's branch decision as a pure function of recorded flags."""
    if state.history and state.history[-1].success:
        return BRANCH_PREVIOUS, state.history[-1].pose
    recent = state.last_successful()
    if recent is not None:
        return BRANCH_HISTORY, recent.pose
    if state.registration_pose is not None:
        return BRANCH_REGISTRATION, state.registration_pose
    return BRANCH_NONE, None


def track_frame(state: TrackerState, frame: Frame) -> TrackedPose:
    """Estimate the model pose in one frame and update the history."""
    if state.history and frame.timestamp_ms <= state.history[-1].timestamp_ms:
        raise StaleFrame(
            f"frame at {frame.timestamp_ms} ms is not newer than the history"
        )
    start = time.perf_counter()
    branch, init = choose_init_pose(state)

    if branch == BRANCH_NONE:
        state.history.append(_HistoryEntry(frame.timestamp_ms, None, False))
        return TrackedPose(
            pose=None,
            status=STATUS_LOST,
            rmse_mm=float("inf"),
            compute_ms=(time.perf_counter() - start) * 1000.0,
            timestamp_ms=frame.timestamp_ms,
            init_branch=branch,
        )

    try:
        scene = crop_aabb(frame.cloud, state.model, init, state.crop_margin_mm)
        result = icp_fast(state.model, scene, init, state.icp_config)
        success = result.tracking_success
        pose = result.transform
        rmse = result.inlier_rmse_mm
    except (EmptyCrop, NoCorrespondencesInRange, NonFiniteEnergy):
        success = False
        pose = None
        rmse = float("inf")

    state.history.append(
        _HistoryEntry(frame.timestamp_ms, pose if success else None, success)
    )
    return TrackedPose(
        pose=pose if success else None,
        status=_STATUS_BY_BRANCH[branch] if success else STATUS_LOST,
        rmse_mm=rmse if success else float("inf"),
        compute_ms=(time.perf_counter() - start) * 1000.0,
        timestamp_ms=frame.timestamp_ms,
        init_branch=branch,
    )


def interpolate_pose(
    a: RigidTransform, t_a: float, b: RigidTransform, t_b: float, t: float
) -> RigidTransform:
    """Pose between two timestamps: linear translation, shortest-arc
    spherical rotation interpolation. ``t`` is clamped to [t_a, t_b], so
    endpoints are reproduced exactly and there is no extrapolation."""
    if not t_a < t_b:
        raise ValueError("t_a must be strictly less than t_b")
    s = (t - t_a) / (t_b - t_a)
    s = min(max(s, 0.0), 1.0)
    if s == 0.0:
        return RigidTransform(a.rotation.copy(), a.translation.copy(), a.scale)
    if s == 1.0:
        return RigidTransform(b.rotation.copy(), b.translation.copy(), b.scale)

    q1 = quaternion_from_rotation(a.rotation)
    q2 = quaternion_from_rotation(b.rotation)
    if q1 @ q2 < 0:
        q2 = -q2
    dot = min(max(float(q1 @ q2), -1.0), 1.0)
    theta = np.arccos(dot)
    if theta < 1e-9:
        q = (1.0 - s) * q1 + s * q2
    else:
        q = (np.sin((1.0 - s) * theta) * q1 + np.sin(s * theta) * q2) / np.sin(theta)
    q = q / np.linalg.norm(q)
    return RigidTransform(
        rotation=rotation_from_quaternion(q),
        translation=(1.0 - s) * a.translation + s * b.translation,
        scale=(1.0 - s) * a.scale + s * b.scale,
    )


def replay_sequence(state: TrackerState, frames) -> tuple:
    """Track an ordered frame stream; returns (poses, timing report)."""
    poses = []
    for frame in frames:
        poses.append(track_frame(state, frame))
    times = [p.compute_ms for p in poses]
    report = {
        "frames": len(poses),
        "median_compute_ms": float(np.median(times)) if times else 0.0,
        "max_compute_ms": float(np.max(times)) if times else 0.0,
        "tracked_frames": sum(1 for p in poses if p.status != STATUS_LOST),
    }
    return poses, report


def read_frame_stream(directory):
    """Frames from a directory with a ``frames.index`` file.

    Each index line is ``<filename> <timestamp_ms>``. Clouds are loaded
    lazily, one per yielded frame.
    """
    directory = Path(directory)
    index = directory / "frames.index"
    with open(index) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, stamp = line.split()
            yield Frame(
                cloud=load_point_cloud(directory / name),
                timestamp_ms=float(stamp),
            )


def write_pose_stream(poses, path) -> None:
    """JSON-lines pose stream, one object per frame."""
    with open(path, "w") as fh:
        for pose in poses:
            fh.write(json.dumps(pose.to_dict()) + "\n")
