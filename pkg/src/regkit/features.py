"""Keypoint sampling, FPFH descriptors, and weighted correspondence
generation for the coarse registration front end.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud
from .errors import NoCorrespondences
from .kernels import pair_feature_histograms

N_BINS = 11
DESCRIPTOR_SIZE = 3 * N_BINS


@dataclass
class DescriptorSet:
    """33-bin FPFH descriptors for a sampled subset of a cloud."""

    descriptors: np.ndarray  # (S, 33)
    source_indices: np.ndarray  # (S,) indices into the parent cloud
    isolated: np.ndarray  # (S,) True where no neighbor was in range

    def __post_init__(self):
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        self.source_indices = np.asarray(self.source_indices, dtype=np.int64)
        self.isolated = np.asarray(self.isolated, dtype=bool)
        if self.descriptors.shape != (self.source_indices.shape[0], DESCRIPTOR_SIZE):
            raise ValueError("descriptor array must be (S, 33)")
        if np.any(self.descriptors < 0):
            raise ValueError("descriptors must be non-negative")

    def __len__(self) -> int:
        return int(self.source_indices.shape[0])


@dataclass
class CorrespondenceSet:
    """Index pairs (source, target) with positive weights."""

    pairs: np.ndarray  # (M, 2) int
    weights: np.ndarray  # (M,) > 0
    distances: np.ndarray | None = None  # descriptor distances, if known
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.pairs.shape[0] != self.weights.shape[0]:
            raise ValueError("pairs and weights must have equal length")
        if np.any(~np.isfinite(self.weights)) or np.any(self.weights <= 0):
            raise ValueError("weights must be positive and finite")
        if self.distances is not None:
            self.distances = np.asarray(self.distances, dtype=np.float64).reshape(-1)
            if self.distances.shape[0] != self.pairs.shape[0]:
                raise ValueError("distances must match pair count")
        if len(np.unique(self.pairs, axis=0)) != self.pairs.shape[0]:
            raise ValueError("duplicate correspondence pairs")

    def __len__(self) -> int:
        return int(self.pairs.shape[0])

    def select(self, indices) -> "CorrespondenceSet":
        idx = np.asarray(indices)
        return CorrespondenceSet(
            pairs=self.pairs[idx],
            weights=self.weights[idx],
            distances=None if self.distances is None else self.distances[idx],
            meta=dict(self.meta),
        )


def curvature_weighted_sample(cloud: PointCloud, n: int, seed: int = 0) -> np.ndarray:
    """Draw n distinct indices with probability proportional to curvature.

    All-zero curvature falls back to uniform sampling. Deterministic for
    a given seed.
    """
    if cloud.curvatures is None:
        raise ValueError("cloud has no curvatures; run estimate_curvature first")
    size = len(cloud)
    if not 1 <= n <= size:
        raise ValueError("sample count must be in [1, cloud size]")
    total = float(cloud.curvatures.sum())
    probs = None if total <= 0 else cloud.curvatures / total
    rng = np.random.default_rng(seed)
    picked = rng.choice(size, size=n, replace=False, p=probs)
    return np.sort(picked.astype(np.int64))


def _normalize_blocks(hist: np.ndarray) -> np.ndarray:
    out = hist.copy()
    for b in range(3):
        block = out[:, b * N_BINS : (b + 1) * N_BINS]
        sums = block.sum(axis=1, keepdims=True)
        nz = sums[:, 0] > 0
        block[nz] /= sums[nz]
    return out


def compute_fpfh(cloud: PointCloud, indices, radius: float) -> DescriptorSet:
    """FPFH descriptors at ``indices`` over a radius neighborhood.

    Neighbor-weighted accumulation of simplified point feature histograms
    with 11 bins per angular feature. Points with no in-range neighbor
    (or a null normal) get a zeroed descriptor and an isolated flag.
    """
    if cloud.normals is None:
        raise ValueError("cloud has no normals; run estimate_normals first")
    if radius <= 0:
        raise ValueError("radius must be positive")
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    points = cloud.points
    valid = cloud.valid_normal_mask()
    tree = cKDTree(points)

    def neighbor_pairs(query_idx: np.ndarray):
        """Flat (center, neighbor) arrays over valid-normal neighbors."""
        lists = tree.query_ball_point(points[query_idx], radius)
        centers, nbrs = [], []
        for qi, lst in zip(query_idx, lists):
            arr = np.asarray(lst, dtype=np.int64)
            arr = arr[(arr != qi) & valid[arr]]
            if arr.size:
                centers.append(np.full(arr.size, qi, dtype=np.int64))
                nbrs.append(arr)
        if centers:
            return np.concatenate(centers), np.concatenate(nbrs)
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)

    query = indices[valid[indices]]
    centers0, nbrs0 = neighbor_pairs(query)
    spfh_needed = np.unique(np.concatenate([query, nbrs0]))
    extra = np.setdiff1d(spfh_needed, query, assume_unique=False)
    centers1, nbrs1 = neighbor_pairs(extra)
    centers = np.concatenate([centers0, centers1])
    nbrs = np.concatenate([nbrs0, nbrs1])

    normals_filled = np.nan_to_num(cloud.normals, nan=0.0)
    spfh_raw = pair_feature_histograms(points, normals_filled, centers, nbrs, len(cloud))
    spfh = _normalize_blocks(spfh_raw)

    # FPFH(c) = SPFH(c) + (1/k) sum_j SPFH(j) / dist(c, j)
    fpfh = np.zeros((indices.shape[0], DESCRIPTOR_SIZE))
    isolated = np.ones(indices.shape[0], dtype=bool)
    pos_of = {int(g): i for i, g in enumerate(indices)}
    own_pairs = np.array([pos_of[int(c)] for c in centers0], dtype=np.int64)
    if centers0.size:
        dists = np.linalg.norm(points[nbrs0] - points[centers0], axis=1)
        inv = 1.0 / np.maximum(dists, 1e-12)
        counts = np.zeros(indices.shape[0])
        np.add.at(counts, own_pairs, 1.0)
        acc = np.zeros_like(fpfh)
        np.add.at(acc, own_pairs, spfh[nbrs0] * inv[:, None])
        has = counts > 0
        fpfh[has] = spfh[indices[has]] + acc[has] / counts[has, None]
        isolated[has] = False
    fpfh = _normalize_blocks(fpfh)
    return DescriptorSet(descriptors=fpfh, source_indices=indices, isolated=isolated)


def match_descriptors(
    source: DescriptorSet,
    target: DescriptorSet,
    tau: float | None = None,
    source_curvatures=None,
    mutual: bool = True,
) -> CorrespondenceSet:
    """Nearest-neighbor descriptor matches below distance tau.

    tau=None picks 0.9x the median nearest-neighbor descriptor distance
    of the source set. With mutual=True (default) a pair is kept only
    when each side is the other's nearest neighbor. Pair weights combine
    descriptor similarity with curvature importance:
    w = (1 - d/tau) * (1 + k_i / mean(k)).

    Indices in the result refer to the parent clouds of the two sets.
    Raises NoCorrespondences when nothing survives, signalling the caller
    to relax tau.
    """
    if len(source) == 0 or len(target) == 0:
        raise ValueError("descriptor sets must be non-empty")
    src = source.descriptors
    dst = target.descriptors
    src_tree = cKDTree(src)
    dst_tree = cKDTree(dst)
    d_fwd, nn_fwd = dst_tree.query(src)

    if tau is None:
        tau = 0.9 * float(np.median(d_fwd))
        tau = max(tau, 1e-9)
    if tau <= 0:
        raise ValueError("tau must be positive")

    keep = d_fwd < tau
    keep &= ~source.isolated
    keep &= ~target.isolated[nn_fwd]
    if mutual:
        _, nn_back = src_tree.query(dst[nn_fwd[keep]])
        sel = np.flatnonzero(keep)
        keep2 = nn_back == sel
        sel = sel[keep2]
    else:
        sel = np.flatnonzero(keep)
    if sel.size == 0:
        raise NoCorrespondences(f"no descriptor pairs below tau={tau:.4g}")

    dists = d_fwd[sel]
    sim = 1.0 - dists / tau
    if source_curvatures is not None:
        k = np.asarray(source_curvatures, dtype=np.float64).reshape(-1)
        if k.shape[0] == len(source):
            k_sel = k[sel]
        else:
            k_sel = k[source.source_indices[sel]]
        k_mean = float(k.mean())
        importance = 1.0 + (k_sel / k_mean if k_mean > 0 else 0.0)
    else:
        importance = np.ones(sel.size)
    weights = np.maximum(sim * importance, 1e-12)

    pairs = np.column_stack(
        [source.source_indices[sel], target.source_indices[nn_fwd[sel]]]
    )
    return CorrespondenceSet(
        pairs=pairs,
        weights=weights,
        distances=dists,
        meta={"tau": float(tau), "mutual": mutual, "weight_form": "(1-d/tau)*(1+k/kbar)"},
    )


def dump_correspondences_csv(corr: CorrespondenceSet, path) -> None:
    """Debug dump: source_index, target_index, weight, descriptor_distance."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_index", "target_index", "weight", "descriptor_distance"])
        dists = corr.distances if corr.distances is not None else np.full(len(corr), np.nan)
        for (i, j), w, d in zip(corr.pairs, corr.weights, dists):
            writer.writerow([int(i), int(j), f"{w:.9g}", f"{d:.9g}"])
