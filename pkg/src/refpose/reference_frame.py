# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

"""Pose and size invariant reference frames.

The global reference frame (GRF) of a cloud is ``{rotation, translation, scale}`` with the
translation at the centroid, the scale equal to the radius, the z-axis along the normal of the
smallest covariance eigenvalue and the x-axis along a weighted sum of tangent-plane projections.
Local reference frames (LRF) apply the same construction to the neighborhood of every point."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.spatial import cKDTree

from ._warnings import _warn_user
from .config import FrameConfig
from .errors import DegenerateGeometry, DimensionMismatch, ZeroScale
from .geometry import FrameTransform, PointCloud, centroid, covariance, radius, symmetric_eigen3

if TYPE_CHECKING:  # pragma: no cover
    from collections.abc import Sequence
    from typing import Optional, Union

_SIGN_TOL = 1e-9
_AXIS_TOL = 1e-10
_COLLINEAR_TOL = 1e-10
_LEX_TOL = 1e-12


@dataclass(frozen=True)
class LocalRegion:
    """Neighborhood of ``center_index``; ``member_indices`` are sorted by distance and start with the
    center. ``knn_fallback`` is set when the radius cut left fewer than three members."""

    center_index: int
    member_indices: np.ndarray
    knn_fallback: bool = False

    def __len__(self) -> int:
        return len(self.member_indices)


def _lexicographic_flip(vector: np.ndarray) -> bool:
    """True if the first significant component is negative."""
    for component in vector:
        if abs(component) > _LEX_TOL:
            return bool(component < 0)
    return False


def _orient_normal(normal: np.ndarray, offsets: np.ndarray, scale: float) -> np.ndarray:
    """Sign rule for the z-axis.

    ``offsets`` are ``q - c``. The normal must satisfy ``nᵀ Σ (c - q) > 0``; when that sum is zero
    within tolerance (always the case at the centroid) the sign of the third moment along the normal
    decides, then the lexicographic rule."""
    count = len(offsets)
    along = offsets @ normal
    first = -float(np.sum(along))
    if first > _SIGN_TOL * count * scale:
        return normal
    if first < -_SIGN_TOL * count * scale:
        return -normal

    third = float(np.sum(along**3))
    if third > _SIGN_TOL * count * scale**3:
        return -normal
    if third < -_SIGN_TOL * count * scale**3:
        return normal
    return -normal if _lexicographic_flip(normal) else normal


def center_normal(cloud: PointCloud, center: np.ndarray) -> np.ndarray:
    """Unit eigenvector of the smallest covariance eigenvalue, oriented by the z-axis sign rule.

    :raises DegenerateGeometry: if the points are collinear"""
    center = np.asarray(center, dtype=np.float64)
    values, vectors = symmetric_eigen3(covariance(cloud))
    if values[2] <= 0.0 or values[1] <= _COLLINEAR_TOL * values[2]:
        raise DegenerateGeometry(f"Points are collinear (eigenvalues {values.tolist()}).")

    offsets = cloud.points - center
    scale = max(float(np.max(np.linalg.norm(offsets, axis=1))), np.finfo(float).tiny)
    return _orient_normal(vectors[:, 0], offsets, scale)


def grf_x_axis(cloud: PointCloud, center: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Normalized sum of tangent-plane projections weighted by ``(s - |d|)² (nᵀd)²``.

    :raises DegenerateGeometry: if the weighted projections cancel out"""
    normal = np.asarray(normal, dtype=np.float64)
    offsets = cloud.points - np.asarray(center, dtype=np.float64)
    distances = np.linalg.norm(offsets, axis=1)
    along = offsets @ normal
    projected = offsets - along[:, None] * normal

    weights = (distances.max() - distances) ** 2 * along**2
    weighted = weights[:, None] * projected
    total = weighted.sum(axis=0)
    norm = float(np.linalg.norm(total))
    # every weighted term is bounded by s⁵
    if norm <= _AXIS_TOL * len(offsets) * float(distances.max()) ** 5:
        raise DegenerateGeometry("Tangent-plane projections cancel out; the x-axis is undefined.")

    axis = total / norm
    axis = axis - (axis @ normal) * normal
    return axis / np.linalg.norm(axis)


def _fallback_x_axis(normal: np.ndarray) -> np.ndarray:
    """Global +X (or +Y if parallel to the normal) projected onto the tangent plane."""
    for candidate in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
        axis = candidate - (candidate @ normal) * normal
        norm = np.linalg.norm(axis)
        if norm > 1e-6:
            return axis / norm
    raise DegenerateGeometry("No fallback x-axis available.")  # pragma: no cover


def _build_frame(cloud: PointCloud, allow_fallback: bool) -> FrameTransform:
    center = centroid(cloud)
    scale = radius(cloud, center)
    if scale < 1e-12:
        raise ZeroScale(f"Point set radius {scale} is zero.")

    z_axis = center_normal(cloud, center)
    try:
        x_axis = grf_x_axis(cloud, center, z_axis)
    except DegenerateGeometry:
        if not allow_fallback:
            raise
        _warn_user("GRF x-axis is undefined for this symmetric cloud; using the projected global X axis.")
        x_axis = _fallback_x_axis(z_axis)

    y_axis = np.cross(z_axis, x_axis)
    return FrameTransform(np.column_stack([x_axis, y_axis, z_axis]), center, scale)


def build_grf(cloud: PointCloud) -> FrameTransform:
    """Global reference frame of ``cloud``.

    :raises DegenerateGeometry: if the points are collinear
    :raises ZeroScale: if all points coincide"""
    return _build_frame(cloud, allow_fallback=True)


def centered_frame(cloud: PointCloud) -> FrameTransform:
    """Centroid and radius of ``cloud`` with the camera axes kept (no rotation canonicalization).

    :raises ZeroScale: if all points coincide"""
    center = centroid(cloud)
    scale = radius(cloud, center)
    if scale < 1e-12:
        raise ZeroScale(f"Point set radius {scale} is zero.")
    return FrameTransform(np.eye(3), center, scale)


def normalize_to_frame(cloud: PointCloud, frame: FrameTransform) -> PointCloud:
    """Map ``q`` to ``Rᵀ(q - t)/s`` (normals are rotated)."""
    normals = None if cloud.normals is None else cloud.normals @ frame.rotation
    return PointCloud(frame.normalize(cloud.points), normals)


def denormalize_from_frame(cloud: PointCloud, frame: FrameTransform) -> PointCloud:
    """Inverse of :func:`normalize_to_frame`."""
    normals = None if cloud.normals is None else cloud.normals @ frame.rotation.T
    return PointCloud(frame.denormalize(cloud.points), normals)


def region_radius(cloud: PointCloud, cfg: FrameConfig) -> float:
    """Absolute neighborhood radius (``local_radius`` may be a fraction of the GRF radius)."""
    if cfg.radius_mode == "meters":
        return cfg.local_radius
    return cfg.local_radius * radius(cloud, centroid(cloud))


def local_regions(
    cloud: PointCloud, cfg: FrameConfig, centers: Optional[Sequence[int]] = None
) -> list[LocalRegion]:
    """The ``N_D`` nearest neighbors of each center intersected with the radius ball.

    :param cloud: the cloud neighbors are taken from
    :param cfg: neighbor count and radius
    :param centers: indices to build regions for (all points by default)"""
    centers = np.arange(len(cloud)) if centers is None else np.asarray(centers, dtype=np.intp)
    k = min(cfg.n_neighbors, len(cloud))
    limit = region_radius(cloud, cfg)

    tree = cKDTree(cloud.points)
    distances, indices = tree.query(cloud.points[centers], k=list(range(1, k + 1)))

    regions = []
    for center, dist_row, index_row in zip(centers, distances, indices):
        keep = dist_row <= limit
        if np.count_nonzero(keep) >= 3 or np.count_nonzero(keep) == k:
            regions.append(LocalRegion(int(center), index_row[keep].astype(np.intp)))
        else:
            regions.append(LocalRegion(int(center), index_row[: min(3, k)].astype(np.intp), knn_fallback=True))
    return regions


def build_lrf(cloud: PointCloud, region: LocalRegion) -> FrameTransform:
    """Local reference frame of a region (same rule as :func:`build_grf`, without fallback).

    :raises DegenerateGeometry: for collinear or rotationally symmetric regions"""
    if len(region) < 3:
        raise DegenerateGeometry(f"Region around point {region.center_index} has only {len(region)} members.")
    return _build_frame(cloud.select(region.member_indices), allow_fallback=False)


@dataclass(frozen=True)
class FrameBatch:
    """Local frames of many regions; ``degenerate[i]`` marks regions without a valid frame."""

    rotations: np.ndarray
    translations: np.ndarray
    scales: np.ndarray
    degenerate: np.ndarray

    def __len__(self) -> int:
        return len(self.scales)

    def frame(self, i: int) -> Optional[FrameTransform]:
        if self.degenerate[i]:
            return None
        return FrameTransform(self.rotations[i], self.translations[i], float(self.scales[i]))


def _padded_members(cloud: PointCloud, regions: Sequence[LocalRegion]) -> tuple[np.ndarray, np.ndarray]:
    """Region members as an ``(M, K, 3)`` array plus the ``(M, K)`` validity mask."""
    width = max(len(region) for region in regions)
    indices = np.zeros((len(regions), width), dtype=np.intp)
    mask = np.zeros((len(regions), width), dtype=bool)
    for row, region in enumerate(regions):
        indices[row, : len(region)] = region.member_indices
        mask[row, : len(region)] = True
    return cloud.points[indices], mask


def build_lrfs(cloud: PointCloud, regions: Sequence[LocalRegion]) -> FrameBatch:
    """Vectorized :func:`build_lrf` over many regions; degenerate regions are flagged, not raised."""
    points, mask = _padded_members(cloud, regions)
    weight = mask.astype(np.float64)
    count = weight.sum(axis=1)

    centers = (points * weight[..., None]).sum(axis=1) / count[:, None]
    offsets = (points - centers[:, None, :]) * weight[..., None]
    distances = np.linalg.norm(offsets, axis=2)
    scales = distances.max(axis=1)

    cov = np.einsum("mki,mkj->mij", offsets, offsets) / count[:, None, None]
    values, vectors = np.linalg.eigh(cov)
    normals = vectors[:, :, 0]
    degenerate = (count < 3) | (scales < 1e-12) | (values[:, 2] <= 0) | (values[:, 1] <= _COLLINEAR_TOL * values[:, 2])

    along = np.einsum("mki,mi->mk", offsets, normals)
    safe_scales = np.maximum(scales, np.finfo(float).tiny)
    first = -along.sum(axis=1)
    third = (along**3).sum(axis=1)
    tol_first = _SIGN_TOL * count * safe_scales
    tol_third = _SIGN_TOL * count * safe_scales**3
    lexicographic = np.array([_lexicographic_flip(normal) for normal in normals], dtype=bool)
    flip = np.where(
        first > tol_first,
        False,
        np.where(
            first < -tol_first,
            True,
            np.where(third > tol_third, True, np.where(third < -tol_third, False, lexicographic)),
        ),
    )
    normals = np.where(flip[:, None], -normals, normals)
    along = np.where(flip[:, None], -along, along)

    projected = offsets - along[..., None] * normals[:, None, :]
    weights = (scales[:, None] - distances) ** 2 * along**2 * weight
    weighted = weights[..., None] * projected
    total = weighted.sum(axis=1)
    norm = np.linalg.norm(total, axis=1)
    degenerate |= norm <= _AXIS_TOL * count * scales**5

    x_axes = total / np.where(norm > 0, norm, 1.0)[:, None]
    x_axes = x_axes - np.einsum("mi,mi->m", x_axes, normals)[:, None] * normals
    x_norm = np.linalg.norm(x_axes, axis=1)
    degenerate |= x_norm < 1e-6

    rotations = np.stack([x_axes / np.where(x_norm > 0, x_norm, 1.0)[:, None], np.zeros_like(x_axes), normals], axis=2)
    rotations[:, :, 1] = np.cross(rotations[:, :, 2], rotations[:, :, 0])
    rotations[degenerate] = np.eye(3)
    scales = np.where(degenerate & (scales < 1e-12), 1.0, scales)
    return FrameBatch(rotations, centers, scales, degenerate)


def lrf_normalize(
    cloud: PointCloud,
    regions: Sequence[LocalRegion],
    frames: Union[FrameBatch, Sequence[Optional[FrameTransform]]],
) -> list[Optional[np.ndarray]]:
    """Region members expressed in their local frame (``None`` where the frame is degenerate).

    Every returned set has its centroid at the origin and a maximum norm of one."""
    if len(frames) != len(regions):
        raise DimensionMismatch(f"{len(frames)} frames for {len(regions)} regions.")

    if isinstance(frames, FrameBatch):
        points, mask = _padded_members(cloud, regions)
        local = np.einsum("mki,mij->mkj", points - frames.translations[:, None, :], frames.rotations)
        local /= frames.scales[:, None, None]
        return [
            None if frames.degenerate[row] else local[row, mask[row]] for row in range(len(regions))
        ]

    sets: list[Optional[np.ndarray]] = []
    for region, frame in zip(regions, frames):
        sets.append(None if frame is None else frame.normalize(cloud.points[region.member_indices]))
    return sets


def centered_frames(cloud: PointCloud, regions: Sequence[LocalRegion]) -> FrameBatch:
    """Per-region centroid and radius with camera axes; only regions whose members coincide are
    degenerate."""
    points, mask = _padded_members(cloud, regions)
    weight = mask.astype(np.float64)
    centers = (points * weight[..., None]).sum(axis=1) / weight.sum(axis=1)[:, None]
    scales = np.linalg.norm((points - centers[:, None, :]) * weight[..., None], axis=2).max(axis=1)
    degenerate = scales < 1e-12
    rotations = np.repeat(np.eye(3)[None], len(regions), axis=0)
    return FrameBatch(rotations, centers, np.where(degenerate, 1.0, scales), degenerate)
