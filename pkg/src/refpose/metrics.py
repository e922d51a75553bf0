# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

"""Pose error metrics, including the symmetry-aware maximum surface and projection distances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import RigidTransform

if TYPE_CHECKING:  # pragma: no cover
    from .geometry import CameraIntrinsics, PointCloud


def rotation_error(a: RigidTransform, b: RigidTransform) -> float:
    """Geodesic angle between the rotations of ``a`` and ``b`` in degrees."""
    cos_angle = (np.trace(a.rotation.T @ b.rotation) - 1.0) / 2.0
    return float(np.rad2deg(np.arccos(np.clip(cos_angle, -1.0, 1.0))))


def translation_error(a: RigidTransform, b: RigidTransform) -> float:
    return float(np.linalg.norm(a.translation - b.translation))


@dataclass(frozen=True)
class SymmetrySet:
    """Object symmetries in model coordinates; the identity is always included."""

    transforms: tuple[RigidTransform, ...] = ()

    def __post_init__(self):
        transforms = tuple(self.transforms)
        has_identity = any(
            np.allclose(t.rotation, np.eye(3), atol=1e-12) and np.allclose(t.translation, 0.0, atol=1e-12)
            for t in transforms
        )
        if not has_identity:
            transforms = (RigidTransform.identity(),) + transforms
        object.__setattr__(self, "transforms", transforms)

    def __len__(self) -> int:
        return len(self.transforms)

    @classmethod
    def discrete(cls, axis: np.ndarray, order: int, center: np.ndarray = np.zeros(3)) -> SymmetrySet:
        """``order``-fold rotational symmetry about ``axis`` through ``center``."""
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        center = np.asarray(center, dtype=np.float64)
        transforms = []
        for k in range(order):
            rotation = Rotation.from_rotvec(axis * 2 * np.pi * k / order).as_matrix()
            transforms.append(RigidTransform(rotation, center - rotation @ center))
        return cls(tuple(transforms))


def _symmetric_targets(gt: RigidTransform, sym: SymmetrySet, points: np.ndarray):
    for symmetry in sym.transforms:
        yield gt.compose(symmetry).apply(points)


def mssd(estimate: RigidTransform, gt: RigidTransform, model_points: PointCloud, sym: SymmetrySet) -> float:
    """``min over S of max over x |T_est(x) - T_gt(S(x))|`` in the units of the model."""
    moved = estimate.apply(model_points.points)
    return min(
        float(np.linalg.norm(moved - target, axis=1).max())
        for target in _symmetric_targets(gt, sym, model_points.points)
    )


def mspd(
    estimate: RigidTransform, gt: RigidTransform, model_points: PointCloud, sym: SymmetrySet, k: CameraIntrinsics
) -> float:
    """Like :func:`mssd` with pinhole projected points, in pixels."""
    projected = k.project(estimate.apply(model_points.points))
    return min(
        float(np.linalg.norm(projected - k.project(target), axis=1).max())
        for target in _symmetric_targets(gt, sym, model_points.points)
    )
