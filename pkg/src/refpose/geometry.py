# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

"""Foundational 3D types and numerics.

Point clouds are ``(N, 3)`` float64 arrays in meters wrapped by :class:`PointCloud`. Transforms
act on row vectors, i.e. ``points @ rotation.T + translation``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import DimensionMismatch, EmptySelection

if TYPE_CHECKING:  # pragma: no cover
    from typing import Any, Optional, Union

_ROTATION_TOL = 1e-9
_NORMAL_TOL = 1e-6


def _frozen_array(values: Any, dtype: Any = np.float64) -> np.ndarray:
    """Return a read-only copy, so value types stay immutable when shared between threads."""
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


def check_rotation(rotation: np.ndarray, tol: float = _ROTATION_TOL) -> None:
    """Raise :class:`ValueError` if ``rotation`` is not in SO(3) within ``tol``."""
    if rotation.shape != (3, 3):
        raise ValueError(f"Rotation must be 3x3, got shape {rotation.shape}.")
    if not np.all(np.isfinite(rotation)):
        raise ValueError("Rotation contains non-finite entries.")
    if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > tol:
        raise ValueError("Rotation is not orthonormal.")
    if abs(np.linalg.det(rotation) - 1.0) > tol:
        raise ValueError(f"Rotation has determinant {np.linalg.det(rotation):.12f}, expected +1.")


@dataclass(frozen=True)
class PointCloud:
    """Ordered list of 3D points with optional unit normals.

    :param points: ``(N, 3)`` coordinates in meters, ``N >= 1``
    :param normals: optional ``(N, 3)`` unit vectors"""

    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        points = _frozen_array(self.points)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError(f"Points must have shape (N, 3), got {points.shape}.")
        if len(points) < 1:
            raise ValueError("A point cloud needs at least one point.")
        if not np.all(np.isfinite(points)):
            raise ValueError("Point cloud contains non-finite coordinates.")
        object.__setattr__(self, "points", points)

        if self.normals is not None:
            normals = _frozen_array(self.normals)
            if normals.shape != points.shape:
                raise DimensionMismatch(f"Normals shape {normals.shape} does not match points {points.shape}.")
            if np.max(np.abs(np.linalg.norm(normals, axis=1) - 1.0)) > _NORMAL_TOL:
                raise ValueError("Normals must have unit norm.")
            object.__setattr__(self, "normals", normals)

    def __len__(self) -> int:
        return len(self.points)

    def select(self, indices: Any) -> PointCloud:
        """Return the sub-cloud at ``indices`` (normals follow)."""
        indices = np.asarray(indices, dtype=np.intp)
        normals = None if self.normals is None else self.normals[indices]
        return PointCloud(self.points[indices], normals)

    def with_points(self, points: np.ndarray) -> PointCloud:
        """Return a cloud with new coordinates and the same normals."""
        return PointCloud(points, self.normals)


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) transform ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = _frozen_array(self.rotation)
        translation = _frozen_array(self.translation).reshape(-1)
        check_rotation(rotation)
        if translation.shape != (3,) or not np.all(np.isfinite(translation)):
            raise ValueError(f"Translation must be a finite 3-vector, got {translation}.")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> RigidTransform:
        """Build from a homogeneous ``4x4`` matrix."""
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise ValueError(f"Homogeneous matrix must be 4x4, got {matrix.shape}.")
        return cls(matrix[:3, :3], matrix[:3, 3])

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an ``(N, 3)`` array of points."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, other: RigidTransform) -> RigidTransform:
        """Return ``self ∘ other`` (``other`` is applied first)."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> RigidTransform:
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def to_dict(self) -> dict[str, Any]:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RigidTransform:
        return cls(np.asarray(data["rotation"], dtype=np.float64), np.asarray(data["translation"], dtype=np.float64))


@dataclass(frozen=True)
class FrameTransform:
    """7DoF frame ``{rotation, translation, scale}``.

    Normalizing maps ``q`` to ``rotation.T @ (q - translation) / scale``."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    def __post_init__(self):
        rotation = _frozen_array(self.rotation)
        translation = _frozen_array(self.translation).reshape(-1)
        check_rotation(rotation)
        if translation.shape != (3,):
            raise ValueError(f"Translation must be a 3-vector, got shape {translation.shape}.")
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ValueError(f"Frame scale must be positive, got {self.scale}.")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls) -> FrameTransform:
        return cls(np.eye(3), np.zeros(3), 1.0)

    def normalize(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation / self.scale

    def denormalize(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def to_dict(self) -> dict[str, Any]:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist(), "scale": self.scale}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FrameTransform:
        return cls(
            np.asarray(data["rotation"], dtype=np.float64),
            np.asarray(data["translation"], dtype=np.float64),
            float(data["scale"]),
        )


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}.")

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project camera-frame points to ``(N, 2)`` pixel coordinates."""
        points = np.asarray(points, dtype=np.float64)
        z = points[:, 2]
        return np.stack([self.fx * points[:, 0] / z + self.cx, self.fy * points[:, 1] / z + self.cy], axis=1)


@dataclass(frozen=True)
class DepthMap:
    """Row-major depth image in meters; ``0`` marks invalid pixels."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"Depth map dimensions must be positive, got {self.width}x{self.height}.")
        values = _frozen_array(self.values)
        if values.size != self.width * self.height:
            raise DimensionMismatch(f"Depth map has {values.size} values, expected {self.width * self.height}.")
        values = values.reshape(self.height, self.width)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("Depth values must be finite and non-negative.")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class BinaryMask:
    """Row-major boolean mask."""

    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"Mask dimensions must be positive, got {self.width}x{self.height}.")
        bits = _frozen_array(self.bits, dtype=bool)
        if bits.size != self.width * self.height:
            raise DimensionMismatch(f"Mask has {bits.size} entries, expected {self.width * self.height}.")
        bits = bits.reshape(self.height, self.width)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))


def centroid(cloud: PointCloud) -> np.ndarray:
    """Arithmetic mean of the points."""
    return cloud.points.mean(axis=0)


def radius(cloud: PointCloud, center: np.ndarray) -> float:
    """Largest distance from ``center`` to any point."""
    return float(np.max(np.linalg.norm(cloud.points - np.asarray(center, dtype=np.float64), axis=1)))


def covariance(cloud: PointCloud) -> np.ndarray:
    """Population covariance ``(1/N) Σ (q - c)(q - c)ᵀ`` (symmetric PSD)."""
    centered = cloud.points - centroid(cloud)
    cov = centered.T @ centered / len(cloud)
    return 0.5 * (cov + cov.T)


def _analytic_eigenvalues(m: np.ndarray) -> np.ndarray:
    """Trigonometric closed form for symmetric 3x3 matrices (ascending)."""
    p1 = m[0, 1] ** 2 + m[0, 2] ** 2 + m[1, 2] ** 2
    if p1 == 0.0:
        return np.sort(np.diag(m).copy())

    q = np.trace(m) / 3.0
    p2 = np.sum((np.diag(m) - q) ** 2) + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    b = (m - q * np.eye(3)) / p
    r = np.linalg.det(b) / 2.0
    # rounding can push r slightly outside [-1, 1]
    phi = np.arccos(np.clip(r, -1.0, 1.0)) / 3.0
    largest = q + 2.0 * p * np.cos(phi)
    smallest = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    middle = 3.0 * q - largest - smallest
    return np.sort(np.array([smallest, middle, largest]))


def _null_direction(m: np.ndarray, value: float) -> Optional[np.ndarray]:
    """Unit vector spanning the null space of ``m - value·I`` for a simple eigenvalue."""
    shifted = m - value * np.eye(3)
    candidates = np.array(
        [
            np.cross(shifted[0], shifted[1]),
            np.cross(shifted[0], shifted[2]),
            np.cross(shifted[1], shifted[2]),
        ]
    )
    norms = np.linalg.norm(candidates, axis=1)
    best = int(np.argmax(norms))
    if norms[best] < 1e-12:
        return None
    return candidates[best] / norms[best]


def _jacobi_eigen(m: np.ndarray, max_sweeps: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations; robust for repeated or nearly repeated eigenvalues."""
    a = m.copy()
    vectors = np.eye(3)
    norm = max(float(np.sum(a * a)), 1e-300)
    for _ in range(max_sweeps):
        off = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
        if off <= 1e-32 * norm:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            if a[p, q] == 0.0:
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
            t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.eye(3)
            rot[p, p] = c
            rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            a = rot.T @ a @ rot
            vectors = vectors @ rot

    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    return values[order], vectors[:, order]


def symmetric_eigen3(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric 3x3 matrix.

    :param m: symmetric matrix (within 1e-8)
    :return: ``(values, vectors)`` with ascending ``values`` and unit eigenvectors as the columns of
             ``vectors`` (mutually orthogonal)

    Closed-form eigenvalues and cross-product eigenvectors are used when the spectrum is well
    separated; repeated or nearly repeated eigenvalues fall back to Jacobi rotations."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise DimensionMismatch(f"Expected a 3x3 matrix, got shape {m.shape}.")
    scale = float(np.max(np.abs(m)))
    if np.max(np.abs(m - m.T)) > 1e-8 * max(1.0, scale):
        raise ValueError("Matrix is not symmetric.")
    if scale == 0.0:
        return np.zeros(3), np.eye(3)

    a = 0.5 * (m + m.T) / scale
    values = _analytic_eigenvalues(a)
    if np.min(np.diff(values)) >= 1e-12:
        smallest = _null_direction(a, values[0])
        largest = _null_direction(a, values[2])
        if smallest is not None and largest is not None:
            smallest = smallest - (smallest @ largest) * largest
            smallest /= np.linalg.norm(smallest)
            vectors = np.column_stack([smallest, np.cross(largest, smallest), largest])
            residual = np.max(np.abs(a @ vectors - vectors * values))
            if residual <= 1e-10:
                return values * scale, vectors

    values, vectors = _jacobi_eigen(a)
    return values * scale, vectors


def back_project(depth: DepthMap, mask: BinaryMask, k: CameraIntrinsics) -> PointCloud:
    """Back-project masked pixels with positive depth, in row-major scan order.

    :raises EmptySelection: if no masked pixel has a valid depth"""
    if (mask.width, mask.height) != (depth.width, depth.height):
        raise DimensionMismatch(
            f"Mask {mask.width}x{mask.height} does not match depth map {depth.width}x{depth.height}."
        )
    valid = mask.bits & (depth.values > 0)
    rows, cols = np.nonzero(valid)
    if len(rows) == 0:
        raise EmptySelection("No masked pixel with positive depth.")

    d = depth.values[rows, cols]
    x = d * (cols - k.cx) / k.fx
    y = d * (rows - k.cy) / k.fy
    return PointCloud(np.stack([x, y, d], axis=1))


def apply_rigid(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Transform points (and rotate normals)."""
    normals = None if cloud.normals is None else cloud.normals @ t.rotation.T
    return PointCloud(t.apply(cloud.points), normals)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    return a.compose(b)


def inverse(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def geodesic_angle(rotation: np.ndarray) -> float:
    """Rotation angle in radians of a rotation matrix."""
    cos_angle = (np.trace(rotation) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos_angle, -1.0, 1.0)))
