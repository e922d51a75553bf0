# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

"""Seeded synthetic shapes, partial views and benchmark pairs with known relative pose."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import EmptyView
from .geometry import PointCloud, RigidTransform, apply_rigid, centroid, radius
from .matching import overlap_ratio

if TYPE_CHECKING:  # pragma: no cover
    from typing import Any, Optional, Union

    from .config import PipelineConfig

    SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]

SHAPE_KINDS = ("superellipsoid", "box", "cylinder", "composite")
VIEW_DIRECTION = np.array([0.0, 0.0, 1.0])
DEFAULT_OVERLAP_DELTA = 0.15

_DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "superellipsoid": {"axes": [0.05, 0.035, 0.025], "exponents": [1.0, 1.0]},
    "box": {"size": [0.1, 0.06, 0.04]},
    "cylinder": {"radius": 0.02, "height": 0.06},
    "composite": {
        "parts": [
            {"kind": "box", "params": {"size": [0.1, 0.06, 0.04]}, "offset": [0.0, 0.0, 0.0]},
            {"kind": "cylinder", "params": {"radius": 0.02, "height": 0.06}, "offset": [0.05, 0.02, 0.03]},
            {"kind": "superellipsoid", "params": {"axes": [0.03, 0.02, 0.015]}, "offset": [-0.04, -0.02, 0.02]},
        ]
    },
}


@dataclass(frozen=True)
class ShapeSpec:
    """Shape ``kind`` with ``params`` (defaults per kind), sampled with ``point_count`` points."""

    kind: str = "composite"
    params: dict[str, Any] = field(default_factory=dict)
    point_count: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise KeyError(f"Shape kind {self.kind} does not exist. Available kinds: {list(SHAPE_KINDS)}")
        if self.point_count < 50:
            raise ValueError(f"point_count must be >= 50, got {self.point_count}.")

    def parameter(self, name: str) -> Any:
        return self.params.get(name, _DEFAULT_PARAMS[self.kind][name])

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ShapeSpec:
        return cls(
            kind=data.get("kind", "composite"),
            params=dict(data.get("params", {})),
            point_count=int(data.get("point_count", 2000)),
            seed=int(data.get("seed", 0)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "params": dict(self.params), "point_count": self.point_count, "seed": self.seed}


def _signed_power(values: np.ndarray, exponent: float) -> np.ndarray:
    return np.sign(values) * np.abs(values) ** exponent


def _unit_directions(count: int, rng: np.random.Generator) -> np.ndarray:
    directions = rng.normal(size=(count, 3))
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def _sample_superellipsoid(spec: ShapeSpec, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    a, b, c = spec.parameter("axes")
    e1, e2 = spec.parameter("exponents")
    directions = _unit_directions(count, rng)
    eta = np.arcsin(np.clip(directions[:, 2], -1.0, 1.0))
    omega = np.arctan2(directions[:, 1], directions[:, 0])
    ce, se, cw, sw = np.cos(eta), np.sin(eta), np.cos(omega), np.sin(omega)

    points = np.stack(
        [
            a * _signed_power(ce, e1) * _signed_power(cw, e2),
            b * _signed_power(ce, e1) * _signed_power(sw, e2),
            c * _signed_power(se, e1),
        ],
        axis=1,
    )
    normals = np.stack(
        [
            _signed_power(ce, 2 - e1) * _signed_power(cw, 2 - e2) / a,
            _signed_power(ce, 2 - e1) * _signed_power(sw, 2 - e2) / b,
            _signed_power(se, 2 - e1) / c,
        ],
        axis=1,
    )
    return points, normals


def _sample_box(spec: ShapeSpec, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    half = np.asarray(spec.parameter("size"), dtype=np.float64) / 2.0
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]]).repeat(2)
    faces = rng.choice(6, size=count, p=areas / areas.sum())
    axes = faces // 2
    signs = np.where(faces % 2 == 0, 1.0, -1.0)

    points = rng.uniform(-1.0, 1.0, size=(count, 3)) * half
    points[np.arange(count), axes] = signs * half[axes]
    normals = np.zeros((count, 3))
    normals[np.arange(count), axes] = signs
    return points, normals


def _sample_cylinder(spec: ShapeSpec, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    r = float(spec.parameter("radius"))
    h = float(spec.parameter("height"))
    areas = np.array([2 * np.pi * r * h, np.pi * r * r, np.pi * r * r])
    parts = rng.choice(3, size=count, p=areas / areas.sum())
    angles = rng.uniform(0.0, 2 * np.pi, size=count)
    # caps are sampled uniformly over the disc
    radii = np.where(parts == 0, r, r * np.sqrt(rng.uniform(0.0, 1.0, size=count)))
    heights = np.where(parts == 0, rng.uniform(-h / 2, h / 2, size=count), np.where(parts == 1, h / 2, -h / 2))

    points = np.stack([radii * np.cos(angles), radii * np.sin(angles), heights], axis=1)
    normals = np.zeros((count, 3))
    normals[parts == 0] = np.stack([np.cos(angles), np.sin(angles), np.zeros(count)], axis=1)[parts == 0]
    normals[parts == 1, 2] = 1.0
    normals[parts == 2, 2] = -1.0
    return points, normals


def _surface_area(spec: ShapeSpec) -> float:
    if spec.kind == "box":
        sx, sy, sz = spec.parameter("size")
        return 2 * (sx * sy + sx * sz + sy * sz)
    if spec.kind == "cylinder":
        r, h = spec.parameter("radius"), spec.parameter("height")
        return 2 * np.pi * r * (r + h)
    # ellipsoid approximation, also used for other exponents
    a, b, c = spec.parameter("axes")
    p = 1.6075
    return 4 * np.pi * (((a * b) ** p + (a * c) ** p + (b * c) ** p) / 3) ** (1 / p)


def _inside(spec: ShapeSpec, points: np.ndarray) -> np.ndarray:
    """Points strictly inside a primitive (surface excluded)."""
    if spec.kind == "box":
        half = np.asarray(spec.parameter("size")) / 2.0
        return np.all(np.abs(points) < half * (1 - 1e-9), axis=1)
    if spec.kind == "cylinder":
        r, h = spec.parameter("radius"), spec.parameter("height")
        return (np.hypot(points[:, 0], points[:, 1]) < r * (1 - 1e-9)) & (np.abs(points[:, 2]) < h / 2 * (1 - 1e-9))
    a, b, c = spec.parameter("axes")
    e1, e2 = spec.parameter("exponents")
    xy = np.abs(points[:, 0] / a) ** (2 / e2) + np.abs(points[:, 1] / b) ** (2 / e2)
    return xy ** (e2 / e1) + np.abs(points[:, 2] / c) ** (2 / e1) < 1 - 1e-9


_SAMPLERS = {"superellipsoid": _sample_superellipsoid, "box": _sample_box, "cylinder": _sample_cylinder}


def _sample_composite(spec: ShapeSpec, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    parts = [
        (ShapeSpec(part["kind"], dict(part.get("params", {})), 50), np.asarray(part.get("offset", [0, 0, 0]), float))
        for part in spec.parameter("parts")
    ]
    areas = np.array([_surface_area(part) for part, _ in parts])
    counts = np.ceil(1.5 * count * areas / areas.sum()).astype(int)

    points, normals = [], []
    for (part, offset), part_count in zip(parts, counts):
        part_points, part_normals = _SAMPLERS[part.kind](part, int(part_count), rng)
        part_points = part_points + offset
        hidden = np.zeros(len(part_points), dtype=bool)
        for other, other_offset in parts:
            if other is not part:
                hidden |= _inside(other, part_points - other_offset)
        points.append(part_points[~hidden])
        normals.append(part_normals[~hidden])

    points_all = np.concatenate(points)
    normals_all = np.concatenate(normals)
    keep = np.sort(rng.permutation(len(points_all))[:count])
    return points_all[keep], normals_all[keep]


def generate_shape(spec: ShapeSpec) -> PointCloud:
    """Surface samples with outward unit normals; identical for identical specs."""
    rng = np.random.default_rng(spec.seed)
    sampler = _sample_composite if spec.kind == "composite" else _SAMPLERS[spec.kind]
    points, normals = sampler(spec, spec.point_count, rng)
    return PointCloud(points, normals / np.linalg.norm(normals, axis=1, keepdims=True))


def partial_view(
    cloud: PointCloud,
    view_dir: np.ndarray = VIEW_DIRECTION,
    occlusion_fraction: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> PointCloud:
    """Points facing a camera looking along ``view_dir``, minus ``occlusion_fraction`` of them
    removed from the side of a random occluding half-plane.

    :raises EmptyView: if no point faces the camera"""
    if cloud.normals is None:
        raise ValueError("partial_view needs normals for back-face culling.")
    if not 0.0 <= occlusion_fraction < 1.0:
        raise ValueError(f"occlusion_fraction must lie in [0, 1), got {occlusion_fraction}.")
    view_dir = np.asarray(view_dir, dtype=np.float64)
    view_dir = view_dir / np.linalg.norm(view_dir)

    facing = np.nonzero(cloud.normals @ -view_dir > 0.0)[0]
    if len(facing) == 0:
        raise EmptyView("Back-face culling removed every point.")
    visible = cloud.select(facing)

    n_remove = min(int(occlusion_fraction * len(visible)), len(visible) - 1)
    if n_remove <= 0:
        return visible
    rng = rng if rng is not None else np.random.default_rng(0)
    direction = rng.normal(size=3)
    direction -= (direction @ view_dir) * view_dir
    direction /= np.linalg.norm(direction)
    order = np.argsort(-(visible.points @ direction), kind="stable")
    return visible.select(np.sort(order[n_remove:]))


def random_rotation(lo_deg: float, hi_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Rotation about a uniform random axis with an angle drawn uniformly in ``[lo, hi]`` degrees."""
    angle = np.deg2rad(rng.uniform(lo_deg, hi_deg)) if hi_deg > lo_deg else np.deg2rad(lo_deg)
    axis = _unit_directions(1, rng)[0]
    return Rotation.from_rotvec(axis * angle).as_matrix()


@dataclass(frozen=True)
class BenchmarkPair:
    """Query/reference views with the ground truth pose mapping query points onto the reference."""

    query: PointCloud
    reference: PointCloud
    gt: RigidTransform
    rotation_distance_deg: float
    noise_sigma: float
    outlier_fraction: float
    overlap_ratio: float
    model: PointCloud
    model_radius: float
    rot_bin: tuple[float, float] = (0.0, 0.0)
    overlap_delta: float = 0.0

    def metadata(self) -> dict[str, Any]:
        return {
            "gt": self.gt.to_dict(),
            "rotation_distance_deg": self.rotation_distance_deg,
            "noise_sigma": self.noise_sigma,
            "outlier_fraction": self.outlier_fraction,
            "overlap_ratio": self.overlap_ratio,
            "model_radius": self.model_radius,
            "rot_bin": list(self.rot_bin),
            "overlap_delta": self.overlap_delta,
        }


def _corrupt(
    cloud: PointCloud, sigma: float, outlier_fraction: float, rng: np.random.Generator
) -> PointCloud:
    points = cloud.points + rng.normal(scale=sigma, size=cloud.points.shape) if sigma > 0 else cloud.points
    n_outliers = int(round(outlier_fraction * len(points)))
    if n_outliers > 0:
        low, high = points.min(axis=0), points.max(axis=0)
        points = np.vstack([points, rng.uniform(low, high, size=(n_outliers, 3))])
    return PointCloud(points)


def uniform_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation drawn uniformly from SO(3) (normalized Gaussian quaternion)."""
    quaternion = rng.normal(size=4)
    return Rotation.from_quat(quaternion / np.linalg.norm(quaternion)).as_matrix()


def make_pair(
    shape: ShapeSpec,
    rot_bin: tuple[float, float],
    noise_sigma: float = 0.0,
    outlier_fraction: float = 0.0,
    seed: SeedLike = 0,
    occlusion_fraction: float = 0.0,
    full_views: bool = False,
    pipeline: Optional[PipelineConfig] = None,
) -> BenchmarkPair:
    """Benchmark pair with a rotation distance inside ``rot_bin`` (degrees).

    The model is placed in a random orientation and viewed along +z as the reference; the query
    views it rotated by ``R`` and shifted by up to half the model radius. Noise ``σ`` and outliers
    are relative to the model radius. ``overlap_ratio`` is measured on the clean views with the
    ``delta`` of ``pipeline`` (``DEFAULT_OVERLAP_DELTA`` model radii without one)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    canonical = generate_shape(shape)
    scale = radius(canonical, centroid(canonical))

    rotation = random_rotation(rot_bin[0], rot_bin[1], rng)
    angle = float(np.rad2deg(np.linalg.norm(Rotation.from_matrix(rotation).as_rotvec())))
    offset = _unit_directions(1, rng)[0] * 0.5 * scale * rng.uniform() ** (1.0 / 3.0)
    query_pose = RigidTransform(rotation, offset)
    # axis-aligned faces would sit exactly on the culling boundary
    model = apply_rigid(RigidTransform(uniform_rotation(rng), np.zeros(3)), canonical)

    posed = apply_rigid(query_pose, model)
    if full_views:
        reference_clean, query_clean = PointCloud(model.points), PointCloud(posed.points)
    else:
        reference_clean = partial_view(model, VIEW_DIRECTION, occlusion_fraction, rng)
        query_clean = partial_view(posed, VIEW_DIRECTION, occlusion_fraction, rng)

    gt = query_pose.inverse()
    delta = pipeline.delta_for(scale) if pipeline is not None else DEFAULT_OVERLAP_DELTA * scale
    ratio = overlap_ratio(query_clean, reference_clean, gt, delta)
    sigma = noise_sigma * scale
    return BenchmarkPair(
        query=_corrupt(query_clean, sigma, outlier_fraction, rng),
        reference=_corrupt(reference_clean, sigma, outlier_fraction, rng),
        gt=gt,
        rotation_distance_deg=angle,
        noise_sigma=noise_sigma,
        outlier_fraction=outlier_fraction,
        overlap_ratio=ratio,
        model=model,
        model_radius=scale,
        rot_bin=(float(rot_bin[0]), float(rot_bin[1])),
        overlap_delta=delta,
    )
