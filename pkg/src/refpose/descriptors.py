# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

"""Per-point and global descriptor providers.

A provider turns LRF-normalized neighborhoods into one feature row per region. The pipeline only
talks to :class:`DescriptorProvider`; which concrete provider is used comes from the
``descriptor`` entry of the pipeline configuration (see :func:`make_provider`)."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Callable

import numpy as np

from ._warnings import _warn_user
from .errors import ConfigError, DimensionMismatch, ZeroVector
from .fileio import read_feature_matrix

if TYPE_CHECKING:  # pragma: no cover
    from collections.abc import Sequence
    from typing import Any, Optional, Union

    from .config import DescriptorProviderSpec
    from .geometry import PointCloud
    from .reference_frame import LocalRegion

POSITIONAL_FREQUENCIES = 8
POSITIONAL_DIM = 6 * POSITIONAL_FREQUENCIES


def _normalize_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    return vectors / np.where(norms > 0, norms, 1.0)


@dataclass(frozen=True)
class FeatureSet:
    """``N x d`` feature rows. With ``background`` set, row 0 is the background token."""

    vectors: np.ndarray
    background: bool = False

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64, ndmin=2)
        if vectors.ndim != 2:
            raise ValueError(f"Feature vectors must be a matrix, got shape {vectors.shape}.")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("Feature vectors must be finite.")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def points(self) -> np.ndarray:
        """Rows belonging to points (background row excluded)."""
        return self.vectors[1:] if self.background else self.vectors

    def with_background(self, token: Optional[np.ndarray] = None) -> FeatureSet:
        """Prepend the background token (``e₀`` by default)."""
        if self.background:
            return self
        token = background_token(self.dim) if token is None else np.asarray(token, dtype=np.float64)
        if token.shape != (self.dim,):
            raise DimensionMismatch(f"Background token of shape {token.shape} for features of dim {self.dim}.")
        return FeatureSet(np.vstack([token, self.vectors]), background=True)

    def scaled(self, factor: float) -> FeatureSet:
        return FeatureSet(self.vectors * factor, self.background)


def background_token(dim: int) -> np.ndarray:
    """Fixed unit vector along the first basis direction."""
    token = np.zeros(dim)
    token[0] = 1.0
    return token


def tile_to_dim(vectors: np.ndarray, dim: int) -> np.ndarray:
    """Repeat the columns of ``vectors`` until ``dim`` columns are filled, then L2-normalize rows."""
    vectors = np.atleast_2d(vectors)
    repeats = -(-dim // vectors.shape[1])
    return _normalize_rows(np.tile(vectors, (1, repeats))[:, :dim])


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """``aᵀb / (|a||b|)`` clipped to [-1, 1].

    :raises ZeroVector: if either vector has zero norm"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"Vectors of shape {a.shape} and {b.shape}.")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise ZeroVector("Cosine similarity of a zero vector is undefined.")
    return float(np.clip(a @ b / (norm_a * norm_b), -1.0, 1.0))


def positional_encoding(cloud: Union[PointCloud, np.ndarray], frequencies: int = POSITIONAL_FREQUENCIES) -> FeatureSet:
    """Sinusoidal encoding of ``(x, y, z)`` at ``frequencies`` octave-half steps.

    Each coordinate contributes ``sin``/``cos`` at ``π·2^(k/2)``; rows have unit norm."""
    points = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)
    omega = np.pi * 2.0 ** (np.arange(frequencies) / 2.0)
    phases = points[:, :, None] * omega  # (N, 3, F)
    encoded = np.concatenate([np.sin(phases), np.cos(phases)], axis=2).reshape(len(points), -1)
    return FeatureSet(encoded / np.sqrt(3 * frequencies))


def combine_features(features: FeatureSet, positions: FeatureSet, weight: float) -> FeatureSet:
    """Concatenate unit descriptor rows and unit positional rows as ``[√(1-w)·f, √w·e]``."""
    if len(features) != len(positions):
        raise DimensionMismatch(f"{len(features)} descriptor rows for {len(positions)} positions.")
    if weight <= 0:
        return features
    return FeatureSet(np.hstack([np.sqrt(1.0 - weight) * features.vectors, np.sqrt(weight) * positions.vectors]))


class DescriptorProvider:
    """Computes descriptors for local regions.

    :param callback: dict with ``describe_points`` (and optionally ``describe_global``) pointing to
        functions with the signatures of the methods of the same name
    :param dim: descriptor dimension ``d``
    :param logger: logger instance
    :param prefix: prefix for (debug) logging with the logger instance"""

    def __init__(
        self,
        callback: Optional[dict[str, Callable]] = None,
        dim: int = 256,
        logger: Optional[logging.Logger] = None,
        prefix: str = "",
    ):
        super().__init__()
        self.dim = dim
        self.logger = logger
        self._prefix = prefix
        self.callback = callback if callback else {}

        if not isinstance(self.callback, dict):
            raise TypeError("Argument 'callback' has to be a dict with name, callback function.")

        if not set(self.callback) <= self._allowed_callbacks():
            raise AttributeError(f"Only {self._allowed_callbacks()} are allowed as callback functions.")

        if "describe_points" not in self.callback and type(self).describe_points is DescriptorProvider.describe_points:
            raise TypeError("Function describe_points has to be implemented or passed as callback function.")

    def _allowed_callbacks(self) -> set[str]:
        """Returns allowed keys of the callback argument"""
        return {"describe_points", "describe_global"}

    def describe_points(
        self,
        cloud: PointCloud,
        regions: Sequence[LocalRegion],
        local_sets: Sequence[Optional[np.ndarray]],
        role: str = "query",
    ) -> FeatureSet:
        """One descriptor row per region.

        :param cloud: the (GRF-normalized) cloud the regions index into
        :param regions: regions from :func:`refpose.reference_frame.local_regions`
        :param local_sets: LRF-normalized members per region, ``None`` for degenerate frames
        :param role: ``"query"`` or ``"reference"``"""
        features = self.callback["describe_points"](cloud, regions, local_sets, role)
        if not isinstance(features, FeatureSet):
            features = FeatureSet(features)
        if len(features) != len(regions):
            raise DimensionMismatch(f"Provider returned {len(features)} rows for {len(regions)} regions.")
        if self.logger:
            self.logger.debug("%sDescribed %d regions (%s, dim %d)", self._prefix, len(regions), role, features.dim)
        return features

    def describe_global(self, cloud: PointCloud, features: FeatureSet) -> np.ndarray:
        """Mean of the point descriptors re-normalized to unit length.

        :raises ZeroVector: if the descriptors cancel out"""
        if "describe_global" in self.callback:
            return np.asarray(self.callback["describe_global"](cloud, features), dtype=np.float64)

        mean = features.points.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0:
            raise ZeroVector("Point descriptors average to zero; global descriptor is undefined.")
        return mean / norm


class OccupancyDescriptorProvider(DescriptorProvider):
    """Classical baseline: occupancy of a ``grid³`` lattice over ``[-1, 1]³`` in LRF coordinates.

    Regions without a valid LRF get a histogram of member distances to the center point instead
    (``radial_bins`` bins over ``[0, 1]`` after division by the largest distance). Both variants
    are tiled to ``dim`` columns and L2-normalized."""

    def __init__(
        self,
        dim: int = 256,
        grid: int = 4,
        radial_bins: int = 16,
        logger: Optional[logging.Logger] = None,
        prefix: str = "",
    ):
        self.grid = grid
        self.radial_bins = radial_bins
        super().__init__(dim=dim, logger=logger, prefix=prefix)

    def occupancy(self, local_sets: Sequence[np.ndarray]) -> np.ndarray:
        """Occupancy counts per region, shape ``(M, grid³)``."""
        n_cells = self.grid**3
        counts = np.zeros((len(local_sets), n_cells))
        if not local_sets:
            return counts
        owners = np.repeat(np.arange(len(local_sets)), [len(points) for points in local_sets])
        points = np.concatenate(local_sets, axis=0)
        cells = np.clip(np.floor((points + 1.0) * 0.5 * self.grid).astype(np.intp), 0, self.grid - 1)
        flat = (cells[:, 0] * self.grid + cells[:, 1]) * self.grid + cells[:, 2]
        counts += np.bincount(owners * n_cells + flat, minlength=len(local_sets) * n_cells).reshape(counts.shape)
        return counts

    def distance_histogram(self, cloud: PointCloud, region: LocalRegion) -> np.ndarray:
        members = cloud.points[region.member_indices]
        distances = np.linalg.norm(members - cloud.points[region.center_index], axis=1)
        top = distances.max()
        scaled = distances / top if top > 0 else distances
        histogram, _ = np.histogram(scaled, bins=self.radial_bins, range=(0.0, 1.0))
        return histogram.astype(np.float64)

    def describe_points(
        self,
        cloud: PointCloud,
        regions: Sequence[LocalRegion],
        local_sets: Sequence[Optional[np.ndarray]],
        role: str = "query",
    ) -> FeatureSet:
        if len(local_sets) != len(regions):
            raise DimensionMismatch(f"{len(local_sets)} local sets for {len(regions)} regions.")

        valid = [i for i, points in enumerate(local_sets) if points is not None]
        degenerate = [i for i, points in enumerate(local_sets) if points is None]
        vectors = np.zeros((len(regions), self.dim))
        if valid:
            occupancy = self.occupancy([local_sets[i] for i in valid])
            vectors[valid] = tile_to_dim(occupancy, self.dim)
        if degenerate:
            histograms = np.array([self.distance_histogram(cloud, regions[i]) for i in degenerate])
            vectors[degenerate] = tile_to_dim(histograms, self.dim)
            if self.logger:
                self.logger.debug(
                    "%s%d of %d regions use the distance-histogram fallback",
                    self._prefix,
                    len(degenerate),
                    len(regions),
                )
        if self.logger:
            self.logger.debug("%sOccupancy descriptors for %d %s regions", self._prefix, len(regions), role)
        return FeatureSet(vectors)


class FileDescriptorProvider(DescriptorProvider):
    """Replays externally computed features from float32 matrices (one file per role).

    Row ``i`` of a matrix belongs to point ``i`` of the corresponding cloud; the descriptor of a
    region is the row of its center point.

    :param query: feature matrix of the query cloud
    :param reference: feature matrix of the reference cloud
    :param normalize: L2-normalize rows"""

    def __init__(
        self,
        query: Optional[Union[str, Path]] = None,
        reference: Optional[Union[str, Path]] = None,
        normalize: bool = True,
        dim: Optional[int] = None,
        logger: Optional[logging.Logger] = None,
        prefix: str = "",
    ):
        self.paths = {"query": query, "reference": reference}
        self.normalize = normalize
        self._matrices: dict[str, np.ndarray] = {}
        super().__init__(dim=dim or 0, logger=logger, prefix=prefix)

    def matrix(self, role: str) -> np.ndarray:
        if role not in self.paths:
            raise KeyError(f"Role {role} does not exist. Available roles: {list(self.paths)}")
        if role not in self._matrices:
            path = self.paths[role]
            if path is None:
                raise ConfigError(f"No feature file configured for role {role}", key=f"descriptor.parameters.{role}")
            matrix = read_feature_matrix(path)
            if self.dim and matrix.shape[1] != self.dim:
                raise DimensionMismatch(f"{path}: {matrix.shape[1]} columns, expected {self.dim}.")
            if self.logger:
                self.logger.info("%sLoaded %s features %s from %s", self._prefix, role, matrix.shape, path)
            self._matrices[role] = matrix
        return self._matrices[role]

    def describe_points(
        self,
        cloud: PointCloud,
        regions: Sequence[LocalRegion],
        local_sets: Sequence[Optional[np.ndarray]],
        role: str = "query",
    ) -> FeatureSet:
        matrix = self.matrix(role)
        if matrix.shape[0] != len(cloud):
            raise DimensionMismatch(f"{matrix.shape[0]} feature rows for a cloud of {len(cloud)} points ({role}).")
        rows = matrix[[region.center_index for region in regions]]
        if self.normalize:
            if np.any(np.linalg.norm(rows, axis=1) == 0):
                _warn_user(f"Zero feature rows in the {role} matrix are left unnormalized.")
            rows = _normalize_rows(rows)
        return FeatureSet(rows)


PROVIDERS: dict[str, type[DescriptorProvider]] = {
    "occupancy": OccupancyDescriptorProvider,
    "file": FileDescriptorProvider,
}


def make_provider(
    spec: DescriptorProviderSpec, dim: int = 256, logger: Optional[logging.Logger] = None
) -> DescriptorProvider:
    """Instantiate the registered provider named by ``spec.provider``."""
    if spec.provider not in PROVIDERS:
        raise KeyError(f"Descriptor provider {spec.provider} does not exist. Available providers: {list(PROVIDERS)}")
    parameters: dict[str, Any] = dict(spec.parameters)
    if spec.provider == "occupancy":
        parameters.setdefault("dim", dim)
    return PROVIDERS[spec.provider](logger=logger, prefix=f"{spec.provider}: ", **parameters)
