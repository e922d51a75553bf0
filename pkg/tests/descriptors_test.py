"""Descriptor providers and feature helpers"""

import logging

import numpy as np
import pytest

from refpose.config import DescriptorProviderSpec, FrameConfig
from refpose.descriptors import (
    POSITIONAL_DIM,
    DescriptorProvider,
    FeatureSet,
    FileDescriptorProvider,
    OccupancyDescriptorProvider,
    background_token,
    combine_features,
    cosine_similarity,
    make_provider,
    positional_encoding,
    tile_to_dim,
)
from refpose.errors import DimensionMismatch, ZeroVector
from refpose.fileio import write_feature_matrix
from refpose.geometry import PointCloud, RigidTransform, apply_rigid
from refpose.reference_frame import LocalRegion, build_lrfs, local_regions, lrf_normalize

from .fixtures import FixtureCloud, random_rotation

# pylint: disable=missing-function-docstring


def describe(provider: DescriptorProvider, cloud: PointCloud, cfg: FrameConfig) -> FeatureSet:
    regions = local_regions(cloud, cfg)
    return provider.describe_points(cloud, regions, lrf_normalize(cloud, regions, build_lrfs(cloud, regions)))


def test_cosine_similarity() -> None:
    a = np.array([1.0, 2.0, 3.0])
    assert cosine_similarity(a, a) == pytest.approx(1.0)
    assert cosine_similarity(np.array([1.0, 0, 0]), np.array([0, 2.0, 0])) == 0.0
    assert cosine_similarity(a, -a) == pytest.approx(-1.0)
    with pytest.raises(ZeroVector):
        cosine_similarity(a, np.zeros(3))
    with pytest.raises(DimensionMismatch):
        cosine_similarity(a, np.ones(4))


def test_occupancy_is_deterministic_and_invariant(composite_cloud: FixtureCloud) -> None:
    provider = OccupancyDescriptorProvider(dim=96, logger=logging.getLogger(), prefix="occupancy: ")
    cfg = FrameConfig(n_neighbors=32)
    features = describe(provider, composite_cloud, cfg)
    assert len(features) == len(composite_cloud)
    assert features.dim == 96
    assert np.allclose(np.linalg.norm(features.vectors, axis=1), 1.0)
    assert np.array_equal(describe(provider, composite_cloud, cfg).vectors, features.vectors)

    rng = np.random.default_rng(0)
    moved = apply_rigid(RigidTransform(random_rotation(rng), rng.normal(size=3)), composite_cloud)
    assert np.allclose(describe(provider, moved, cfg).vectors, features.vectors, atol=1e-6)


def test_occupancy_single_cell() -> None:
    provider = OccupancyDescriptorProvider(dim=64)
    cloud = PointCloud([[0.0, 0, 0], [0.01, 0, 0], [0, 0.01, 0]])
    region = LocalRegion(0, np.arange(3))
    local = np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [0.3, 0.15, 0.4]])
    vector = provider.describe_points(cloud, [region], [local]).vectors[0]
    expected = np.zeros(64)
    expected[(2 * 4 + 2) * 4 + 2] = 1.0
    assert np.array_equal(vector, expected)

    tiled = OccupancyDescriptorProvider(dim=256).describe_points(cloud, [region], [local]).vectors[0]
    assert np.count_nonzero(tiled) == 4
    assert np.allclose(tiled[tiled > 0], 0.5)


def test_occupancy_degenerate_fallback() -> None:
    provider = OccupancyDescriptorProvider(dim=32, radial_bins=4)
    cloud = PointCloud([[0.0, 0, 0], [1.0, 0, 0], [0, 2.0, 0], [0, 0, 4.0]])
    region = LocalRegion(0, np.arange(4))
    vector = provider.describe_points(cloud, [region], [None]).vectors[0]
    # distances 0, 1/4, 2/4, 4/4 land in bins 0, 1, 2, 3
    assert np.allclose(vector, np.full(32, 1 / np.sqrt(32)))


def test_tile_and_background() -> None:
    tiled = tile_to_dim(np.array([[3.0, 4.0]]), 5)
    assert np.allclose(tiled, np.array([[3, 4, 3, 4, 3]]) / np.sqrt(59))
    assert np.array_equal(background_token(4), [1, 0, 0, 0])

    features = FeatureSet(np.eye(3)[1:])
    with_background = features.with_background()
    assert with_background.background
    assert len(with_background) == 3
    assert np.array_equal(with_background.points, features.vectors)
    assert with_background.with_background() is with_background
    with pytest.raises(DimensionMismatch):
        features.with_background(np.ones(2))


def test_positional_encoding() -> None:
    points = np.random.default_rng(1).uniform(-1, 1, size=(20, 3))
    encoded = positional_encoding(points)
    assert encoded.dim == POSITIONAL_DIM
    assert np.allclose(np.linalg.norm(encoded.vectors, axis=1), 1.0)
    assert np.allclose(encoded.vectors[:, 0], np.sin(np.pi * points[:, 0]) / np.sqrt(24))

    combined = combine_features(FeatureSet(tile_to_dim(np.ones((20, 1)), 8)), encoded, 0.25)
    assert combined.dim == 8 + POSITIONAL_DIM
    assert np.allclose(np.linalg.norm(combined.vectors, axis=1), 1.0)
    with pytest.raises(DimensionMismatch):
        combine_features(FeatureSet(np.ones((3, 2))), encoded, 0.5)


def test_callback_provider() -> None:
    def describe_points(cloud, regions, local_sets, role):
        return np.tile([1.0, 0.0] if role == "query" else [0.0, 1.0], (len(regions), 1))

    provider = DescriptorProvider(callback={"describe_points": describe_points}, dim=2)
    cloud = PointCloud(np.eye(3))
    regions = [LocalRegion(i, np.arange(3)) for i in range(3)]
    features = provider.describe_points(cloud, regions, [None] * 3, "reference")
    assert np.array_equal(features.vectors, [[0, 1]] * 3)
    assert np.array_equal(provider.describe_global(cloud, features), [0, 1])

    with pytest.raises(ZeroVector):
        provider.describe_global(cloud, FeatureSet([[1.0, 0], [-1.0, 0]]))
    short = DescriptorProvider(callback={"describe_points": lambda *args: np.ones((1, 2))}, dim=2)
    with pytest.raises(DimensionMismatch):
        short.describe_points(cloud, regions, [None] * 3)


def test_callback_provider_validation() -> None:
    with pytest.raises(TypeError, match="has to be implemented"):
        DescriptorProvider()
    with pytest.raises(AttributeError, match="allowed as callback"):
        DescriptorProvider(callback={"describe_points": print, "train": print})
    with pytest.raises(TypeError, match="has to be a dict"):
        DescriptorProvider(callback=[print])  # type: ignore[arg-type]


def test_file_provider(tmp_path) -> None:
    matrix = np.zeros((4, 3))
    matrix[:, 0] = [1, 2, 3, 4]
    matrix[:, 2] = 1
    write_feature_matrix(tmp_path / "q.bin", matrix)
    provider = make_provider(DescriptorProviderSpec("file", {"query": str(tmp_path / "q.bin")}))
    assert isinstance(provider, FileDescriptorProvider)

    cloud = PointCloud(np.random.default_rng(2).normal(size=(4, 3)))
    regions = [LocalRegion(3, np.array([3])), LocalRegion(1, np.array([1]))]
    features = provider.describe_points(cloud, regions, [None, None], "query")
    assert np.allclose(features.vectors, [[4, 0, 1] / np.sqrt(17), [2, 0, 1] / np.sqrt(5)])

    with pytest.raises(KeyError, match="Available roles"):
        provider.matrix("other")
    with pytest.raises(ValueError, match="No feature file"):
        provider.describe_points(cloud, regions, [None, None], "reference")
    with pytest.raises(DimensionMismatch):
        provider.describe_points(PointCloud(np.zeros((2, 3))), regions[1:], [None], "query")


def test_file_provider_zero_rows_warn(tmp_path) -> None:
    write_feature_matrix(tmp_path / "p.bin", np.zeros((2, 3)))
    provider = FileDescriptorProvider(reference=tmp_path / "p.bin")
    with pytest.warns(UserWarning, match="Zero feature rows"):
        features = provider.describe_points(
            PointCloud(np.zeros((2, 3))), [LocalRegion(0, np.array([0]))], [None], "reference"
        )
    assert np.array_equal(features.vectors, [[0, 0, 0]])


def test_make_provider() -> None:
    provider = make_provider(DescriptorProviderSpec("occupancy", {"grid": 3}), dim=54)
    assert isinstance(provider, OccupancyDescriptorProvider)
    assert (provider.grid, provider.dim) == (3, 54)
    with pytest.raises(KeyError, match="Available providers"):
        make_provider(DescriptorProviderSpec("learned"))
