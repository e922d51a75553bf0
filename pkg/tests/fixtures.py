#!/usr/bin/env python

import typing
from typing import cast

import numpy as np
import pytest

from refpose.config import FrameConfig, PipelineConfig
from refpose.geometry import PointCloud
from refpose.synthetic import ShapeSpec, generate_shape

# pylint: disable=missing-function-docstring


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def skewed_points(rng: np.random.Generator, count: int) -> np.ndarray:
    """Anisotropic blob skewed along its thinnest axis."""
    base = rng.normal(size=(count, 3))
    points = base * np.array([3.0, 2.0, 1.0])
    points[:, 2] += 0.5 * base[:, 0] ** 2
    return points


FixtureCloud = typing.Annotated[PointCloud, pytest.fixture]


@pytest.fixture(scope="session")
def composite_cloud() -> FixtureCloud:
    return cast(FixtureCloud, generate_shape(ShapeSpec("composite", point_count=600, seed=3)))


@pytest.fixture(scope="session")
def asymmetric_cloud() -> FixtureCloud:
    return cast(FixtureCloud, PointCloud(skewed_points(np.random.default_rng(11), 200)))


FixturePipeline = typing.Annotated[PipelineConfig, pytest.fixture]


@pytest.fixture(scope="session")
def small_pipeline() -> FixturePipeline:
    config = PipelineConfig(
        n_coarse=64,
        n_fine=256,
        n_hypotheses=60,
        frame=FrameConfig(n_neighbors=32, local_radius=0.3),
        feature_dim=128,
    )
    return cast(FixturePipeline, config)
