# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

"""Coarse-to-fine relative pose estimation.

The coarse stage matches sparse farthest-point samples of both GRF-normalized clouds, samples
pose hypotheses from triplets of the overlap-aware correlation and keeps the hypothesis with the
smallest mean alignment distance. The fine stage matches dense samples of the coarsely aligned
clouds and solves a weighted Kabsch problem on the extracted correspondences.

Example:

.. code-block:: python

    estimator = PoseEstimator(PipelineConfig(), logger=logging.getLogger("refpose"))
    estimate = estimator.estimate(query_cloud, reference_cloud)
    aligned = apply_rigid(estimate.pose, query_cloud)
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.spatial import cKDTree

from .config import PipelineConfig
from .descriptors import FeatureSet, combine_features, make_provider, positional_encoding
from .errors import DegenerateGeometry, InsufficientCorrespondences, NoValidHypothesis
from .geometry import PointCloud, RigidTransform, apply_rigid, centroid, compose, inverse, radius
from .matching import (
    CorrelationField,
    CorrespondenceSet,
    OverlapScores,
    build_correlation,
    extract_correspondences,
    heuristic_overlap,
)
from .reference_frame import (
    build_grf,
    build_lrfs,
    centered_frame,
    centered_frames,
    local_regions,
    lrf_normalize,
    normalize_to_frame,
)

if TYPE_CHECKING:  # pragma: no cover
    from typing import Any, Optional

    from .descriptors import DescriptorProvider

SCORE_EPSILON = 1e-9
_TRIPLET_AREA_TOL = 1e-10


def farthest_point_sampling(points: np.ndarray, n_samples: int) -> np.ndarray:
    """Indices of ``n_samples`` farthest-point samples starting at index 0 (all indices if the
    cloud is not larger than ``n_samples``)."""
    points = np.asarray(points, dtype=np.float64)
    if n_samples >= len(points):
        return np.arange(len(points))
    selected = np.zeros(n_samples, dtype=np.intp)
    nearest = np.full(len(points), np.inf)
    for k in range(1, n_samples):
        offset = points - points[selected[k - 1]]
        nearest = np.minimum(nearest, np.einsum("ij,ij->i", offset, offset))
        selected[k] = int(np.argmax(nearest))
    return selected


def kabsch_weighted(source: np.ndarray, target: np.ndarray, weights: Optional[np.ndarray] = None) -> RigidTransform:
    """Rigid transform minimizing ``Σ wᵢ |R·sᵢ + t - tᵢ|²`` (reflections corrected).

    :param source: ``(N, 3)`` points to be moved
    :param target: ``(N, 3)`` corresponding points
    :param weights: non-negative weights, uniform if omitted
    :raises DegenerateGeometry: for fewer than three weighted pairs or a rank deficient problem"""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise ValueError(f"Point arrays must both be (N, 3), got {source.shape} and {target.shape}.")
    weights = np.ones(len(source)) if weights is None else np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(source),) or np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("Weights must be finite, non-negative and one per pair.")
    if np.count_nonzero(weights) < 3:
        raise DegenerateGeometry(f"Need at least 3 weighted pairs, got {np.count_nonzero(weights)}.")

    w = weights / weights.sum()
    mean_source = w @ source
    mean_target = w @ target
    cross = (source - mean_source).T @ ((target - mean_target) * w[:, None])
    u, sigma, vt = np.linalg.svd(cross)
    if sigma[0] <= 0 or sigma[1] <= 1e-12 * sigma[0]:
        raise DegenerateGeometry(f"Correspondences are collinear (singular values {sigma.tolist()}).")

    correction = np.diag([1.0, 1.0, np.sign(np.linalg.det(vt.T @ u.T)) or 1.0])
    rotation = vt.T @ correction @ u.T
    return RigidTransform(rotation, mean_target - rotation @ mean_source)


@dataclass(frozen=True)
class PoseHypothesis:
    """Hypothesis mapping query onto reference; ``score = 1 / (distance + 1e-9)``."""

    pose: RigidTransform
    score: float
    distance: float
    index: int = 0
    triplet: tuple[tuple[int, int], ...] = ()

    def to_dict(self) -> dict[str, Any]:
        data = self.pose.to_dict()
        data.update(score=self.score, distance=self.distance)
        return data


def score_hypothesis(h: RigidTransform, qc: PointCloud, pc: PointCloud) -> tuple[float, float]:
    """``D = mean_p min_q |Rᵀ(q - t) - p|`` and ``ξ = 1 / (D + 1e-9)`` for ``h = (R, t)``."""
    moved = (qc.points - h.translation) @ h.rotation
    distances, _ = cKDTree(moved).query(pc.points)
    distance = float(np.mean(distances))
    return distance, 1.0 / (distance + SCORE_EPSILON)


def _sampling_mass(x: CorrelationField) -> np.ndarray:
    """Cumulative sampling mass over the non-background block of the row softmax."""
    mass = x.row_softmax[1:, 1:].ravel()
    return np.cumsum(mass)


def sample_hypotheses(
    x: CorrelationField,
    q: PointCloud,
    p: PointCloud,
    n_h: int,
    rng: np.random.Generator,
    max_attempts_factor: int = 10,
) -> list[PoseHypothesis]:
    """Solve Kabsch on triplets of point pairs drawn proportional to the row softmax.

    Point ``i`` of ``q`` belongs to correlation row ``i + 1`` (likewise for ``p`` and columns).
    Triplets with repeated indices or collinear points are rejected; at most
    ``max_attempts_factor * n_h`` triplets are drawn.

    :raises NoValidHypothesis: if every drawn triplet was degenerate"""
    n_q, n_p = x.shape[0] - 1, x.shape[1] - 1
    if n_q != len(q) or n_p != len(p):
        raise ValueError(f"Correlation of shape {x.shape} does not index clouds of {len(q)} and {len(p)} points.")
    cumulative = _sampling_mass(x)
    total = cumulative[-1] if len(cumulative) else 0.0
    if not total > 0:
        raise NoValidHypothesis("Correlation assigns no mass outside the background token.")

    hypotheses: list[PoseHypothesis] = []
    for _ in range(max_attempts_factor * n_h):
        if len(hypotheses) == n_h:
            break
        flat = np.minimum(np.searchsorted(cumulative, rng.random(3) * total, side="right"), len(cumulative) - 1)
        rows, cols = np.divmod(flat, n_p)
        if len(set(rows.tolist())) < 3 or len(set(cols.tolist())) < 3:
            continue
        source, target = q.points[rows], p.points[cols]
        if (
            np.linalg.norm(np.cross(source[1] - source[0], source[2] - source[0])) < _TRIPLET_AREA_TOL
            or np.linalg.norm(np.cross(target[1] - target[0], target[2] - target[0])) < _TRIPLET_AREA_TOL
        ):
            continue
        try:
            pose = kabsch_weighted(source, target)
        except DegenerateGeometry:
            continue
        distance, score = score_hypothesis(inverse(pose), q, p)
        hypotheses.append(
            PoseHypothesis(pose, score, distance, len(hypotheses), tuple(zip(rows.tolist(), cols.tolist())))
        )

    if not hypotheses:
        raise NoValidHypothesis(f"All {max_attempts_factor * n_h} sampled triplets were degenerate.")
    return hypotheses


def select_hypothesis(hypotheses: list[PoseHypothesis]) -> PoseHypothesis:
    """Highest score, lowest index on ties."""
    return hypotheses[int(np.argmax([h.score for h in hypotheses]))]


def _weighted_rms(source: np.ndarray, target: np.ndarray, weights: np.ndarray) -> float:
    squared = np.sum((source - target) ** 2, axis=1)
    return float(np.sqrt(weights @ squared / weights.sum()))


@dataclass(frozen=True)
class CoarseResult:
    """Outcome of the coarse stage.

    ``pose`` is the hypothesis pose re-solved on its inlier correspondences (the hypothesis pose
    itself if there were fewer than three)."""

    hypothesis: PoseHypothesis
    pose: RigidTransform
    correlation: CorrelationField
    query_samples: np.ndarray
    reference_samples: np.ndarray
    n_hypotheses: int
    n_inliers: int
    residual: float


@dataclass(frozen=True)
class FineResult:
    """Incremental pose of one fine iteration with the weighted RMS residual of its
    correspondences before (``residual_before``) and after (``residual``) applying it."""

    increment: RigidTransform
    correspondences: CorrespondenceSet
    correlation: CorrelationField
    residual: float
    residual_before: float


@dataclass(frozen=True)
class PoseEstimate:
    """Final camera-frame pose (query -> reference) and stage summaries."""

    pose: RigidTransform
    coarse: PoseHypothesis
    n_corr: int
    residual: float
    coarse_residual: float

    def to_dict(self) -> dict[str, Any]:
        data = self.pose.to_dict()
        data.update(
            coarse=self.coarse.to_dict(),
            n_corr=self.n_corr,
            residual=self.residual,
            coarse_residual=self.coarse_residual,
        )
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class PoseEstimator:
    """Relative pose estimation between two partially overlapping clouds.

    The estimator is frozen after construction; reconfigure it inside a ``with`` block:

    .. code-block:: python

        with estimator as unlocked:
            unlocked.config = replace(unlocked.config, n_hypotheses=500)

    :param config: pipeline parameters
    :param provider: descriptor provider (built from ``config.descriptor`` if omitted)
    :param logger: logger instance
    :param prefix: prefix for (debug) logging with the logger instance"""

    def __init__(
        self,
        config: Optional[PipelineConfig] = None,
        provider: Optional[DescriptorProvider] = None,
        logger: Optional[logging.Logger] = None,
        prefix: str = "",
    ):
        object.__setattr__(self, "_frozen", False)
        self.config = config if config is not None else PipelineConfig()
        self.logger = logger
        self._prefix = prefix
        self.provider = provider if provider is not None else make_provider(
            self.config.descriptor, dim=self.config.feature_dim, logger=logger
        )
        self._frozen = True

    def __setattr__(self, name, value):
        """Enforce that the configuration is not changed while the instance is frozen."""
        if self._frozen:
            raise AttributeError(f"Unable to set attribute {name} - Instance is frozen.")
        super().__setattr__(name, value)

    def __enter__(self) -> PoseEstimator:
        """Context manager of with statement - After __enter__ attributes may be replaced."""
        object.__setattr__(self, "_frozen", False)
        return self

    def __exit__(self, exception_type, exception_value, exception_traceback):
        """Context manager of with statement - Locks the instance again."""
        self._frozen = True

    def _features(
        self, cloud: PointCloud, centers: np.ndarray, role: str, weight: float, positions: np.ndarray
    ) -> FeatureSet:
        regions = local_regions(cloud, self.config.frame, centers)
        frames = build_lrfs(cloud, regions) if self.config.use_lrf else centered_frames(cloud, regions)
        if self.logger:
            self.logger.debug(
                "%s%s: %d regions, %d kNN fallbacks, %d degenerate frames",
                self._prefix,
                role,
                len(regions),
                sum(region.knn_fallback for region in regions),
                int(np.count_nonzero(frames.degenerate)),
            )
        features = self.provider.describe_points(cloud, regions, lrf_normalize(cloud, regions, frames), role)
        if weight > 0:
            features = combine_features(features, positional_encoding(positions), weight)
        return features

    def _correlate(self, fq: FeatureSet, fp: FeatureSet) -> CorrelationField:
        if self.config.use_overlap:
            oq, op = heuristic_overlap(fq, fp, self.config.overlap_temperature, self.config.overlap_margin)
        else:
            oq, op = OverlapScores(np.ones(len(fq) + 1)), OverlapScores(np.ones(len(fp) + 1))
        scale = np.sqrt(self.config.logit_scale)
        return build_correlation(fq.with_background().scaled(scale), fp.with_background().scaled(scale), oq, op)

    def coarse_pose(
        self,
        qg: PointCloud,
        pg: PointCloud,
        rng: Optional[np.random.Generator] = None,
        q_cam: Optional[PointCloud] = None,
        p_cam: Optional[PointCloud] = None,
    ) -> CoarseResult:
        """Coarse stage on GRF-normalized clouds.

        Hypotheses are solved on ``q_cam``/``p_cam`` (same point order as ``qg``/``pg``) when given,
        otherwise in GRF coordinates."""
        cfg = self.config
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        q_solve = q_cam if q_cam is not None else qg
        p_solve = p_cam if p_cam is not None else pg

        iq = farthest_point_sampling(qg.points, cfg.n_coarse)
        ip = farthest_point_sampling(pg.points, cfg.n_coarse)
        fq = self._features(qg, iq, "query", cfg.coarse_position_weight, qg.points[iq])
        fp = self._features(pg, ip, "reference", cfg.coarse_position_weight, pg.points[ip])
        correlation = self._correlate(fq, fp)

        q_samples = PointCloud(q_solve.points[iq])
        p_samples = PointCloud(p_solve.points[ip])
        hypotheses = sample_hypotheses(
            correlation, q_samples, p_samples, cfg.n_hypotheses, rng, cfg.max_attempts_factor
        )
        best = select_hypothesis(hypotheses)
        if self.logger:
            self.logger.debug(
                "%sCoarse: %d hypotheses, best #%d with D=%.6g",
                self._prefix,
                len(hypotheses),
                best.index,
                best.distance,
            )

        pose, n_inliers, residual = self._refine_on_inliers(best, correlation, q_samples, p_samples, p_solve)
        return CoarseResult(best, pose, correlation, iq, ip, len(hypotheses), n_inliers, residual)

    def _refine_on_inliers(
        self,
        best: PoseHypothesis,
        correlation: CorrelationField,
        q_samples: PointCloud,
        p_samples: PointCloud,
        p_solve: PointCloud,
    ) -> tuple[RigidTransform, int, float]:
        """Re-solve the best hypothesis on the extracted correspondences it agrees with."""
        correspondences = extract_correspondences(correlation, self.config.mutual_threshold)
        source = q_samples.points[correspondences.query_indices - 1]
        target = p_samples.points[correspondences.reference_indices - 1]
        weights = correspondences.weights
        limit = self.config.inlier_threshold * radius(p_solve, centroid(p_solve))
        inliers = np.linalg.norm(best.pose.apply(source) - target, axis=1) <= limit
        n_inliers = int(np.count_nonzero(inliers))
        if n_inliers == 0:
            return best.pose, 0, best.distance

        pose = best.pose
        if n_inliers >= 3:
            try:
                pose = kabsch_weighted(source[inliers], target[inliers], weights[inliers])
            except DegenerateGeometry:
                pass
        residual = _weighted_rms(pose.apply(source[inliers]), target[inliers], weights[inliers])
        return pose, n_inliers, residual

    def fine_pose(self, q_aligned: PointCloud, p: PointCloud) -> FineResult:
        """One fine iteration; returns the incremental pose to compose onto the current estimate.

        :raises InsufficientCorrespondences: if fewer than three correspondences survive extraction"""
        cfg = self.config
        iq = farthest_point_sampling(q_aligned.points, cfg.n_fine)
        ip = farthest_point_sampling(p.points, cfg.n_fine)

        center = centroid(p)
        scale = radius(p, center)
        fq = self._features(q_aligned, iq, "query", cfg.fine_position_weight, (q_aligned.points[iq] - center) / scale)
        fp = self._features(p, ip, "reference", cfg.fine_position_weight, (p.points[ip] - center) / scale)
        correlation = self._correlate(fq, fp)

        correspondences = extract_correspondences(correlation, cfg.mutual_threshold)
        if len(correspondences) < 3:
            raise InsufficientCorrespondences(f"Only {len(correspondences)} fine correspondences survived extraction.")
        source = q_aligned.points[iq][correspondences.query_indices - 1]
        target = p.points[ip][correspondences.reference_indices - 1]
        try:
            increment = kabsch_weighted(source, target, correspondences.weights)
        except DegenerateGeometry as exc:
            raise InsufficientCorrespondences(f"Fine correspondences are degenerate: {exc}") from exc

        before = _weighted_rms(source, target, correspondences.weights)
        after = _weighted_rms(increment.apply(source), target, correspondences.weights)
        if self.logger:
            self.logger.debug(
                "%sFine: %d correspondences, residual %.6g -> %.6g", self._prefix, len(correspondences), before, after
            )
        return FineResult(increment, correspondences, correlation, after, before)

    def estimate(
        self, q_cam: PointCloud, p_cam: PointCloud, rng: Optional[np.random.Generator] = None
    ) -> PoseEstimate:
        """Camera-frame relative pose mapping ``q_cam`` onto ``p_cam``."""
        rng = rng if rng is not None else np.random.default_rng(self.config.seed)
        frame = build_grf if self.config.use_grf else centered_frame
        qg = normalize_to_frame(q_cam, frame(q_cam))
        pg = normalize_to_frame(p_cam, frame(p_cam))

        coarse = self.coarse_pose(qg, pg, rng, q_cam, p_cam)
        pose = coarse.pose
        n_corr, residual, coarse_residual = coarse.n_inliers, coarse.residual, coarse.residual
        for iteration in range(self.config.fine_iterations):
            fine = self.fine_pose(apply_rigid(pose, q_cam), p_cam)
            if iteration == 0:
                coarse_residual = fine.residual_before
            pose = compose(fine.increment, pose)
            n_corr, residual = len(fine.correspondences), fine.residual

        if self.logger and self.logger.isEnabledFor(logging.INFO):
            self.logger.info(
                "%sEstimated pose: %d correspondences, residual %.6g (coarse %.6g)",
                self._prefix,
                n_corr,
                residual,
                coarse_residual,
            )
        return PoseEstimate(pose, coarse.hypothesis, n_corr, residual, coarse_residual)


def coarse_pose(
    qg: PointCloud, pg: PointCloud, cfg: Optional[PipelineConfig] = None, rng: Optional[np.random.Generator] = None
) -> PoseHypothesis:
    """Best coarse hypothesis between two GRF-normalized clouds (pose in GRF coordinates)."""
    return PoseEstimator(cfg).coarse_pose(qg, pg, rng).hypothesis


def fine_pose(q_aligned: PointCloud, p: PointCloud, cfg: Optional[PipelineConfig] = None) -> FineResult:
    return PoseEstimator(cfg).fine_pose(q_aligned, p)


def estimate_relative_pose(
    q_cam: PointCloud,
    p_cam: PointCloud,
    cfg: Optional[PipelineConfig] = None,
    rng: Optional[np.random.Generator] = None,
    logger: Optional[logging.Logger] = None,
) -> PoseEstimate:
    """Relative pose ``q_cam -> p_cam``; see :class:`PoseEstimator`."""
    return PoseEstimator(cfg, logger=logger).estimate(q_cam, p_cam, rng)
