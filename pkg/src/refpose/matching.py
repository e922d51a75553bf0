# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

"""Overlap-aware correlation with a background token, correspondence extraction and ground truth
labels. Index 0 of every correlation axis and overlap vector belongs to the background token."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit, softmax

from .errors import DimensionMismatch

if TYPE_CHECKING:  # pragma: no cover
    from .descriptors import FeatureSet
    from .geometry import PointCloud, RigidTransform

BACKGROUND_OVERLAP = 0.5


def _readonly(values, dtype=np.float64) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class CorrelationField:
    """Raw ``(Nq+1) x (Np+1)`` logits; the softmax views are derived on first access."""

    logits: np.ndarray

    def __post_init__(self):
        logits = _readonly(self.logits)
        if logits.ndim != 2 or min(logits.shape) < 1:
            raise ValueError(f"Correlation logits must be a non-empty matrix, got shape {logits.shape}.")
        object.__setattr__(self, "logits", logits)

    @property
    def shape(self) -> tuple[int, int]:
        return self.logits.shape  # type: ignore[return-value]

    @cached_property
    def row_softmax(self) -> np.ndarray:
        return softmax(self.logits, axis=1)

    @cached_property
    def col_softmax(self) -> np.ndarray:
        return softmax(self.logits, axis=0)


@dataclass(frozen=True)
class OverlapScores:
    """Per-point overlap probabilities, index 0 for the background token."""

    values: np.ndarray

    def __post_init__(self):
        values = _readonly(self.values)
        if values.ndim != 1:
            raise ValueError(f"Overlap scores must be a vector, got shape {values.shape}.")
        if np.any(values < 0.0) or np.any(values > 1.0) or not np.all(np.isfinite(values)):
            raise ValueError("Overlap scores must lie in [0, 1].")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class CorrespondenceSet:
    """``query_indices[k] <-> reference_indices[k]`` with ``weights[k]``; indices count from 1."""

    query_indices: np.ndarray
    reference_indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        query = _readonly(self.query_indices, np.intp)
        reference = _readonly(self.reference_indices, np.intp)
        weights = _readonly(self.weights)
        if not query.shape == reference.shape == weights.shape:
            raise DimensionMismatch("Correspondence index and weight arrays differ in length.")
        if np.any(query < 1) or np.any(reference < 1):
            raise ValueError("Correspondences must not involve the background token (index 0).")
        if len(np.unique(query)) != len(query):
            raise ValueError("Duplicate query indices in correspondence set.")
        if np.any(weights <= 0.0) or np.any(weights > 1.0):
            raise ValueError("Correspondence weights must lie in (0, 1].")
        object.__setattr__(self, "query_indices", query)
        object.__setattr__(self, "reference_indices", reference)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return len(self.query_indices)

    @property
    def pairs(self) -> list[tuple[int, int, float]]:
        return list(zip(self.query_indices.tolist(), self.reference_indices.tolist(), self.weights.tolist()))


@dataclass(frozen=True)
class GroundTruthAssignment:
    """Label per point: 1-based index of the counterpart, 0 for no counterpart within ``delta``."""

    labels: np.ndarray

    def __post_init__(self):
        labels = _readonly(self.labels, np.intp)
        if labels.ndim != 1 or np.any(labels < 0):
            raise ValueError("Assignment labels must be a vector of non-negative integers.")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)


def build_correlation(fq: FeatureSet, fp: FeatureSet, oq: OverlapScores, op: OverlapScores) -> CorrelationField:
    """``logits[i, j] = (oq[i]·fq[i])ᵀ (op[j]·fp[j])``.

    :raises DimensionMismatch: if feature dims or overlap lengths disagree"""
    if fq.dim != fp.dim:
        raise DimensionMismatch(f"Feature dimensions differ: {fq.dim} vs {fp.dim}.")
    if len(fq) != len(oq) or len(fp) != len(op):
        raise DimensionMismatch(
            f"Overlap scores ({len(oq)}, {len(op)}) do not match feature rows ({len(fq)}, {len(fp)})."
        )
    return CorrelationField((oq.values[:, None] * fq.vectors) @ (op.values[:, None] * fp.vectors).T)


def heuristic_overlap(
    fq: FeatureSet, fp: FeatureSet, temperature: float, margin: float = 0.5
) -> tuple[OverlapScores, OverlapScores]:
    """``logistic((best cosine against the other set - margin) / temperature)`` per point row.

    Background rows of the inputs are ignored; the outputs carry a leading background score of 0.5."""
    if fq.dim != fp.dim:
        raise DimensionMismatch(f"Feature dimensions differ: {fq.dim} vs {fp.dim}.")
    a = fq.points / np.maximum(np.linalg.norm(fq.points, axis=1, keepdims=True), np.finfo(float).tiny)
    b = fp.points / np.maximum(np.linalg.norm(fp.points, axis=1, keepdims=True), np.finfo(float).tiny)
    similarity = np.clip(a @ b.T, -1.0, 1.0)
    score_q = expit((similarity.max(axis=1) - margin) / temperature)
    score_p = expit((similarity.max(axis=0) - margin) / temperature)
    return (
        OverlapScores(np.concatenate([[BACKGROUND_OVERLAP], score_q])),
        OverlapScores(np.concatenate([[BACKGROUND_OVERLAP], score_p])),
    )


def _nearest(source: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    distances, indices = cKDTree(target).query(source)
    return distances, indices


def gt_assignment(
    q: PointCloud, p: PointCloud, gt: RigidTransform, delta: float = 0.15
) -> tuple[GroundTruthAssignment, GroundTruthAssignment]:
    """Nearest counterpart under ``gt`` (query -> reference) if closer than ``delta``, else 0."""
    if not delta > 0:
        raise ValueError(f"delta must be > 0, got {delta}.")
    moved = gt.apply(q.points)
    dist_q, index_q = _nearest(moved, p.points)
    dist_p, index_p = _nearest(p.points, moved)
    return (
        GroundTruthAssignment(np.where(dist_q <= delta, index_q + 1, 0)),
        GroundTruthAssignment(np.where(dist_p <= delta, index_p + 1, 0)),
    )


def gt_overlap_labels(
    q: PointCloud, p: PointCloud, gt: RigidTransform, delta: float = 0.15
) -> tuple[OverlapScores, OverlapScores]:
    """Binary overlap labels; the background entry is always 0."""
    moved = gt.apply(q.points)
    dist_q, _ = _nearest(moved, p.points)
    dist_p, _ = _nearest(p.points, moved)
    return (
        OverlapScores(np.concatenate([[0.0], (dist_q <= delta).astype(np.float64)])),
        OverlapScores(np.concatenate([[0.0], (dist_p <= delta).astype(np.float64)])),
    )


def overlap_ratio(q: PointCloud, p: PointCloud, gt: RigidTransform, delta: float = 0.15) -> float:
    """Fraction of query points within ``delta`` of the reference under ``gt``."""
    dist_q, _ = _nearest(gt.apply(q.points), p.points)
    return float(np.mean(dist_q <= delta))


def extract_correspondences(x: CorrelationField, threshold: float = 0.05) -> CorrespondenceSet:
    """Row argmax of every query row, kept if it is not the background and the product of the row
    and column probabilities reaches ``threshold``; weight is the geometric mean of both."""
    rows = x.row_softmax[1:]
    cols = x.col_softmax[1:]
    best = np.argmax(rows, axis=1)
    rows_at = rows[np.arange(len(best)), best]
    cols_at = cols[np.arange(len(best)), best]
    product = rows_at * cols_at
    keep = (best > 0) & (product >= threshold) & (product > 0)
    return CorrespondenceSet(np.nonzero(keep)[0] + 1, best[keep], np.sqrt(product[keep]))
