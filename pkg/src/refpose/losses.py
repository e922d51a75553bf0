# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

"""Supervision objectives of the matcher evaluated as plain functions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import log_softmax

from .errors import DimensionMismatch
from .matching import CorrelationField, GroundTruthAssignment, OverlapScores

if TYPE_CHECKING:  # pragma: no cover
    from collections.abc import Sequence
    from typing import Any

PROBABILITY_CLAMP = 1e-7
_REDUCTIONS = ("mean", "sum")
_WEIGHTINGS = ("balanced", "uniform")


def correspondence_loss(
    x: CorrelationField, y_q: GroundTruthAssignment, y_p: GroundTruthAssignment, reduction: str = "mean"
) -> float:
    """Cross entropy of the query rows ``X[1:, :]`` against ``y_q`` plus the cross entropy of the
    reference columns ``X[:, 1:]ᵀ`` against ``y_p``.

    :param reduction: ``"mean"`` or ``"sum"`` over the rows of each term
    :raises DimensionMismatch: if the labels do not fit the field"""
    if reduction not in _REDUCTIONS:
        raise ValueError(f"Reduction {reduction} does not exist. Available reductions: {list(_REDUCTIONS)}")
    n_q, n_p = x.shape[0] - 1, x.shape[1] - 1
    if len(y_q) != n_q or len(y_p) != n_p:
        raise DimensionMismatch(f"Labels ({len(y_q)}, {len(y_p)}) for a correlation field of shape {x.shape}.")
    if np.any(y_q.labels > n_p) or np.any(y_p.labels > n_q):
        raise DimensionMismatch("Assignment labels point past the end of the correlation field.")

    rows = -log_softmax(x.logits[1:, :], axis=1)[np.arange(n_q), y_q.labels]
    cols = -log_softmax(x.logits[:, 1:].T, axis=1)[np.arange(n_p), y_p.labels]
    reduce = np.mean if reduction == "mean" else np.sum
    return float(reduce(rows) + reduce(cols))


def overlap_loss(o_hat: OverlapScores, o_bar: OverlapScores, weighting: str = "balanced") -> float:
    """Weighted binary cross entropy of predicted overlap probabilities.

    With ``weighting="balanced"`` positives are weighted by the fraction of negatives and vice
    versa; ``"uniform"`` uses weight one for both. Predictions are clamped to ``[1e-7, 1 - 1e-7]``."""
    if weighting not in _WEIGHTINGS:
        raise ValueError(f"Weighting {weighting} does not exist. Available weightings: {list(_WEIGHTINGS)}")
    if len(o_hat) != len(o_bar):
        raise DimensionMismatch(f"{len(o_hat)} predictions for {len(o_bar)} labels.")
    labels = o_bar.values
    if np.any((labels != 0.0) & (labels != 1.0)):
        raise ValueError("Overlap labels must be binary.")

    predicted = np.clip(o_hat.values, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    if weighting == "balanced":
        n_pos = float(np.sum(labels))
        w_pos = (len(labels) - n_pos) / len(labels)
        w_neg = n_pos / len(labels)
    else:
        w_pos = w_neg = 1.0
    terms = w_pos * labels * np.log(predicted) + w_neg * (1.0 - labels) * np.log1p(-predicted)
    return float(-np.mean(terms))


@dataclass(frozen=True)
class LossStage:
    """One supervised decoder output: correlation, assignments and overlap predictions/labels."""

    correlation: CorrelationField
    y_q: GroundTruthAssignment
    y_p: GroundTruthAssignment
    o_hat_q: OverlapScores
    o_bar_q: OverlapScores
    o_hat_p: OverlapScores
    o_bar_p: OverlapScores
    name: str = ""


@dataclass(frozen=True)
class LossBreakdown:
    """Summed correspondence (``l_x``) and overlap (``l_o``) terms; ``stages`` holds the
    ``(l_x, l_o)`` pair of every stage."""

    l_x: float
    l_o: float
    total: float
    stages: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def to_dict(self) -> dict[str, Any]:
        return {
            "l_x": self.l_x,
            "l_o": self.l_o,
            "total": self.total,
            "stages": [{"l_x": l_x, "l_o": l_o} for l_x, l_o in self.stages],
        }


def total_loss(stages: Sequence[LossStage], reduction: str = "mean", weighting: str = "balanced") -> LossBreakdown:
    """Sum of correspondence and overlap losses over any number of stages."""
    parts = []
    for stage in stages:
        l_x = correspondence_loss(stage.correlation, stage.y_q, stage.y_p, reduction)
        l_o = overlap_loss(stage.o_hat_q, stage.o_bar_q, weighting) + overlap_loss(
            stage.o_hat_p, stage.o_bar_p, weighting
        )
        parts.append((l_x, l_o))
    return LossBreakdown(
        l_x=float(sum(l_x for l_x, _ in parts)),
        l_o=float(sum(l_o for _, l_o in parts)),
        total=float(sum(l_x + l_o for l_x, l_o in parts)),
        stages=tuple(parts),
    )
