# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

"""Matching of mask proposals against reference objects on precomputed descriptors.

Proposals and references are ingested from files; a descriptor bundle is a feature matrix whose
first row is the global descriptor and whose remaining rows are local (patch) descriptors."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .errors import DimensionMismatch, ZeroVector
from .fileio import read_feature_matrix, read_json, read_pgm_mask
from .geometry import BinaryMask

if TYPE_CHECKING:  # pragma: no cover
    from collections.abc import Sequence
    from typing import Any, Optional, Union


@dataclass(frozen=True)
class DescriptorBundle:
    """Global descriptor (``d``) and ``N_l x d`` local descriptors."""

    global_vec: np.ndarray
    local_vecs: np.ndarray

    def __post_init__(self):
        global_vec = np.array(self.global_vec, dtype=np.float64).reshape(-1)
        local_vecs = np.array(self.local_vecs, dtype=np.float64, ndmin=2)
        if local_vecs.shape[0] < 1 or local_vecs.shape[1] != global_vec.shape[0]:
            raise DimensionMismatch(f"Local descriptors {local_vecs.shape} for a global descriptor {global_vec.shape}.")
        if not (np.all(np.isfinite(global_vec)) and np.all(np.isfinite(local_vecs))):
            raise ValueError("Descriptors must be finite.")
        if np.linalg.norm(global_vec) == 0 or np.any(np.linalg.norm(local_vecs, axis=1) == 0):
            raise ZeroVector("Descriptors must be non-zero.")
        global_vec.setflags(write=False)
        local_vecs.setflags(write=False)
        object.__setattr__(self, "global_vec", global_vec)
        object.__setattr__(self, "local_vecs", local_vecs)

    @property
    def dim(self) -> int:
        return self.global_vec.shape[0]

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> DescriptorBundle:
        matrix = np.atleast_2d(matrix)
        if matrix.shape[0] < 2:
            raise ValueError(f"A descriptor matrix needs a global and at least one local row, got {matrix.shape[0]}.")
        return cls(matrix[0], matrix[1:])


@dataclass(frozen=True)
class MaskProposal:
    mask: BinaryMask
    confidence: float
    descriptor: DescriptorBundle

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"Confidence {self.confidence} outside [0, 1].")
        if self.mask.count() == 0:
            raise ValueError("Mask proposal is empty.")


@dataclass(frozen=True)
class Assignment:
    proposal_index: int
    class_id: Optional[int]
    score: Optional[float]

    def to_dict(self) -> dict[str, Any]:
        return {"proposal": self.proposal_index, "class_id": self.class_id, "score": self.score}


def _unit_rows(vectors: np.ndarray) -> np.ndarray:
    return vectors / np.linalg.norm(vectors, axis=-1, keepdims=True)


def match_score(q: DescriptorBundle, p: DescriptorBundle) -> float:
    """Average of the global cosine similarity and the mean over query locals of their best
    cosine similarity against the reference locals."""
    if q.dim != p.dim:
        raise DimensionMismatch(f"Descriptor dimensions differ: {q.dim} vs {p.dim}.")
    global_term = float(_unit_rows(q.global_vec) @ _unit_rows(p.global_vec))
    local_term = float(np.mean(np.max(_unit_rows(q.local_vecs) @ _unit_rows(p.local_vecs).T, axis=1)))
    return float(np.clip((global_term + local_term) / 2.0, -1.0, 1.0))


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union; 0 for two empty masks."""
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(f"Masks of size {a.width}x{a.height} and {b.width}x{b.height}.")
    union = np.count_nonzero(a.bits | b.bits)
    if union == 0:
        return 0.0
    return np.count_nonzero(a.bits & b.bits) / union


def nms_masks(
    proposals: Sequence[MaskProposal], iou_threshold: float = 0.7, confidence_floor: float = 0.5
) -> list[MaskProposal]:
    """Greedy non-maximum suppression in descending confidence (input order on ties)."""
    order = sorted(
        (i for i, proposal in enumerate(proposals) if proposal.confidence >= confidence_floor),
        key=lambda i: (-proposals[i].confidence, i),
    )
    kept: list[MaskProposal] = []
    for i in order:
        if all(mask_iou(proposals[i].mask, other.mask) <= iou_threshold for other in kept):
            kept.append(proposals[i])
    return kept


def assign_proposals(
    proposals: Sequence[MaskProposal],
    references: Sequence[tuple[int, DescriptorBundle]],
    min_score: float = 0.0,
) -> list[Assignment]:
    """Best scoring reference class per proposal (lowest class id on ties), or ``None`` if the
    best score is below ``min_score``. Without references both class and score are ``None``."""
    assignments = []
    for index, proposal in enumerate(proposals):
        best_class: Optional[int] = None
        best_score = -np.inf
        for class_id, bundle in references:
            score = match_score(proposal.descriptor, bundle)
            if score > best_score or (score == best_score and best_class is not None and class_id < best_class):
                best_class, best_score = class_id, score
        if best_class is not None and best_score < min_score:
            best_class = None
        assignments.append(Assignment(index, best_class, float(best_score) if np.isfinite(best_score) else None))
    return assignments


def _resolve(base: Path, name: str) -> Path:
    path = Path(name)
    return path if path.is_absolute() else base / path


def load_proposals(manifest: Union[str, Path]) -> list[MaskProposal]:
    """Read a JSON list of ``{"mask": ..., "confidence": ..., "descriptor": ...}`` entries; paths
    are relative to the manifest."""
    base = Path(manifest).parent
    proposals = []
    for entry in read_json(manifest):
        proposals.append(
            MaskProposal(
                read_pgm_mask(_resolve(base, entry["mask"])),
                float(entry["confidence"]),
                DescriptorBundle.from_matrix(read_feature_matrix(_resolve(base, entry["descriptor"]))),
            )
        )
    return proposals


def load_references(manifest: Union[str, Path]) -> list[tuple[int, DescriptorBundle]]:
    """Read a JSON list of ``{"class_id": ..., "descriptor": ...}`` entries."""
    base = Path(manifest).parent
    return [
        (int(entry["class_id"]), DescriptorBundle.from_matrix(read_feature_matrix(_resolve(base, entry["descriptor"]))))
        for entry in read_json(manifest)
    ]
