# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

"""Configuration objects for the pose pipeline and the synthetic benchmark.

All objects are frozen dataclasses built from plain dicts (parsed JSON). Validation failures raise
:class:`refpose.errors.ConfigError` naming the dotted key; JSON syntax errors additionally carry the
line and column."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any

from .errors import ConfigError
from .synthetic import SHAPE_KINDS

if TYPE_CHECKING:  # pragma: no cover
    from collections.abc import Callable
    from typing import Optional, Union

_MISSING = object()


class _Reader:
    """Typed access to one dict level with key-path diagnostics."""

    def __init__(self, data: Any, source: str, prefix: str = ""):
        self.source = source
        self.prefix = prefix
        if not isinstance(data, dict):
            raise ConfigError(f"expected an object, got {type(data).__name__}", source, key=prefix or None)
        self.data = data

    def key(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def check_keys(self, allowed: set[str]) -> None:
        unknown = sorted(set(self.data) - allowed)
        if unknown:
            message = f"unknown key(s) {unknown}; allowed are {sorted(allowed)}"
            raise ConfigError(message, self.source, self.prefix or None)

    def get(
        self,
        name: str,
        kind: type,
        default: Any = _MISSING,
        check: Optional[Callable[[Any], bool]] = None,
        requirement: str = "",
    ) -> Any:
        if name not in self.data:
            if default is _MISSING:
                raise ConfigError("required key missing", self.source, self.key(name))
            return default
        value = self.data[name]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or (isinstance(value, bool) and kind is not bool):
            raise ConfigError(f"expected {kind.__name__}, got {type(value).__name__}", self.source, self.key(name))
        if check is not None and not check(value):
            raise ConfigError(f"value {value!r} out of range, {requirement}", self.source, self.key(name))
        return value

    def child(self, name: str) -> Optional[_Reader]:
        if name not in self.data:
            return None
        return _Reader(self.data[name], self.source, self.key(name))


@dataclass(frozen=True)
class FrameConfig:
    """Local region parameters: ``n_neighbors`` (N_D) and ``local_radius``.

    With ``radius_mode="fraction"`` the radius is a fraction of the cloud's GRF radius, with
    ``"meters"`` it is absolute."""

    n_neighbors: int = 64
    local_radius: float = 0.3
    radius_mode: str = "fraction"

    def __post_init__(self):
        if self.n_neighbors < 3:
            raise ValueError(f"n_neighbors must be >= 3, got {self.n_neighbors}.")
        if not self.local_radius > 0:
            raise ValueError(f"local_radius must be > 0, got {self.local_radius}.")
        if self.radius_mode not in ("fraction", "meters"):
            raise ValueError(f"radius_mode must be 'fraction' or 'meters', got {self.radius_mode!r}.")


@dataclass(frozen=True)
class DescriptorProviderSpec:
    provider: str = "occupancy"
    parameters: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class PipelineConfig:
    """Parameters of :class:`refpose.pose.PoseEstimator`.

    ``delta`` is interpreted in GRF-normalized units unless ``delta_units`` is ``"meters"``.
    ``inlier_threshold`` is a fraction of the reference cloud radius.

    ``use_grf``, ``use_lrf`` and ``use_overlap`` switch off the global frame (clouds are only
    centered and scaled), the local frames (regions keep camera axes) and the overlap weighting of
    the correlation; ``fine_iterations=0`` skips the fine stage. See :data:`ABLATION_VARIANTS`."""

    n_coarse: int = 196
    n_fine: int = 2048
    n_hypotheses: int = 300
    delta: float = 0.15
    delta_units: str = "normalized"
    frame: FrameConfig = field(default_factory=FrameConfig)
    descriptor: DescriptorProviderSpec = field(default_factory=DescriptorProviderSpec)
    seed: int = 0
    feature_dim: int = 256
    logit_scale: float = 40.0
    overlap_margin: float = 0.5
    overlap_temperature: float = 0.1
    mutual_threshold: float = 0.05
    coarse_position_weight: float = 0.25
    fine_position_weight: float = 0.5
    inlier_threshold: float = 0.1
    fine_iterations: int = 1
    max_attempts_factor: int = 10
    use_grf: bool = True
    use_lrf: bool = True
    use_overlap: bool = True

    def __post_init__(self):
        if self.n_coarse < 3:
            raise ValueError(f"n_coarse must be >= 3, got {self.n_coarse}.")
        if self.n_fine < 3:
            raise ValueError(f"n_fine must be >= 3, got {self.n_fine}.")
        if self.n_hypotheses < 1:
            raise ValueError(f"n_hypotheses must be >= 1, got {self.n_hypotheses}.")
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}.")
        for name in ("coarse_position_weight", "fine_position_weight"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {getattr(self, name)}.")

    def delta_for(self, scale: float) -> float:
        """``delta`` in meters for clouds of GRF radius ``scale``."""
        return self.delta if self.delta_units == "meters" else self.delta * scale

    def ablated(self, variant: str) -> PipelineConfig:
        """Copy with the switches of an ablation variant; an enabled fine stage keeps at least one iteration."""
        if variant not in ABLATION_VARIANTS:
            available = list(ABLATION_VARIANTS)
            raise KeyError(f"Ablation variant {variant} does not exist. Available variants: {available}")
        switches = ABLATION_VARIANTS[variant]
        return replace(
            self,
            use_grf=switches.grf,
            use_lrf=switches.lrf,
            use_overlap=switches.overlap,
            fine_iterations=max(self.fine_iterations, 1) if switches.fine else 0,
        )

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        frame = data.pop("frame")
        data.update(frame)
        return data

    @classmethod
    def from_dict(cls, data: Any, source: str = "<dict>", prefix: str = "") -> PipelineConfig:
        reader = _Reader(data, source, prefix)
        reader.check_keys(_PIPELINE_KEYS)
        positive_int = (lambda v: v >= 1, "must be >= 1")
        at_least_three = (lambda v: v >= 3, "must be >= 3")
        positive = (lambda v: v > 0, "must be > 0")
        unit = (lambda v: 0.0 <= v <= 1.0, "must lie in [0, 1]")
        fraction = (lambda v: 0.0 <= v < 1.0, "must lie in [0, 1)")

        frame = FrameConfig(
            n_neighbors=reader.get("n_neighbors", int, 64, *at_least_three),
            local_radius=reader.get("local_radius", float, 0.3, lambda v: v > 0 or math.isinf(v), "must be > 0"),
            radius_mode=reader.get("radius_mode", str, "fraction", lambda v: v in ("fraction", "meters"),
                                   "must be 'fraction' or 'meters'"),
        )

        descriptor = DescriptorProviderSpec()
        desc_reader = reader.child("descriptor")
        if desc_reader is not None:
            desc_reader.check_keys({"provider", "parameters"})
            descriptor = DescriptorProviderSpec(
                provider=desc_reader.get("provider", str, "occupancy"),
                parameters=dict(desc_reader.get("parameters", dict, {})),
            )

        return cls(
            n_coarse=reader.get("n_coarse", int, 196, *at_least_three),
            n_fine=reader.get("n_fine", int, 2048, *at_least_three),
            n_hypotheses=reader.get("n_hypotheses", int, 300, *positive_int),
            delta=reader.get("delta", float, 0.15, *positive),
            delta_units=reader.get("delta_units", str, "normalized", lambda v: v in ("normalized", "meters"),
                                   "must be 'normalized' or 'meters'"),
            frame=frame,
            descriptor=descriptor,
            seed=reader.get("seed", int, 0),
            feature_dim=reader.get("feature_dim", int, 256, *positive_int),
            logit_scale=reader.get("logit_scale", float, 40.0, *positive),
            overlap_margin=reader.get("overlap_margin", float, 0.5),
            overlap_temperature=reader.get("overlap_temperature", float, 0.1, *positive),
            mutual_threshold=reader.get("mutual_threshold", float, 0.05, *unit),
            coarse_position_weight=reader.get("coarse_position_weight", float, 0.25, *fraction),
            fine_position_weight=reader.get("fine_position_weight", float, 0.5, *fraction),
            inlier_threshold=reader.get("inlier_threshold", float, 0.1, *positive),
            fine_iterations=reader.get("fine_iterations", int, 1, lambda v: v >= 0, "must be >= 0"),
            max_attempts_factor=reader.get("max_attempts_factor", int, 10, *positive_int),
            use_grf=reader.get("use_grf", bool, True),
            use_lrf=reader.get("use_lrf", bool, True),
            use_overlap=reader.get("use_overlap", bool, True),
        )


_PIPELINE_KEYS = {
    "n_coarse", "n_fine", "n_hypotheses", "delta", "delta_units", "n_neighbors", "local_radius", "radius_mode",
    "descriptor", "seed", "feature_dim", "logit_scale", "overlap_margin", "overlap_temperature", "mutual_threshold",
    "coarse_position_weight", "fine_position_weight", "inlier_threshold", "fine_iterations", "max_attempts_factor",
    "use_grf", "use_lrf", "use_overlap",
}  # fmt: skip


@dataclass(frozen=True)
class AblationSwitches:
    grf: bool
    lrf: bool
    fine: bool
    overlap: bool


# A: coarse stage only, B: with fine stage, C1: B3 plus overlap weighting (the full pipeline)
ABLATION_VARIANTS: dict[str, AblationSwitches] = {
    "A0": AblationSwitches(grf=False, lrf=False, fine=False, overlap=False),
    "A1": AblationSwitches(grf=True, lrf=False, fine=False, overlap=False),
    "A2": AblationSwitches(grf=False, lrf=True, fine=False, overlap=False),
    "A3": AblationSwitches(grf=True, lrf=True, fine=False, overlap=False),
    "B0": AblationSwitches(grf=False, lrf=False, fine=True, overlap=False),
    "B1": AblationSwitches(grf=True, lrf=False, fine=True, overlap=False),
    "B2": AblationSwitches(grf=False, lrf=True, fine=True, overlap=False),
    "B3": AblationSwitches(grf=True, lrf=True, fine=True, overlap=False),
    "C1": AblationSwitches(grf=True, lrf=True, fine=True, overlap=True),
}


def _default_bins() -> list[tuple[float, float]]:
    return [(float(lo), float(lo + 10)) for lo in range(0, 90, 10)]


@dataclass(frozen=True)
class BenchmarkConfig:
    """Synthetic sweep: shapes x rotation bins x ``pairs_per_bin`` repetitions."""

    shapes: tuple[dict[str, Any], ...] = ({"kind": "composite"},)
    bins: tuple[tuple[float, float], ...] = tuple(_default_bins())
    pairs_per_bin: int = 10
    noise_sigma: float = 0.005
    outlier_fraction: float = 0.0
    occlusion_fraction: float = 0.0
    full_views: bool = False
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    seed: int = 0
    timings: bool = False
    ablation: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["shapes"] = [dict(shape) for shape in self.shapes]
        data["bins"] = [list(b) for b in self.bins]
        data["pipeline"] = self.pipeline.to_dict()
        data["ablation"] = list(self.ablation)
        return data

    @classmethod
    def from_dict(cls, data: Any, source: str = "<dict>") -> BenchmarkConfig:
        reader = _Reader(data, source)
        reader.check_keys({"shapes", "bins", "pairs_per_bin", "noise_sigma", "outlier_fraction",
                           "occlusion_fraction", "full_views", "pipeline", "seed", "timings", "ablation"})  # fmt: skip
        unit = (lambda v: 0.0 <= v <= 1.0, "must lie in [0, 1]")

        shapes = reader.get("shapes", list, [{"kind": "composite"}], lambda v: len(v) > 0, "must not be empty")
        for i, shape in enumerate(shapes):
            shape_reader = _Reader(shape, source, f"shapes[{i}]")
            shape_reader.get("kind", str, _MISSING, lambda v: v in SHAPE_KINDS, f"must be one of {SHAPE_KINDS}")
            shape_reader.get("point_count", int, 2000, lambda v: v >= 50, "must be >= 50")

        bins = reader.get("bins", list, _default_bins(), lambda v: len(v) > 0, "must not be empty")
        parsed_bins = []
        for i, rot_bin in enumerate(bins):
            ok = (
                isinstance(rot_bin, (list, tuple))
                and len(rot_bin) == 2
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in rot_bin)
                and 0 <= rot_bin[0] <= rot_bin[1] <= 180
            )
            if not ok:
                raise ConfigError("expected [lo_deg, hi_deg] with 0 <= lo <= hi <= 180", source, f"bins[{i}]")
            parsed_bins.append((float(rot_bin[0]), float(rot_bin[1])))

        ablation = reader.get("ablation", list, [])
        for i, variant in enumerate(ablation):
            if not isinstance(variant, str) or variant not in ABLATION_VARIANTS:
                message = f"expected one of {list(ABLATION_VARIANTS)}, got {variant!r}"
                raise ConfigError(message, source, f"ablation[{i}]")

        pipeline_data = reader.data.get("pipeline", {})
        return cls(
            shapes=tuple(dict(shape) for shape in shapes),
            bins=tuple(parsed_bins),
            pairs_per_bin=reader.get("pairs_per_bin", int, 10, lambda v: v >= 1, "must be >= 1"),
            noise_sigma=reader.get("noise_sigma", float, 0.005, lambda v: v >= 0, "must be >= 0"),
            outlier_fraction=reader.get("outlier_fraction", float, 0.0, *unit),
            occlusion_fraction=reader.get("occlusion_fraction", float, 0.0, lambda v: 0 <= v < 1, "must lie in [0, 1)"),
            full_views=reader.get("full_views", bool, False),
            pipeline=PipelineConfig.from_dict(pipeline_data, source, prefix="pipeline"),
            seed=reader.get("seed", int, 0),
            timings=reader.get("timings", bool, False),
            ablation=tuple(ablation),
        )


def _load_json(path: Union[str, Path]) -> Any:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, str(path), line=exc.lineno, column=exc.colno) from exc


def load_pipeline_config(path: Union[str, Path]) -> PipelineConfig:
    """Read a pipeline JSON file (the keys of :meth:`PipelineConfig.from_dict`)."""
    return PipelineConfig.from_dict(_load_json(path), source=str(path))


def load_benchmark_config(path: Union[str, Path]) -> BenchmarkConfig:
    """Read and validate a benchmark JSON file.

    :raises ConfigError: with line/column for syntax errors, with the dotted key otherwise"""
    return BenchmarkConfig.from_dict(_load_json(path), source=str(path))
