# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

"""Synthetic benchmark sweep over rotation-distance bins.

Every pair gets its own seed derived from ``(master seed, pair index)``, so the report does not
depend on the number of worker threads or on the order in which pairs finish."""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .config import ABLATION_VARIANTS, BenchmarkConfig
from .errors import RefposeError
from .fileio import write_json, write_ply
from .geometry import apply_rigid
from .metrics import SymmetrySet, mssd, rotation_error, translation_error
from .pose import PoseEstimator
from .synthetic import BenchmarkPair, ShapeSpec, make_pair

if TYPE_CHECKING:  # pragma: no cover
    from typing import Any, Optional, Union

CSV_COLUMNS = (
    "bin_lo", "bin_hi", "n", "succ_5_5", "succ_10_10", "mean_rot_err", "median_rot_err",
    "mean_overlap", "std_overlap", "mean_ms",
)  # fmt: skip
FAILED_ROTATION_ERROR = 180.0
ABLATION_COLUMNS = (
    "variant", "grf", "lrf", "fine", "overlap", "n", "succ_5_5", "succ_10_10", "mean_rot_err", "median_rot_err",
    "mean_mssd",
)  # fmt: skip


@dataclass(frozen=True)
class PairResult:
    """Outcome of one benchmark pair; failed estimates count with a 180° rotation error."""

    index: int
    bin_index: int
    shape_index: int
    rotation_distance_deg: float
    overlap_ratio: float
    rot_err: float
    trans_err: float
    trans_err_rel: float
    mssd: float
    n_corr: int
    failure: str = ""
    elapsed_ms: float = 0.0

    def succeeded(self, degrees: float, fraction: float) -> bool:
        return not self.failure and self.rot_err < degrees and self.trans_err_rel < fraction


@dataclass(frozen=True)
class BinSummary:
    bin_lo: float
    bin_hi: float
    n: int
    succ_5_5: float
    succ_10_10: float
    mean_rot_err: float
    median_rot_err: float
    mean_overlap: float
    std_overlap: float
    mean_ms: float
    acc_15: float
    acc_30: float
    mean_mssd: Optional[float]
    failures: int

    @classmethod
    def from_results(cls, rot_bin: tuple[float, float], results: list[PairResult]) -> BinSummary:
        rot = np.array([r.rot_err for r in results])
        overlap = np.array([r.overlap_ratio for r in results])
        finished = [r.mssd for r in results if not r.failure]
        return cls(
            bin_lo=rot_bin[0],
            bin_hi=rot_bin[1],
            n=len(results),
            succ_5_5=float(np.mean([r.succeeded(5.0, 0.05) for r in results])),
            succ_10_10=float(np.mean([r.succeeded(10.0, 0.10) for r in results])),
            mean_rot_err=float(rot.mean()),
            median_rot_err=float(np.median(rot)),
            mean_overlap=float(overlap.mean()),
            std_overlap=float(overlap.std()),
            mean_ms=float(np.mean([r.elapsed_ms for r in results])),
            acc_15=float(np.mean(rot < 15.0)),
            acc_30=float(np.mean(rot < 30.0)),
            mean_mssd=float(np.mean(finished)) if finished else None,
            failures=sum(1 for r in results if r.failure),
        )


@dataclass(frozen=True)
class BenchmarkReport:
    config: BenchmarkConfig
    bins: tuple[BinSummary, ...]
    pairs: tuple[PairResult, ...]
    total_seconds: float = 0.0

    def to_csv(self, timings: bool = False) -> str:
        """Per-bin table; ``mean_ms`` stays empty unless ``timings`` is set."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for b in self.bins:
            writer.writerow(
                [
                    f"{b.bin_lo:g}",
                    f"{b.bin_hi:g}",
                    b.n,
                    f"{b.succ_5_5:.6f}",
                    f"{b.succ_10_10:.6f}",
                    f"{b.mean_rot_err:.6f}",
                    f"{b.median_rot_err:.6f}",
                    f"{b.mean_overlap:.6f}",
                    f"{b.std_overlap:.6f}",
                    f"{b.mean_ms:.3f}" if timings else "",
                ]
            )
        return buffer.getvalue()

    def pairs_csv(self) -> str:
        buffer = io.StringIO()
        columns = [name for name in PairResult.__dataclass_fields__ if name != "elapsed_ms"]
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        for pair in self.pairs:
            writer.writerow([_format(getattr(pair, name)) for name in columns])
        return buffer.getvalue()

    def to_dict(self) -> dict[str, Any]:
        bins = []
        for summary in self.bins:
            data = asdict(summary)
            data.pop("mean_ms")
            bins.append(data)
        return {
            "config": self.config.to_dict(),
            "bins": bins,
            "timings": {
                "total_seconds": self.total_seconds,
                "mean_ms": [summary.mean_ms for summary in self.bins],
            },
        }

    def write(self, out_dir: Union[str, Path], timings: bool = False) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(self.to_csv(timings), encoding="utf-8")
        (out / "pairs.csv").write_text(self.pairs_csv(), encoding="utf-8")
        write_json(out / "report.json", self.to_dict())


@dataclass(frozen=True)
class AblationReport:
    """Benchmark reports keyed by ablation variant, in run order."""

    reports: dict[str, BenchmarkReport]

    def rows(self) -> list[dict[str, Any]]:
        rows = []
        for variant, report in self.reports.items():
            summary = BinSummary.from_results((0.0, 0.0), list(report.pairs))
            rows.append(
                {
                    "variant": variant,
                    **asdict(ABLATION_VARIANTS[variant]),
                    "n": summary.n,
                    "succ_5_5": summary.succ_5_5,
                    "succ_10_10": summary.succ_10_10,
                    "mean_rot_err": summary.mean_rot_err,
                    "median_rot_err": summary.median_rot_err,
                    "mean_mssd": summary.mean_mssd,
                }
            )
        return rows

    def to_csv(self) -> str:
        """One row per variant over all bins; ``mean_mssd`` stays empty when every pair failed."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(ABLATION_COLUMNS)
        for row in self.rows():
            writer.writerow(["" if row[name] is None else _format(row[name]) for name in ABLATION_COLUMNS])
        return buffer.getvalue()

    def to_dict(self) -> dict[str, Any]:
        return {
            "variants": self.rows(),
            "bins": {variant: report.to_dict()["bins"] for variant, report in self.reports.items()},
        }

    def write(self, out_dir: Union[str, Path]) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.csv").write_text(self.to_csv(), encoding="utf-8")
        write_json(out / "ablation.json", self.to_dict())


def _format(value: Any) -> str:
    return f"{value:.6f}" if isinstance(value, float) else str(value)


def pair_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, index])


class BenchmarkRunner:
    """Runs a :class:`BenchmarkConfig` sweep.

    :param config: sweep configuration
    :param threads: number of worker threads
    :param estimator: pose estimator (built from ``config.pipeline`` if omitted)
    :param logger: logger instance
    :param prefix: prefix for (debug) logging with the logger instance"""

    def __init__(
        self,
        config: BenchmarkConfig,
        threads: int = 1,
        estimator: Optional[PoseEstimator] = None,
        logger: Optional[logging.Logger] = None,
        prefix: str = "",
    ):
        self.config = config
        self.threads = max(1, threads)
        self.logger = logger
        self._prefix = prefix
        self.estimator = estimator if estimator is not None else PoseEstimator(config.pipeline, logger=logger)
        self.shapes = [ShapeSpec.from_dict(shape) for shape in config.shapes]

    def tasks(self) -> list[tuple[int, int, int]]:
        """``(pair index, bin index, shape index)`` in report order."""
        tasks = []
        for bin_index in range(len(self.config.bins)):
            for repetition in range(self.config.pairs_per_bin):
                index = bin_index * self.config.pairs_per_bin + repetition
                tasks.append((index, bin_index, repetition % len(self.shapes)))
        return tasks

    def make_pair(self, index: int, bin_index: int, shape_index: int) -> tuple[BenchmarkPair, np.random.SeedSequence]:
        pair_ss, pipeline_ss = pair_seed(self.config.seed, index).spawn(2)
        pair = make_pair(
            self.shapes[shape_index],
            self.config.bins[bin_index],
            self.config.noise_sigma,
            self.config.outlier_fraction,
            seed=pair_ss,
            occlusion_fraction=self.config.occlusion_fraction,
            full_views=self.config.full_views,
            pipeline=self.config.pipeline,
        )
        return pair, pipeline_ss

    def run_pair(
        self, index: int, bin_index: int, shape_index: int, estimator: Optional[PoseEstimator] = None
    ) -> PairResult:
        pair, pipeline_ss = self.make_pair(index, bin_index, shape_index)
        estimator = estimator if estimator is not None else self.estimator
        start = time.perf_counter()
        try:
            estimate = estimator.estimate(pair.query, pair.reference, np.random.default_rng(pipeline_ss))
        except RefposeError as exc:
            if self.logger:
                self.logger.debug("%sPair %d failed: %s", self._prefix, index, exc)
            return PairResult(
                index, bin_index, shape_index, pair.rotation_distance_deg, pair.overlap_ratio,
                FAILED_ROTATION_ERROR, float("inf"), float("inf"), float("inf"), 0,
                failure=type(exc).__name__, elapsed_ms=(time.perf_counter() - start) * 1e3,
            )  # fmt: skip
        elapsed_ms = (time.perf_counter() - start) * 1e3

        trans_err = translation_error(estimate.pose, pair.gt)
        return PairResult(
            index=index,
            bin_index=bin_index,
            shape_index=shape_index,
            rotation_distance_deg=pair.rotation_distance_deg,
            overlap_ratio=pair.overlap_ratio,
            rot_err=rotation_error(estimate.pose, pair.gt),
            trans_err=trans_err,
            trans_err_rel=trans_err / pair.model_radius,
            mssd=mssd(estimate.pose, pair.gt, apply_rigid(pair.gt.inverse(), pair.model), SymmetrySet()),
            n_corr=estimate.n_corr,
            elapsed_ms=elapsed_ms,
        )

    def run(self, estimator: Optional[PoseEstimator] = None) -> BenchmarkReport:
        """Run every pair with ``estimator`` (the runner's own estimator if omitted)."""
        start = time.perf_counter()
        tasks = self.tasks()
        if self.threads == 1:
            results = [self.run_pair(*task, estimator=estimator) for task in tasks]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                results = list(pool.map(lambda task: self.run_pair(*task, estimator=estimator), tasks))
        results.sort(key=lambda result: result.index)

        summaries = []
        for bin_index, rot_bin in enumerate(self.config.bins):
            summary = BinSummary.from_results(rot_bin, [r for r in results if r.bin_index == bin_index])
            summaries.append(summary)
            if self.logger and self.logger.isEnabledFor(logging.INFO):
                self.logger.info(
                    "%sBin %g-%g: success(5,5)=%.3f success(10,10)=%.3f overlap=%.3f",
                    self._prefix,
                    rot_bin[0],
                    rot_bin[1],
                    summary.succ_5_5,
                    summary.succ_10_10,
                    summary.mean_overlap,
                )
        return BenchmarkReport(self.config, tuple(summaries), tuple(results), time.perf_counter() - start)

    def run_ablation(self, variants: Optional[list[str]] = None) -> AblationReport:
        """Run the sweep once per ablation variant (``config.ablation`` if omitted) on the same pairs."""
        reports = {}
        for variant in variants if variants is not None else self.config.ablation:
            pipeline = self.config.pipeline.ablated(variant)
            if self.logger:
                self.logger.info("%sAblation variant %s", self._prefix, variant)
            reports[variant] = self.run(PoseEstimator(pipeline, logger=self.logger))
        return AblationReport(reports)

    def generate(self, out_dir: Union[str, Path]) -> list[Path]:
        """Write ``query.ply``, ``reference.ply`` and ``gt.json`` for every pair."""
        written = []
        for index, bin_index, shape_index in self.tasks():
            pair, _ = self.make_pair(index, bin_index, shape_index)
            directory = Path(out_dir) / f"pair_{index:04d}"
            directory.mkdir(parents=True, exist_ok=True)
            write_ply(directory / "query.ply", pair.query)
            write_ply(directory / "reference.ply", pair.reference)
            write_json(directory / "gt.json", pair.metadata())
            written.append(directory)
        if self.logger:
            self.logger.info("%sWrote %d pairs to %s", self._prefix, len(written), out_dir)
        return written


def run_benchmark(
    config: BenchmarkConfig, threads: int = 1, logger: Optional[logging.Logger] = None
) -> BenchmarkReport:
    return BenchmarkRunner(config, threads, logger=logger).run()
