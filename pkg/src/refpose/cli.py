# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

"""Command line interface: ``refpose {gen,run,pose,segmatch,loss}``."""

from __future__ import annotations

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .bench import BenchmarkRunner
from .config import (
    ABLATION_VARIANTS,
    BenchmarkConfig,
    DescriptorProviderSpec,
    PipelineConfig,
    load_benchmark_config,
    load_pipeline_config,
)
from .descriptors import PROVIDERS
from .errors import ConfigError, RefposeError
from .fileio import read_correlation_csv, read_json, read_ply, write_json
from .losses import LossStage, total_loss
from .matching import CorrelationField, GroundTruthAssignment, OverlapScores
from .pose import PoseEstimator
from .seg_match import assign_proposals, load_proposals, load_references, nms_masks

if TYPE_CHECKING:  # pragma: no cover
    from collections.abc import Sequence
    from typing import Any, Optional


def _provider_spec(args: argparse.Namespace, base: DescriptorProviderSpec) -> DescriptorProviderSpec:
    provider = args.provider or base.provider
    parameters = dict(base.parameters) if provider == base.provider else {}
    if provider == "file":
        if getattr(args, "features_query", None):
            parameters["query"] = args.features_query
        if getattr(args, "features_reference", None):
            parameters["reference"] = args.features_reference
    return DescriptorProviderSpec(provider, parameters)


def _benchmark_config(args: argparse.Namespace) -> BenchmarkConfig:
    config = load_benchmark_config(args.config) if args.config else BenchmarkConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "provider", None):
        pipeline = replace(config.pipeline, descriptor=_provider_spec(args, config.pipeline.descriptor))
        config = replace(config, pipeline=pipeline)
    if getattr(args, "timings", False):
        config = replace(config, timings=True)
    if getattr(args, "ablation", None):
        variants = list(ABLATION_VARIANTS) if args.ablation == "all" else args.ablation.split(",")
        config = BenchmarkConfig.from_dict(dict(config.to_dict(), ablation=variants), source="--ablation")
    return config


def _emit(data: Any, out_dir: Optional[str], name: str, logger: logging.Logger) -> None:
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_json(Path(out_dir) / name, data)
        logger.info("Wrote %s", Path(out_dir) / name)
    else:
        print(json.dumps(data, indent=2))


def cmd_gen(args: argparse.Namespace, logger: logging.Logger) -> int:
    runner = BenchmarkRunner(_benchmark_config(args), logger=logger)
    runner.generate(args.out_dir)
    return 0


def cmd_run(args: argparse.Namespace, logger: logging.Logger) -> int:
    config = _benchmark_config(args)
    runner = BenchmarkRunner(config, threads=args.threads, logger=logger)
    if config.ablation:
        runner.run_ablation().write(args.out_dir)
    else:
        runner.run().write(args.out_dir, timings=config.timings)
    logger.info("Report written to %s", args.out_dir)
    return 0


def cmd_pose(args: argparse.Namespace, logger: logging.Logger) -> int:
    config = load_pipeline_config(args.config) if args.config else PipelineConfig()
    config = replace(config, descriptor=_provider_spec(args, config.descriptor))
    if args.seed is not None:
        config = replace(config, seed=args.seed)

    estimator = PoseEstimator(config, logger=logger)
    estimate = estimator.estimate(read_ply(args.query), read_ply(args.reference), np.random.default_rng(config.seed))
    _emit(estimate.to_dict(), args.out_dir, "pose.json", logger)
    return 0


def cmd_segmatch(args: argparse.Namespace, logger: logging.Logger) -> int:
    proposals = load_proposals(args.proposals)
    kept = nms_masks(proposals, args.iou_threshold, args.confidence_floor)
    original_index = {id(proposal): i for i, proposal in enumerate(proposals)}
    logger.info("%d of %d proposals survive suppression", len(kept), len(proposals))
    assignments = assign_proposals(kept, load_references(args.references), args.min_score)
    data = [dict(a.to_dict(), proposal=original_index[id(kept[a.proposal_index])]) for a in assignments]
    _emit(data, args.out_dir, "assignments.json", logger)
    return 0


def _stage_from_entry(entry: dict[str, Any], base: Path) -> LossStage:
    path = Path(entry["correlation"])
    logits = read_correlation_csv(path if path.is_absolute() else base / path)
    return LossStage(
        correlation=CorrelationField(logits),
        y_q=GroundTruthAssignment(np.asarray(entry["y_q"])),
        y_p=GroundTruthAssignment(np.asarray(entry["y_p"])),
        o_hat_q=OverlapScores(np.asarray(entry["o_hat_q"])),
        o_bar_q=OverlapScores(np.asarray(entry["o_bar_q"])),
        o_hat_p=OverlapScores(np.asarray(entry["o_hat_p"])),
        o_bar_p=OverlapScores(np.asarray(entry["o_bar_p"])),
        name=str(entry.get("name", "")),
    )


def cmd_loss(args: argparse.Namespace, logger: logging.Logger) -> int:
    manifest = Path(args.manifest)
    stages = [_stage_from_entry(entry, manifest.parent) for entry in read_json(manifest)]
    breakdown = total_loss(stages, args.reduction, args.weighting)
    logger.info("Loss over %d stages: %.6g", len(stages), breakdown.total)
    _emit(breakdown.to_dict(), args.out_dir, "loss.json", logger)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refpose", description="One-reference relative object pose estimation")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="increase log verbosity")
    commands = parser.add_subparsers(dest="command", required=True)

    def bench_options(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", help="benchmark configuration (JSON)")
        sub.add_argument("--seed", type=int, help="master seed (overrides the configuration)")
        sub.add_argument("--out-dir", default="refpose-out", help="output directory")
        sub.add_argument("--provider", choices=sorted(PROVIDERS), help="descriptor provider")

    gen = commands.add_parser("gen", help="write benchmark pairs as PLY files with ground truth JSON")
    bench_options(gen)
    gen.set_defaults(func=cmd_gen)

    run = commands.add_parser("run", help="run the synthetic benchmark sweep")
    bench_options(run)
    run.add_argument("--threads", type=int, default=1, help="worker threads")
    run.add_argument("--timings", action="store_true", help="fill the mean_ms column of report.csv")
    run.add_argument("--ablation", help="comma separated ablation variants (A0-A3, B0-B3, C1) or 'all'")
    run.set_defaults(func=cmd_run)

    pose = commands.add_parser("pose", help="estimate the pose between two PLY clouds")
    pose.add_argument("query", help="query cloud (PLY)")
    pose.add_argument("reference", help="reference cloud (PLY)")
    pose.add_argument("--config", help="pipeline configuration (JSON)")
    pose.add_argument("--seed", type=int, help="random seed")
    pose.add_argument("--provider", choices=sorted(PROVIDERS), help="descriptor provider")
    pose.add_argument("--features-query", help="feature matrix of the query cloud (file provider)")
    pose.add_argument("--features-reference", help="feature matrix of the reference cloud (file provider)")
    pose.add_argument("--out-dir", help="write pose.json here instead of stdout")
    pose.set_defaults(func=cmd_pose)

    segmatch = commands.add_parser("segmatch", help="assign mask proposals to reference objects")
    segmatch.add_argument("proposals", help="proposal manifest (JSON)")
    segmatch.add_argument("references", help="reference manifest (JSON)")
    segmatch.add_argument("--min-score", type=float, default=0.0)
    segmatch.add_argument("--iou-threshold", type=float, default=0.7)
    segmatch.add_argument("--confidence-floor", type=float, default=0.5)
    segmatch.add_argument("--out-dir", help="write assignments.json here instead of stdout")
    segmatch.set_defaults(func=cmd_segmatch)

    loss = commands.add_parser("loss", help="evaluate losses of dumped correlation fields")
    loss.add_argument("manifest", help="stage manifest (JSON)")
    loss.add_argument("--reduction", choices=("mean", "sum"), default="mean")
    loss.add_argument("--weighting", choices=("balanced", "uniform"), default="balanced")
    loss.add_argument("--out-dir", help="write loss.json here instead of stdout")
    loss.set_defaults(func=cmd_loss)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logger = logging.getLogger("refpose")

    try:
        return args.func(args, logger)
    except ConfigError as exc:
        logger.error("%s", exc)
        return 2
    except (RefposeError, OSError, KeyError, ValueError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 1
