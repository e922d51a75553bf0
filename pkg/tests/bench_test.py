"""Synthetic benchmark runner and reports"""

import csv
import io
import json
import logging
from types import SimpleNamespace

import numpy as np
import pytest

from refpose.bench import (
    ABLATION_COLUMNS,
    CSV_COLUMNS,
    BenchmarkRunner,
    BinSummary,
    PairResult,
    pair_seed,
    run_benchmark,
)
from refpose.config import BenchmarkConfig, PipelineConfig
from refpose.errors import NoValidHypothesis
from refpose.fileio import read_json, read_ply
from refpose.geometry import RigidTransform

from .fixtures import FixturePipeline

# pylint: disable=missing-function-docstring


class FailingEstimator:
    def estimate(self, q_cam, p_cam, rng=None):
        raise NoValidHypothesis("no triplet survived")



class IdentityEstimator:
    def estimate(self, q_cam, p_cam, rng=None):
        return SimpleNamespace(pose=RigidTransform.identity(), n_corr=len(q_cam))


def small_benchmark(pipeline) -> BenchmarkConfig:
    return BenchmarkConfig(
        shapes=({"kind": "composite", "point_count": 300},),
        bins=((0.0, 10.0), (40.0, 50.0)),
        pairs_per_bin=2,
        noise_sigma=0.0,
        full_views=True,
        pipeline=pipeline,
        seed=3,
    )


def test_tasks_and_seeds(small_pipeline: FixturePipeline) -> None:
    runner = BenchmarkRunner(small_benchmark(small_pipeline))
    assert runner.tasks() == [(0, 0, 0), (1, 0, 0), (2, 1, 0), (3, 1, 0)]
    assert pair_seed(3, 2).generate_state(2).tolist() != pair_seed(3, 1).generate_state(2).tolist()

    pair, _ = runner.make_pair(2, 1, 0)
    assert 40.0 <= pair.rotation_distance_deg <= 50.0
    again, _ = runner.make_pair(2, 1, 0)
    assert np.array_equal(pair.query.points, again.query.points)


def test_run_is_independent_of_threads(small_pipeline: FixturePipeline) -> None:
    config = small_benchmark(small_pipeline)
    single = run_benchmark(config, threads=1, logger=logging.getLogger())
    parallel = run_benchmark(config, threads=8)
    assert single.to_csv() == parallel.to_csv()
    assert single.pairs_csv() == parallel.pairs_csv()
    assert [pair.index for pair in parallel.pairs] == [0, 1, 2, 3]


def test_report_csv(small_pipeline: FixturePipeline) -> None:
    report = run_benchmark(small_benchmark(small_pipeline))
    rows = list(csv.reader(io.StringIO(report.to_csv())))
    assert rows[0] == list(CSV_COLUMNS)
    assert len(rows) == 3
    assert rows[1][:3] == ["0", "10", "2"]
    assert rows[2][:3] == ["40", "50", "2"]
    assert all(row[-1] == "" for row in rows[1:])
    for row in rows[1:]:
        assert 0.0 <= float(row[3]) <= float(row[4]) <= 1.0
        assert float(row[7]) == pytest.approx(1.0)

    timed = list(csv.reader(io.StringIO(report.to_csv(timings=True))))
    assert all(float(row[-1]) >= 0 for row in timed[1:])


def test_failures_are_counted(small_pipeline: FixturePipeline) -> None:
    config = small_benchmark(small_pipeline)
    report = BenchmarkRunner(config, estimator=FailingEstimator()).run()  # type: ignore[arg-type]
    for summary in report.bins:
        assert summary.failures == 2
        assert summary.mean_rot_err == 180.0
        assert summary.succ_5_5 == summary.succ_10_10 == 0.0
        assert summary.acc_15 == summary.acc_30 == 0.0
        assert summary.mean_mssd is None
    assert {pair.failure for pair in report.pairs} == {"NoValidHypothesis"}


def test_write_report(tmp_path, small_pipeline: FixturePipeline) -> None:
    config = small_benchmark(small_pipeline)
    report = BenchmarkRunner(config, estimator=FailingEstimator()).run()  # type: ignore[arg-type]
    report.write(tmp_path / "out")
    data = json.loads((tmp_path / "out" / "report.json").read_text(encoding="utf-8"))
    assert BenchmarkConfig.from_dict(data["config"]) == config
    assert [b["bin_lo"] for b in data["bins"]] == [0.0, 40.0]
    assert "mean_ms" not in data["bins"][0]
    assert len(data["timings"]["mean_ms"]) == 2
    assert (tmp_path / "out" / "report.csv").read_text(encoding="utf-8") == report.to_csv()
    assert len((tmp_path / "out" / "pairs.csv").read_text(encoding="utf-8").splitlines()) == 5


def test_generate(tmp_path, small_pipeline: FixturePipeline) -> None:
    runner = BenchmarkRunner(small_benchmark(small_pipeline))
    written = runner.generate(tmp_path)
    assert [path.name for path in written] == ["pair_0000", "pair_0001", "pair_0002", "pair_0003"]

    metadata = read_json(tmp_path / "pair_0002" / "gt.json")
    assert metadata["rot_bin"] == [40.0, 50.0]
    assert 40.0 <= metadata["rotation_distance_deg"] <= 50.0
    query = read_ply(tmp_path / "pair_0002" / "query.ply")
    reference = read_ply(tmp_path / "pair_0002" / "reference.ply")
    rotation = np.array(metadata["gt"]["rotation"])
    translation = np.array(metadata["gt"]["translation"])
    assert np.allclose(query.points @ rotation.T + translation, reference.points, atol=1e-9)


def test_bin_summary_accuracy() -> None:
    results = [
        PairResult(i, 0, 0, 5.0, 0.9, rot_err, 0.0, 0.01, 0.001, 10) for i, rot_err in enumerate([1.0, 20.0, 40.0])
    ]
    results.append(PairResult(3, 0, 0, 5.0, 0.5, 180.0, 0.0, 0.0, 0.0, 0, failure="NoValidHypothesis"))
    summary = BinSummary.from_results((0.0, 10.0), results)
    assert summary.acc_15 == 0.25
    assert summary.acc_30 == 0.5
    assert summary.succ_5_5 == summary.succ_10_10 == 0.25
    assert summary.median_rot_err == 30.0
    assert summary.mean_mssd == pytest.approx(0.001)
    assert summary.failures == 1


def test_mssd_uses_query_frame_model(small_pipeline: FixturePipeline) -> None:
    runner = BenchmarkRunner(small_benchmark(small_pipeline), estimator=IdentityEstimator())  # type: ignore[arg-type]
    for task in runner.tasks():
        pair, _ = runner.make_pair(*task)
        result = runner.run_pair(*task)
        # full views: the query is the model in the query frame, point for point
        expected = np.linalg.norm(pair.reference.points - pair.query.points, axis=1).max()
        assert result.mssd == pytest.approx(expected)


def test_run_ablation(tmp_path, small_pipeline: FixturePipeline) -> None:
    config = small_benchmark(small_pipeline)
    runner = BenchmarkRunner(config)
    report = runner.run_ablation(["A0", "C1"])
    assert list(report.reports) == ["A0", "C1"]
    assert report.reports["C1"].to_csv() == runner.run().to_csv()

    rows = report.rows()
    assert [row["variant"] for row in rows] == ["A0", "C1"]
    assert (rows[0]["grf"], rows[0]["lrf"], rows[0]["fine"], rows[0]["overlap"]) == (False, False, False, False)
    assert all(row["n"] == 4 for row in rows)

    report.write(tmp_path)
    table = list(csv.reader(io.StringIO((tmp_path / "ablation.csv").read_text(encoding="utf-8"))))
    assert table[0] == list(ABLATION_COLUMNS)
    assert [row[0] for row in table[1:]] == ["A0", "C1"]
    data = read_json(tmp_path / "ablation.json")
    assert [row["variant"] for row in data["variants"]] == ["A0", "C1"]
    assert len(data["bins"]["A0"]) == 2

    assert BenchmarkRunner(config).run_ablation().reports == {}
    with pytest.raises(KeyError, match="Available variants"):
        runner.run_ablation(["Z9"])


def test_partial_overlap_success() -> None:
    config = BenchmarkConfig(
        bins=tuple((float(lo), float(lo + 10)) for lo in range(0, 50, 10)),
        pairs_per_bin=40,
        noise_sigma=0.005,
        pipeline=PipelineConfig(),
        seed=7,
    )
    report = run_benchmark(config, threads=4)
    overlapping = [pair for pair in report.pairs if pair.overlap_ratio >= 0.6]
    assert len(overlapping) >= 100
    assert np.mean([pair.succeeded(10.0, 0.10) for pair in overlapping]) >= 0.7


def test_success_falls_with_rotation() -> None:
    config = BenchmarkConfig(pairs_per_bin=16, noise_sigma=0.005, seed=8)
    report = run_benchmark(config, threads=4)
    assert len(report.bins) == 9
    small = np.mean([b.succ_10_10 for b in report.bins if b.bin_hi <= 50.0])
    large = np.mean([b.succ_10_10 for b in report.bins if b.bin_lo >= 50.0])
    assert large < small
