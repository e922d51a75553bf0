"""Command line entry points"""

import json

import numpy as np
import pytest

from refpose.cli import build_parser, main
from refpose.fileio import read_json, write_correlation_csv, write_feature_matrix, write_json, write_pgm_mask, write_ply
from refpose.geometry import BinaryMask, RigidTransform, apply_rigid

from .fixtures import FixtureCloud, FixturePipeline, random_rotation

# pylint: disable=missing-function-docstring


def pipeline_json(path, pipeline) -> str:
    write_json(path, pipeline.to_dict())
    return str(path)


def test_parser_requires_command() -> None:
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    args = build_parser().parse_args(["-vv", "run", "--threads", "2", "--timings"])
    assert (args.verbose, args.threads, args.timings, args.out_dir) == (2, 2, True, "refpose-out")


def test_gen(tmp_path) -> None:
    config = tmp_path / "bench.json"
    write_json(config, {"shapes": [{"kind": "box", "point_count": 100}], "bins": [[10, 20]], "pairs_per_bin": 2})
    assert main(["gen", "--config", str(config), "--seed", "5", "--out-dir", str(tmp_path / "pairs")]) == 0
    assert sorted(p.name for p in (tmp_path / "pairs").iterdir()) == ["pair_0000", "pair_0001"]
    assert read_json(tmp_path / "pairs" / "pair_0001" / "gt.json")["rot_bin"] == [10.0, 20.0]


def test_run(tmp_path, small_pipeline: FixturePipeline) -> None:
    config = tmp_path / "bench.json"
    write_json(
        config,
        {
            "shapes": [{"kind": "composite", "point_count": 300}],
            "bins": [[0, 10]],
            "pairs_per_bin": 1,
            "full_views": True,
            "pipeline": small_pipeline.to_dict(),
        },
    )
    out = tmp_path / "report"
    assert main(["run", "--config", str(config), "--out-dir", str(out), "--timings"]) == 0
    lines = (out / "report.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    assert not lines[1].endswith(",")
    assert read_json(out / "report.json")["config"]["timings"] is True


def test_pose(tmp_path, composite_cloud: FixtureCloud, small_pipeline: FixturePipeline) -> None:
    gt = RigidTransform(random_rotation(np.random.default_rng(0)), [0.01, 0.02, 0.0])
    write_ply(tmp_path / "q.ply", composite_cloud)
    write_ply(tmp_path / "p.ply", apply_rigid(gt, composite_cloud))
    config = pipeline_json(tmp_path / "pipeline.json", small_pipeline)

    argv = ["pose", str(tmp_path / "q.ply"), str(tmp_path / "p.ply"), "--config", config, "--out-dir", str(tmp_path)]
    assert main(argv) == 0
    pose = read_json(tmp_path / "pose.json")
    assert np.allclose(pose["rotation"], gt.rotation, atol=0.01)
    assert {"translation", "coarse", "n_corr", "residual", "coarse_residual"} <= set(pose)


def test_pose_to_stdout(tmp_path, capsys, composite_cloud: FixtureCloud, small_pipeline: FixturePipeline) -> None:
    write_ply(tmp_path / "q.ply", composite_cloud)
    config = pipeline_json(tmp_path / "pipeline.json", small_pipeline)
    assert main(["pose", str(tmp_path / "q.ply"), str(tmp_path / "q.ply"), "--config", config, "--seed", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["n_corr"] >= 3


def test_pose_with_file_provider(tmp_path, composite_cloud: FixtureCloud, small_pipeline: FixturePipeline) -> None:
    write_ply(tmp_path / "q.ply", composite_cloud)
    write_feature_matrix(tmp_path / "features.bin", np.random.default_rng(1).normal(size=(len(composite_cloud), 8)))
    config = pipeline_json(tmp_path / "pipeline.json", small_pipeline)
    argv = [
        "pose", str(tmp_path / "q.ply"), str(tmp_path / "q.ply"), "--config", config, "--provider", "file",
        "--features-query", str(tmp_path / "features.bin"), "--out-dir", str(tmp_path),
    ]  # fmt: skip
    # reference features are missing
    assert main(argv) == 2

    assert main(argv + ["--features-reference", str(tmp_path / "features.bin")]) == 0
    assert np.allclose(read_json(tmp_path / "pose.json")["rotation"], np.eye(3), atol=1e-6)


def test_segmatch(tmp_path) -> None:
    eye = np.eye(3)
    for name, cols, descriptor in (("a", [0, 1], eye[[0, 1]]), ("b", [0, 1], eye[[0, 1]]), ("c", [2], eye[[1, 2]])):
        bits = np.zeros((2, 3), dtype=bool)
        bits[:, cols] = True
        write_pgm_mask(tmp_path / f"{name}.pgm", BinaryMask(3, 2, bits))
        write_feature_matrix(tmp_path / f"{name}.bin", descriptor)
    write_json(
        tmp_path / "proposals.json",
        [
            {"mask": "a.pgm", "confidence": 0.6, "descriptor": "a.bin"},
            {"mask": "b.pgm", "confidence": 0.9, "descriptor": "b.bin"},
            {"mask": "c.pgm", "confidence": 0.8, "descriptor": "c.bin"},
        ],
    )
    references = [{"class_id": 4, "descriptor": "a.bin"}, {"class_id": 9, "descriptor": "c.bin"}]
    write_json(tmp_path / "references.json", references)

    argv = ["segmatch", str(tmp_path / "proposals.json"), str(tmp_path / "references.json"), "--out-dir", str(tmp_path)]
    assert main(argv) == 0
    assignments = read_json(tmp_path / "assignments.json")
    assert [(a["proposal"], a["class_id"]) for a in assignments] == [(1, 4), (2, 9)]


def test_loss(tmp_path) -> None:
    write_correlation_csv(tmp_path / "x.csv", np.zeros((3, 3)))
    stage = {
        "correlation": "x.csv",
        "y_q": [1, 2],
        "y_p": [1, 2],
        "o_hat_q": [0.5, 0.5, 0.5],
        "o_bar_q": [0.0, 1.0, 1.0],
        "o_hat_p": [0.5, 0.5, 0.5],
        "o_bar_p": [0.0, 1.0, 1.0],
        "name": "coarse",
    }
    write_json(tmp_path / "stages.json", [stage, stage])
    assert main(["loss", str(tmp_path / "stages.json"), "--weighting", "uniform", "--out-dir", str(tmp_path)]) == 0
    loss = read_json(tmp_path / "loss.json")
    assert loss["l_x"] == pytest.approx(2 * 2 * np.log(3))
    assert loss["l_o"] == pytest.approx(2 * 2 * np.log(2))
    assert len(loss["stages"]) == 2


def test_errors(tmp_path) -> None:
    config = tmp_path / "bench.json"
    config.write_text('{"bins": [[30, 10]]}', encoding="utf-8")
    assert main(["gen", "--config", str(config), "--out-dir", str(tmp_path)]) == 2
    assert main(["loss", str(tmp_path / "missing.json")]) == 1


def test_run_ablation(tmp_path, small_pipeline: FixturePipeline) -> None:
    config = tmp_path / "bench.json"
    write_json(
        config,
        {
            "shapes": [{"kind": "composite", "point_count": 300}],
            "bins": [[0, 10]],
            "pairs_per_bin": 1,
            "full_views": True,
            "pipeline": small_pipeline.to_dict(),
        },
    )
    out = tmp_path / "ablation"
    assert main(["run", "--config", str(config), "--out-dir", str(out), "--ablation", "A0,C1"]) == 0
    lines = (out / "ablation.csv").read_text(encoding="utf-8").splitlines()
    assert [line.split(",")[0] for line in lines] == ["variant", "A0", "C1"]
    assert not (out / "report.csv").exists()

    assert main(["run", "--config", str(config), "--out-dir", str(out), "--ablation", "A0,Z9"]) == 2
    assert build_parser().parse_args(["run", "--ablation", "all"]).ablation == "all"


def test_segmatch_without_references(tmp_path, capsys) -> None:
    write_pgm_mask(tmp_path / "a.pgm", BinaryMask(3, 2, np.ones((2, 3), dtype=bool)))
    write_feature_matrix(tmp_path / "a.bin", np.eye(3)[:2])
    write_json(tmp_path / "proposals.json", [{"mask": "a.pgm", "confidence": 0.9, "descriptor": "a.bin"}])
    write_json(tmp_path / "references.json", [])

    assert main(["segmatch", str(tmp_path / "proposals.json"), str(tmp_path / "references.json")]) == 0
    output = capsys.readouterr().out
    assert "Infinity" not in output
    assert json.loads(output) == [{"proposal": 0, "class_id": None, "score": None}]


def test_malformed_ply(tmp_path) -> None:
    (tmp_path / "text.ply").write_text("hello\n", encoding="ascii")
    properties = "".join(f"property float {axis}\n" for axis in "xyz")
    header = f"ply\nformat ascii 1.0\nelement vertex 2\n{properties}end_header\n"
    (tmp_path / "bad.ply").write_text(header + "0 0 0\n1 one 0\n", encoding="ascii")
    assert main(["pose", str(tmp_path / "text.ply"), str(tmp_path / "text.ply")]) == 1
    assert main(["pose", str(tmp_path / "bad.ply"), str(tmp_path / "bad.ply")]) == 1
