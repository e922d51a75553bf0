"""Configuration parsing and validation"""

import json

import pytest

from refpose.config import (
    ABLATION_VARIANTS,
    BenchmarkConfig,
    DescriptorProviderSpec,
    FrameConfig,
    PipelineConfig,
    load_benchmark_config,
    load_pipeline_config,
)
from refpose.errors import ConfigError
from refpose.synthetic import SHAPE_KINDS

# pylint: disable=missing-function-docstring


def test_pipeline_defaults() -> None:
    cfg = PipelineConfig.from_dict({})
    assert cfg == PipelineConfig()
    assert (cfg.n_coarse, cfg.n_fine, cfg.n_hypotheses) == (196, 2048, 300)
    assert cfg.frame == FrameConfig(64, 0.3, "fraction")
    assert cfg.descriptor == DescriptorProviderSpec("occupancy", {})
    assert cfg.delta_for(2.0) == pytest.approx(0.3)


def test_pipeline_from_dict() -> None:
    cfg = PipelineConfig.from_dict(
        {
            "n_coarse": 32,
            "delta": 2,
            "delta_units": "meters",
            "n_neighbors": 16,
            "local_radius": 0.05,
            "radius_mode": "meters",
            "descriptor": {"provider": "file", "parameters": {"query": "q.bin"}},
        }
    )
    assert cfg.n_coarse == 32
    assert isinstance(cfg.delta, float)
    assert cfg.delta_for(5.0) == 2.0
    assert cfg.frame == FrameConfig(16, 0.05, "meters")
    assert cfg.descriptor.parameters == {"query": "q.bin"}
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize(
    "data, key",
    [
        ({"n_coarse": 2}, "n_coarse"),
        ({"n_fine": "many"}, "n_fine"),
        ({"delta": 0}, "delta"),
        ({"n_hypotheses": True}, "n_hypotheses"),
        ({"radius_mode": "pixels"}, "radius_mode"),
        ({"mutual_threshold": 1.5}, "mutual_threshold"),
        ({"fine_position_weight": 1.0}, "fine_position_weight"),
        ({"descriptor": {"name": "x"}}, "descriptor"),
    ],
)
def test_pipeline_invalid(data, key) -> None:
    with pytest.raises(ConfigError) as excinfo:
        PipelineConfig.from_dict(data)
    assert excinfo.value.key == key
    assert f"key '{key}'" in str(excinfo.value)


def test_pipeline_unknown_key() -> None:
    with pytest.raises(ConfigError, match="unknown key"):
        PipelineConfig.from_dict({"n_corase": 10})
    with pytest.raises(ConfigError, match="expected an object"):
        PipelineConfig.from_dict([1, 2])


def test_direct_construction_checks() -> None:
    with pytest.raises(ValueError, match="n_neighbors"):
        FrameConfig(n_neighbors=2)
    with pytest.raises(ValueError, match="radius_mode"):
        FrameConfig(radius_mode="pixels")
    with pytest.raises(ValueError, match="coarse_position_weight"):
        PipelineConfig(coarse_position_weight=-0.1)


def test_benchmark_from_dict() -> None:
    cfg = BenchmarkConfig.from_dict(
        {
            "shapes": [{"kind": "box", "point_count": 300}],
            "bins": [[0, 10], [40, 50.5]],
            "pairs_per_bin": 2,
            "full_views": True,
            "pipeline": {"n_coarse": 16},
        }
    )
    assert cfg.bins == ((0.0, 10.0), (40.0, 50.5))
    assert cfg.pipeline.n_coarse == 16
    assert cfg.full_views
    assert BenchmarkConfig.from_dict(cfg.to_dict()) == cfg
    assert len(BenchmarkConfig().bins) == 9


@pytest.mark.parametrize(
    "data, key",
    [
        ({"bins": [[50, 40]]}, "bins[0]"),
        ({"bins": [[0, 190]]}, "bins[0]"),
        ({"bins": []}, "bins"),
        ({"shapes": [{"kind": "torus"}]}, "shapes[0].kind"),
        ({"shapes": [{"kind": "box", "point_count": 10}]}, "shapes[0].point_count"),
        ({"occlusion_fraction": 1.0}, "occlusion_fraction"),
        ({"pipeline": {"n_fine": 1}}, "pipeline.n_fine"),
        ({"ablation": ["A4"]}, "ablation[0]"),
        ({"ablation": ["B3", 3]}, "ablation[1]"),
        ({"pipeline": {"use_grf": "no"}}, "pipeline.use_grf"),
    ],
)
def test_benchmark_invalid(data, key) -> None:
    with pytest.raises(ConfigError) as excinfo:
        BenchmarkConfig.from_dict(data)
    assert excinfo.value.key == key


def test_load_files(tmp_path) -> None:
    path = tmp_path / "pipeline.json"
    path.write_text(json.dumps({"n_fine": 64}), encoding="utf-8")
    assert load_pipeline_config(path).n_fine == 64

    path = tmp_path / "bench.json"
    path.write_text('{\n  "pairs_per_bin": 3,\n  "seed": }\n', encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        load_benchmark_config(path)
    assert excinfo.value.line == 3
    assert str(excinfo.value).startswith(f"{path}:3:")

    path.write_text('{"pairs_per_bin": 0}', encoding="utf-8")
    with pytest.raises(ConfigError, match="pairs_per_bin"):
        load_benchmark_config(path)


def test_benchmark_accepts_every_shape_kind() -> None:
    cfg = BenchmarkConfig.from_dict({"shapes": [{"kind": kind} for kind in SHAPE_KINDS]})
    assert [shape["kind"] for shape in cfg.shapes] == list(SHAPE_KINDS)


def test_ablation_switches() -> None:
    cfg = PipelineConfig.from_dict({"fine_iterations": 2})
    assert (cfg.use_grf, cfg.use_lrf, cfg.use_overlap) == (True, True, True)
    assert cfg.ablated("C1") == cfg

    coarse_only = cfg.ablated("A0")
    assert (coarse_only.use_grf, coarse_only.use_lrf, coarse_only.use_overlap) == (False, False, False)
    assert coarse_only.fine_iterations == 0
    assert coarse_only.n_coarse == cfg.n_coarse

    assert cfg.ablated("A1").use_grf and not cfg.ablated("A1").use_lrf
    assert cfg.ablated("B2").use_lrf and not cfg.ablated("B2").use_grf
    assert cfg.ablated("B3").fine_iterations == 2 and not cfg.ablated("B3").use_overlap
    assert PipelineConfig(fine_iterations=0).ablated("B0").fine_iterations == 1
    assert sorted(ABLATION_VARIANTS) == ["A0", "A1", "A2", "A3", "B0", "B1", "B2", "B3", "C1"]

    with pytest.raises(KeyError, match="Ablation variant D1 does not exist"):
        cfg.ablated("D1")


def test_benchmark_ablation_round_trip() -> None:
    cfg = BenchmarkConfig.from_dict({"ablation": ["A0", "C1"], "pipeline": {"use_overlap": False}})
    assert cfg.ablation == ("A0", "C1")
    assert not cfg.pipeline.use_overlap
    assert BenchmarkConfig.from_dict(cfg.to_dict()) == cfg
    assert BenchmarkConfig().ablation == ()
