"""Relative object pose estimation from a single reference view"""

from .bench import AblationReport, BenchmarkReport, BenchmarkRunner, run_benchmark
from .config import (
    ABLATION_VARIANTS,
    BenchmarkConfig,
    FrameConfig,
    PipelineConfig,
    load_benchmark_config,
    load_pipeline_config,
)
from .descriptors import DescriptorProvider, FeatureSet, FileDescriptorProvider, OccupancyDescriptorProvider
from .errors import (
    ConfigError,
    DegenerateGeometry,
    DimensionMismatch,
    EmptySelection,
    EmptyView,
    InsufficientCorrespondences,
    NoValidHypothesis,
    RefposeError,
    ZeroScale,
    ZeroVector,
)
from .geometry import BinaryMask, CameraIntrinsics, DepthMap, FrameTransform, PointCloud, RigidTransform
from .pose import PoseEstimate, PoseEstimator, coarse_pose, estimate_relative_pose, fine_pose
from .reference_frame import build_grf, build_lrf, build_lrfs, local_regions, lrf_normalize
