"""Laminar flow maps for long-term pedestrian motion prediction.

Learn a map of dynamics from observed trajectories by clustering
velocity observations spatially, extracting each cluster's laminar
direction-speed component with a histogram Bayes filter, and scoring
laminar dominance with a divergence measure. Use the map to sample and
rank long-horizon rollouts, with a constant velocity baseline and
ADE/FDE evaluation alongside.
"""

from .core import (
    AgentState,
    PredictionTask,
    Trajectory,
    circular_distance,
    propagate,
    signed_angular_delta,
    wrap_angle,
)
from .evaluate import (
    AggregateSummary,
    HeatmapGrid,
    TaskScore,
    ade_fde,
    aggregate,
    heatmap,
    horizon_curves,
    score_task,
    topk,
)
from .histograms import (
    BinGeometry,
    DSHistogram,
    estimate_gamma_r,
    kl_divergence,
    measurement_model,
)
from .ingest import (
    ATC_SCHEMA,
    ColumnSchema,
    DatasetSplit,
    RawRecord,
    filter_region,
    make_tasks,
    parse_csv,
    read_trajectory_csv,
    resample,
    write_trajectory_csv,
)
from .model import ClusterModel, LaceModel, ModelFormatError, TrainParams
from .predict import (
    ObservedVelocity,
    RolloutResult,
    bias_direction,
    observed_velocity,
    predict_cvm,
    predict_lace,
    rank,
    sample_direction,
)
from .synth import FlowScenario, Lane, generate, named_scenario
from .training import extract_laminar, flatten_observations, kmeans_xy, train

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "ATC_SCHEMA",
    "AggregateSummary",
    "BinGeometry",
    "ClusterModel",
    "ColumnSchema",
    "DSHistogram",
    "DatasetSplit",
    "FlowScenario",
    "HeatmapGrid",
    "LaceModel",
    "Lane",
    "ModelFormatError",
    "ObservedVelocity",
    "PredictionTask",
    "RawRecord",
    "RolloutResult",
    "TaskScore",
    "TrainParams",
    "Trajectory",
    "ade_fde",
    "aggregate",
    "bias_direction",
    "circular_distance",
    "estimate_gamma_r",
    "extract_laminar",
    "filter_region",
    "flatten_observations",
    "generate",
    "heatmap",
    "horizon_curves",
    "kl_divergence",
    "kmeans_xy",
    "make_tasks",
    "measurement_model",
    "named_scenario",
    "observed_velocity",
    "parse_csv",
    "predict_cvm",
    "predict_lace",
    "propagate",
    "rank",
    "read_trajectory_csv",
    "resample",
    "sample_direction",
    "score_task",
    "signed_angular_delta",
    "topk",
    "train",
    "wrap_angle",
    "write_trajectory_csv",
]
