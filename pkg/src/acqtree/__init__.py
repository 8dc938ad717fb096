"""Discrete-candidate Bayesian optimization with classifier-based
acquisition trees and statistical cluster pruning."""

__version__ = "0.1.0"

from ._rng import RngHandle
from .bench import LevySpec, levy_value, make_levy_pool
from .classifier import (
    ClassifierParams,
    LfboClassifier,
    TrainConfig,
    UtilitySpec,
    acquisition,
    init_params,
    lfbo_grad,
    lfbo_loss,
    predict,
    quantile_threshold,
    relative_density_ratio,
    train,
)
from .clustering import ClusterAssignment, LloydKMeans, kmeans_cluster
from .llm import (
    LlmEndpointConfig,
    PromptTemplate,
    llm_cluster,
    load_template,
    parse_labels,
    render_prompts,
)
from .metrics import MetricSeries, aggregate, avg_regret, gap, metric_series
from .pool import (
    Candidate,
    CandidatePool,
    Observation,
    ObservationSet,
    PoolExhaustedError,
    PoolFormatError,
    load_pool,
    save_pool,
    stratified_init,
)
from .runner import RunConfig, RunTrace, load_config, run
from .selection import ScoreSpec, SelectionResult, node_score, select_candidate, select_path
from .stats import (
    GroupSummary,
    PairwiseResult,
    WelchResult,
    games_howell,
    select_clusters,
    summarize_group,
    welch_anova,
)
from .tree import AcquisitionTree, TreeNode, is_splitable

__all__ = [
    "AcquisitionTree",
    "Candidate",
    "CandidatePool",
    "ClassifierParams",
    "ClusterAssignment",
    "GroupSummary",
    "LevySpec",
    "LfboClassifier",
    "LlmEndpointConfig",
    "LloydKMeans",
    "MetricSeries",
    "Observation",
    "ObservationSet",
    "PairwiseResult",
    "PoolExhaustedError",
    "PoolFormatError",
    "PromptTemplate",
    "RngHandle",
    "RunConfig",
    "RunTrace",
    "ScoreSpec",
    "SelectionResult",
    "TrainConfig",
    "TreeNode",
    "UtilitySpec",
    "WelchResult",
    "acquisition",
    "aggregate",
    "avg_regret",
    "games_howell",
    "gap",
    "init_params",
    "is_splitable",
    "kmeans_cluster",
    "levy_value",
    "lfbo_grad",
    "lfbo_loss",
    "llm_cluster",
    "load_config",
    "load_pool",
    "load_template",
    "make_levy_pool",
    "metric_series",
    "node_score",
    "parse_labels",
    "predict",
    "quantile_threshold",
    "relative_density_ratio",
    "render_prompts",
    "run",
    "save_pool",
    "select_candidate",
    "select_clusters",
    "select_path",
    "stratified_init",
    "summarize_group",
    "train",
    "welch_anova",
]
