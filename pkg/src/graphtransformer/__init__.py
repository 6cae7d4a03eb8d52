"""Graph Transformer with Laplacian positional encodings, built on a small autodiff engine."""

from .graph import (
    Graph,
    GraphBatch,
    SbmParams,
    batch_graphs,
    build_graph,
    densify,
    generate_regression_set,
    generate_sbm,
    load_json,
    save_json,
)
from .model import GraphTransformer, ModelConfig, gt_edge_layer, gt_layer, model_forward
from .positional import LapPE, lap_pe, normalized_laplacian, symmetric_eigendecompose, wl_roles
from .training import Adam, ScheduleConfig, fit_model
from .estimator import (
    GraphTransformerClassifier,
    GraphTransformerRegressor,
    LaplacianPE,
    WLRoleEncoder,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Graph",
    "GraphBatch",
    "GraphTransformer",
    "GraphTransformerClassifier",
    "GraphTransformerRegressor",
    "LapPE",
    "LaplacianPE",
    "ModelConfig",
    "SbmParams",
    "ScheduleConfig",
    "WLRoleEncoder",
    "batch_graphs",
    "build_graph",
    "densify",
    "fit_model",
    "generate_regression_set",
    "generate_sbm",
    "gt_edge_layer",
    "gt_layer",
    "lap_pe",
    "load_json",
    "model_forward",
    "normalized_laplacian",
    "save_json",
    "symmetric_eigendecompose",
    "wl_roles",
]
