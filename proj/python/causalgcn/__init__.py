"""Causal GCN inference on top of an APPNP node classifier."""

import json

from . import _core
from ._core import (
    AppnpModel,
    ChoiceModel,
    Error,
    Graph,
    ValidationError,
    causal_uncertainty,
    inject_cross_category_edges,
    load_graph,
    load_model,
    planted_partition,
    predict,
    rbf_kernel,
    solve_svm_dual,
    train_choice_model,
)

__all__ = [
    "AppnpModel",
    "ChoiceModel",
    "Error",
    "Graph",
    "ValidationError",
    "causal_uncertainty",
    "inject_cross_category_edges",
    "load_graph",
    "load_model",
    "planted_partition",
    "predict",
    "rbf_kernel",
    "run_pipeline",
    "solve_svm_dual",
    "train",
    "train_choice_model",
]


def train(graph, config=None):
    """Train APPNP on `graph`. Returns (model, epoch log, best epoch)."""
    return _core.train(graph, json.dumps(config or {}))


def run_pipeline(config, out_dir=None):
    """Full run from a config dict. Returns metrics, predictions, graph_var and CGI classes."""
    metrics, bundle, graph_var, z_cgi = _core.run_pipeline(json.dumps(config), out_dir)
    return {"metrics": json.loads(metrics), "bundle": bundle, "graph_var": graph_var, "z_cgi": z_cgi}
