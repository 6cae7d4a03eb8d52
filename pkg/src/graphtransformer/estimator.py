"""scikit-learn compatible wrappers.

Samples are :class:`~graphtransformer.graph.Graph` objects, so ``X`` is a
list of graphs rather than a 2-D array.  Hyper-parameters live in
``__init__`` untouched, which keeps ``get_params``/``set_params``/``clone``
working.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .graph import Graph, batch_graphs, densify
from .heads import graph_readout, head_forward
from .model import GraphTransformer, ModelConfig
from .positional import WlRoleVocabulary, lap_pe
from .training import ScheduleConfig, batch_pe, accuracy, fit_model, prepare_samples
from .experiment import split_dataset

__all__ = [
    "GraphTransformerClassifier",
    "GraphTransformerRegressor",
    "LaplacianPE",
    "WLRoleEncoder",
    "check_graphs",
]


def check_graphs(X, require_graph_labels: bool = False, require_node_labels: bool = False) -> list[Graph]:
    """Validate a non-empty sequence of graphs with consistent feature widths."""
    if isinstance(X, Graph):
        X = [X]
    graphs = list(X)
    if not graphs:
        raise ValueError("expected at least one graph")
    for k, g in enumerate(graphs):
        if not isinstance(g, Graph):
            raise TypeError(f"sample {k} is {type(g).__name__}, expected Graph")
        if (g.node_dim, g.edge_dim) != (graphs[0].node_dim, graphs[0].edge_dim):
            raise ValueError(f"graph {k} feature widths differ from graph 0")
        if require_graph_labels and g.graph_label is None:
            raise ValueError(f"graph {k} has no graph_label and y was not given")
        if require_node_labels and g.node_labels is None:
            raise ValueError(f"graph {k} has no node_labels and y was not given")
    return graphs


class LaplacianPE(TransformerMixin, BaseEstimator):
    """Stateless transformer: graphs -> list of ``(n_i, k)`` encodings."""

    def __init__(self, k: int = 8):
        self.k = k

    def fit(self, X, y=None):
        check_graphs(X)
        self.n_features_out_ = self.k
        return self

    def transform(self, X):
        return [lap_pe(g, self.k).encodings for g in check_graphs(X)]


class WLRoleEncoder(TransformerMixin, BaseEstimator):
    """Learns a shared WL role vocabulary; transform gives per-node role ids."""

    def __init__(self, max_roles: int = 64, iterations: int = 3):
        self.max_roles = max_roles
        self.iterations = iterations

    def fit(self, X, y=None):
        self.vocabulary_ = WlRoleVocabulary(self.max_roles, self.iterations).fit(check_graphs(X))
        return self

    def transform(self, X):
        check_is_fitted(self, "vocabulary_")
        return self.vocabulary_.transform(check_graphs(X))


class _GraphTransformerBase(BaseEstimator):
    _task = ""

    def __init__(self, num_layers=10, num_heads=8, hidden_dim=64, pe="laplacian", pe_k=8,
                 wl_max_roles=64, norm="batch_norm", use_edge_features=False, clamp_bound=5.0,
                 add_self_loops=False, full_graph=False, learning_rate=1e-3, decay_factor=0.5,
                 patience=5, min_lr=1e-6, max_epochs=300, batch_size=32, sign_flip=True,
                 validation_fraction=0.0, random_state=0):
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.hidden_dim = hidden_dim
        self.pe = pe
        self.pe_k = pe_k
        self.wl_max_roles = wl_max_roles
        self.norm = norm
        self.use_edge_features = use_edge_features
        self.clamp_bound = clamp_bound
        self.add_self_loops = add_self_loops
        self.full_graph = full_graph
        self.learning_rate = learning_rate
        self.decay_factor = decay_factor
        self.patience = patience
        self.min_lr = min_lr
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.sign_flip = sign_flip
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _model_config(self, graphs: Sequence[Graph], num_outputs: int) -> ModelConfig:
        if self.full_graph and self.use_edge_features:
            raise ValueError("full_graph discards edge features; it cannot be combined with use_edge_features")
        return ModelConfig(
            num_layers=self.num_layers, num_heads=self.num_heads, hidden_dim=self.hidden_dim,
            node_dim=graphs[0].node_dim, edge_dim=graphs[0].edge_dim, pe_kind=self.pe, pe_k=self.pe_k,
            wl_max_roles=self.wl_max_roles, norm_kind=self.norm, use_edge_features=self.use_edge_features,
            clamp_bound=self.clamp_bound, add_self_loops=self.add_self_loops, task=self._task,
            num_outputs=num_outputs,
        )

    def _samples(self, graphs):
        return prepare_samples(graphs, self.model_.cfg, self.full_graph, getattr(self, "wl_vocabulary_", None))

    def _fit(self, graphs: list[Graph], num_outputs: int):
        seed = 0 if self.random_state is None else int(self.random_state)
        cfg = self._model_config(graphs, num_outputs)
        self.model_ = GraphTransformer(cfg, seed=seed)
        if cfg.pe_kind == "wl":
            fit_on = [densify(g) for g in graphs] if self.full_graph else graphs
            self.wl_vocabulary_ = WlRoleVocabulary(self.wl_max_roles).fit(fit_on)
        samples = self._samples(graphs)
        tr, va, _ = split_dataset(len(samples), self.validation_fraction, 0.0, seed)
        schedule = ScheduleConfig(self.learning_rate, self.decay_factor, self.patience, self.min_lr,
                                  self.max_epochs)
        self.fit_result_ = fit_model(
            self.model_, [samples[i] for i in tr], [samples[i] for i in va], schedule, seed=seed,
            batch_size=self.batch_size, sign_flip=self.sign_flip, record_timing=False)
        self.n_epochs_ = self.fit_result_.num_epochs
        return self

    def _raw_outputs(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        graphs = check_graphs(X)
        model = self.model_.eval()
        samples = self._samples(graphs)
        outs = []
        for start in range(0, len(samples), self.batch_size):
            chunk = samples[start:start + self.batch_size]
            batch = batch_graphs([s.graph for s in chunk])
            h, _ = model(batch, batch_pe(chunk, model.cfg, None))
            if self._task == "graph_regression":
                h = graph_readout(h, batch)
            outs.append(head_forward(model.params.head, h).data)
        model.train()
        return outs


class GraphTransformerRegressor(RegressorMixin, _GraphTransformerBase):
    """Graph-level regression with mean readout and an L1 objective."""

    _task = "graph_regression"

    def fit(self, X, y=None):
        graphs = check_graphs(X, require_graph_labels=y is None)
        if y is not None:
            y = np.asarray(y, dtype=np.float64).reshape(-1)
            if len(y) != len(graphs):
                raise ValueError(f"{len(y)} targets for {len(graphs)} graphs")
            graphs = [replace(g, graph_label=float(t)) for g, t in zip(graphs, y)]
        return self._fit(graphs, 1)

    def predict(self, X) -> np.ndarray:
        return np.concatenate([o.reshape(-1) for o in self._raw_outputs(X)])


class GraphTransformerClassifier(ClassifierMixin, _GraphTransformerBase):
    """Node classification with a class-weighted cross-entropy objective.

    ``predict`` returns the labels of every node of every graph, concatenated
    in input order.
    """

    _task = "node_classification"

    def fit(self, X, y=None):
        graphs = check_graphs(X, require_node_labels=y is None)
        if y is not None:
            y = np.asarray(y, dtype=np.int64).reshape(-1)
            sizes = [g.num_nodes for g in graphs]
            if len(y) != sum(sizes):
                raise ValueError(f"{len(y)} labels for {sum(sizes)} nodes")
            parts = np.split(y, np.cumsum(sizes)[:-1])
            graphs = [replace(g, node_labels=p) for g, p in zip(graphs, parts)]
        labels = np.concatenate([g.node_labels for g in graphs])
        self.classes_ = np.arange(int(labels.max()) + 1)
        return self._fit(graphs, len(self.classes_))

    def predict_proba(self, X) -> np.ndarray:
        logits = np.concatenate(self._raw_outputs(X))
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return np.concatenate([o.argmax(axis=1) for o in self._raw_outputs(X)])

    def score(self, X, y=None, sample_weight=None) -> float:
        graphs = check_graphs(X, require_node_labels=y is None)
        if y is None:
            y = np.concatenate([g.node_labels for g in graphs])
        return accuracy(self.predict(graphs), y)
