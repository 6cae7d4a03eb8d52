"""Sparse graph container, synthetic generators, batching and JSON I/O.

Adjacency is stored in CSR form over *in*-neighbours: row ``i`` of
``csr_targets`` lists every ``j`` with an edge ``j -> i``.  Edge features are
kept in the order the edges were supplied (the "edge id" order) and
``edge_ids`` maps each adjacency slot back to its row of ``edge_features``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Graph",
    "GraphBatch",
    "GraphFormatError",
    "SbmParams",
    "add_self_loops",
    "batch_graphs",
    "build_graph",
    "count_triangles",
    "densify",
    "generate_regression_set",
    "generate_sbm",
    "load_json",
    "regression_target",
    "save_json",
]

NUM_ATOM_TYPES = 4
NUM_BOND_TYPES = 3


class GraphFormatError(ValueError):
    """Raised when a serialized graph cannot be parsed."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable directed graph with node/edge features and optional labels."""

    num_nodes: int
    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    edge_ids: np.ndarray
    node_features: np.ndarray
    edge_features: np.ndarray
    graph_label: Optional[float] = None
    node_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        n = int(self.num_nodes)
        if n < 0:
            raise ValueError("num_nodes must be non-negative")
        offsets = self.csr_offsets
        m = len(self.csr_targets)
        if len(offsets) != n + 1 or offsets[0] != 0 or offsets[-1] != m:
            raise ValueError("csr_offsets must have length num_nodes+1, start at 0 and end at num_edges")
        if np.any(np.diff(offsets) < 0):
            raise ValueError("csr_offsets must be non-decreasing")
        if m and (self.csr_targets.min() < 0 or self.csr_targets.max() >= n):
            raise ValueError("csr_targets entry out of range")
        if len(self.edge_ids) != m or not np.array_equal(np.sort(self.edge_ids), np.arange(m)):
            raise ValueError("edge_ids must be a permutation of 0..num_edges-1")
        if self.node_features.ndim != 2 or self.node_features.shape[0] != n:
            raise ValueError(f"node_features must have {n} rows, got shape {self.node_features.shape}")
        if self.edge_features.ndim != 2 or self.edge_features.shape[0] != m:
            raise ValueError(f"edge_features must have {m} rows, got shape {self.edge_features.shape}")
        if self.node_labels is not None and len(self.node_labels) != n:
            raise ValueError("node_labels must have one entry per node")

    @property
    def num_edges(self) -> int:
        return len(self.csr_targets)

    @property
    def node_dim(self) -> int:
        return self.node_features.shape[1]

    @property
    def edge_dim(self) -> int:
        return self.edge_features.shape[1]

    @cached_property
    def _endpoints(self):
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.csr_offsets))
        src = np.empty(self.num_edges, dtype=np.int64)
        dst = np.empty(self.num_edges, dtype=np.int64)
        src[self.edge_ids] = self.csr_targets
        dst[self.edge_ids] = rows
        src.setflags(write=False)
        dst.setflags(write=False)
        return src, dst

    @property
    def edge_src(self) -> np.ndarray:
        """Source node of every edge, in edge-id order."""
        return self._endpoints[0]

    @property
    def edge_dst(self) -> np.ndarray:
        """Destination node of every edge, in edge-id order."""
        return self._endpoints[1]

    def edge_list(self) -> list[tuple[int, int]]:
        return list(zip(self.edge_src.tolist(), self.edge_dst.tolist()))

    def in_neighbors(self, i: int) -> np.ndarray:
        return self.csr_targets[self.csr_offsets[i]:self.csr_offsets[i + 1]]

    def in_degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    def is_symmetric(self) -> bool:
        fwd = set(zip(self.edge_src.tolist(), self.edge_dst.tolist()))
        return all((d, s) in fwd for s, d in fwd)

    def structurally_equal(self, other: "Graph") -> bool:
        if self.num_nodes != other.num_nodes:
            return False
        same_labels = (self.node_labels is None) == (other.node_labels is None)
        if same_labels and self.node_labels is not None:
            same_labels = np.array_equal(self.node_labels, other.node_labels)
        return (
            same_labels
            and np.array_equal(self.csr_offsets, other.csr_offsets)
            and np.array_equal(self.csr_targets, other.csr_targets)
            and np.array_equal(self.edge_ids, other.edge_ids)
            and np.array_equal(self.node_features, other.node_features)
            and np.array_equal(self.edge_features, other.edge_features)
            and self.graph_label == other.graph_label
        )


def build_graph(
    num_nodes: int,
    edge_list: Sequence[tuple[int, int]],
    node_features=None,
    edge_features=None,
    graph_label: Optional[float] = None,
    node_labels=None,
) -> Graph:
    """Build a :class:`Graph` from a list of directed ``(src, dst)`` pairs.

    Parallel edges are kept.  ``edge_features`` rows follow ``edge_list`` order;
    missing feature matrices default to zero width.
    """
    edges = np.asarray(edge_list, dtype=np.int64).reshape(-1, 2)
    m = len(edges)
    if m and (edges.min() < 0 or edges.max() >= num_nodes):
        bad = edges[(edges < 0).any(axis=1) | (edges >= num_nodes).any(axis=1)][0]
        raise ValueError(f"edge {tuple(bad.tolist())} out of range for {num_nodes} nodes")
    if node_features is None:
        node_features = np.zeros((num_nodes, 0))
    if edge_features is None:
        edge_features = np.zeros((m, 0))
    node_features = np.asarray(node_features, dtype=np.float64)
    edge_features = np.asarray(edge_features, dtype=np.float64)
    if node_features.ndim != 2 or node_features.shape[0] != num_nodes:
        raise ValueError(f"node_features has {node_features.shape[0]} rows, expected {num_nodes}")
    if edge_features.ndim != 2 or edge_features.shape[0] != m:
        raise ValueError(f"edge_features has {edge_features.shape[0]} rows, expected {m}")

    order = np.argsort(edges[:, 1], kind="stable")
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(edges[:, 1], minlength=num_nodes), out=offsets[1:])
    return Graph(
        num_nodes=int(num_nodes),
        csr_offsets=_frozen(offsets, np.int64),
        csr_targets=_frozen(edges[order, 0], np.int64),
        edge_ids=_frozen(order, np.int64),
        node_features=_frozen(node_features, np.float64),
        edge_features=_frozen(edge_features, np.float64),
        graph_label=None if graph_label is None else float(graph_label),
        node_labels=None if node_labels is None else _frozen(node_labels, np.int64),
    )


def _replace_edges(g: Graph, edges, edge_features) -> Graph:
    return build_graph(g.num_nodes, edges, g.node_features, edge_features, g.graph_label, g.node_labels)


def densify(g: Graph) -> Graph:
    """Complete digraph on ``g``'s nodes; edge features are dropped."""
    n = g.num_nodes
    src, dst = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mask = src != dst
    edges = np.stack([src[mask], dst[mask]], axis=1)
    return _replace_edges(g, edges, np.zeros((len(edges), 0)))


def add_self_loops(g: Graph) -> Graph:
    """Append one ``i -> i`` edge per node (zero edge features)."""
    loops = np.repeat(np.arange(g.num_nodes)[:, None], 2, axis=1)
    edges = np.concatenate([np.stack([g.edge_src, g.edge_dst], axis=1), loops])
    feats = np.concatenate([g.edge_features, np.zeros((g.num_nodes, g.edge_dim))])
    return _replace_edges(g, edges, feats)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SbmParams:
    """Stochastic block model parameters.

    ``feature_noise`` is the fraction of nodes (per block, at least one) whose
    input feature reveals the block; every other node shows a neutral symbol.
    """

    num_blocks: int
    block_sizes: tuple
    p_intra: float
    q_inter: float
    feature_noise: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "block_sizes", tuple(int(b) for b in self.block_sizes))
        if len(self.block_sizes) != self.num_blocks:
            raise ValueError("block_sizes must have num_blocks entries")
        if any(b < 1 for b in self.block_sizes):
            raise ValueError("every block needs at least one node")
        if not 0.0 <= self.q_inter < self.p_intra <= 1.0:
            raise ValueError("need 0 <= q_inter < p_intra <= 1")
        if not 0.0 <= self.feature_noise <= 1.0:
            raise ValueError("feature_noise must lie in [0, 1]")


def generate_sbm(params: SbmParams, rng_seed: int) -> Graph:
    """Sample one SBM graph with node labels equal to block ids.

    Node order is shuffled so that node ids carry no block information.
    """
    rng = np.random.default_rng(rng_seed)
    labels = np.repeat(np.arange(params.num_blocks), params.block_sizes)
    labels = labels[rng.permutation(len(labels))]
    n = len(labels)

    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], params.p_intra, params.q_inter)
    keep = rng.random(len(iu)) < prob
    i, j = iu[keep], ju[keep]
    edges = np.concatenate([np.stack([i, j], 1), np.stack([j, i], 1)])

    neutral = params.num_blocks
    symbol = np.full(n, neutral)
    for b in range(params.num_blocks):
        members = np.flatnonzero(labels == b)
        n_reveal = max(1, int(round(params.feature_noise * len(members))))
        symbol[rng.choice(members, size=n_reveal, replace=False)] = b
    feats = np.eye(params.num_blocks + 1)[symbol]
    return build_graph(n, edges, feats, None, node_labels=labels)


def count_triangles(num_nodes: int, edges) -> int:
    adj = np.zeros((num_nodes, num_nodes))
    for s, d in edges:
        if s != d:
            adj[s, d] = adj[d, s] = 1.0
    return int(round(np.trace(adj @ adj @ adj) / 6))


def regression_target(num_nodes: int, num_triangles: int, num_edges: int) -> float:
    """Closed-form structural label used by the synthetic regression set."""
    return 0.1 * num_nodes + 0.3 * num_triangles - 0.05 * num_edges


def generate_regression_set(num_graphs: int, size_range=(6, 12), rng_seed: int = 0,
                            extra_edge_prob: float = 0.2) -> list[Graph]:
    """Random connected molecule-like graphs with a closed-form graph label.

    Nodes carry a one-hot "atom" type out of 4, edges a one-hot "bond" type
    out of 3 (shared by both directions of an undirected bond).
    """
    lo, hi = size_range
    if lo < 2 or hi < lo:
        raise ValueError("size_range must satisfy 2 <= min <= max")
    rng = np.random.default_rng(rng_seed)
    graphs = []
    for _ in range(num_graphs):
        n = int(rng.integers(lo, hi + 1))
        undirected = {(int(rng.integers(0, v)), v) for v in range(1, n)}
        for a in range(n):
            for b in range(a + 1, n):
                if (a, b) not in undirected and rng.random() < extra_edge_prob:
                    undirected.add((a, b))
        undirected = sorted(undirected)
        bonds = rng.integers(0, NUM_BOND_TYPES, size=len(undirected))
        edges, bond_of_edge = [], []
        for (a, b), t in zip(undirected, bonds):
            edges += [(a, b), (b, a)]
            bond_of_edge += [t, t]
        atoms = rng.integers(0, NUM_ATOM_TYPES, size=n)
        label = regression_target(n, count_triangles(n, edges), len(edges))
        graphs.append(build_graph(
            n, edges,
            np.eye(NUM_ATOM_TYPES)[atoms],
            np.eye(NUM_BOND_TYPES)[np.asarray(bond_of_edge, dtype=np.int64)],
            graph_label=label,
        ))
    return graphs


# ---------------------------------------------------------------------------
# batching


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Disjoint union of several graphs plus the bookkeeping to split it again."""

    graph: Graph
    graph_of_node: np.ndarray
    graph_sizes: np.ndarray
    edge_counts: np.ndarray
    graph_labels: Optional[np.ndarray] = None

    @property
    def num_graphs(self) -> int:
        return len(self.graph_sizes)

    @cached_property
    def graph_of_edge(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_graphs), self.edge_counts)

    def node_slices(self) -> list[slice]:
        ends = np.cumsum(self.graph_sizes)
        return [slice(int(e - s), int(e)) for s, e in zip(self.graph_sizes, ends)]

    def edge_slices(self) -> list[slice]:
        ends = np.cumsum(self.edge_counts)
        return [slice(int(e - s), int(e)) for s, e in zip(self.edge_counts, ends)]

    def unbatch(self) -> list[Graph]:
        g = self.graph
        out = []
        for k, (ns, es) in enumerate(zip(self.node_slices(), self.edge_slices())):
            edges = np.stack([g.edge_src[es], g.edge_dst[es]], axis=1) - ns.start
            out.append(build_graph(
                ns.stop - ns.start, edges, g.node_features[ns], g.edge_features[es],
                None if self.graph_labels is None else self.graph_labels[k],
                None if g.node_labels is None else g.node_labels[ns],
            ))
        return out


def batch_graphs(gs: Sequence[Graph]) -> GraphBatch:
    """Merge graphs into one block-diagonal graph, preserving input order."""
    if not gs:
        raise ValueError("cannot batch an empty list of graphs")
    d_n, d_e = gs[0].node_dim, gs[0].edge_dim
    has_graph_label = gs[0].graph_label is not None
    has_node_labels = gs[0].node_labels is not None
    for k, g in enumerate(gs):
        if g.node_dim != d_n or g.edge_dim != d_e:
            raise ValueError(
                f"graph {k} has feature widths ({g.node_dim}, {g.edge_dim}), expected ({d_n}, {d_e})")
        if (g.graph_label is not None) != has_graph_label or (g.node_labels is not None) != has_node_labels:
            raise ValueError(f"graph {k} has a different label kind from graph 0")

    sizes = np.array([g.num_nodes for g in gs], dtype=np.int64)
    counts = np.array([g.num_edges for g in gs], dtype=np.int64)
    node_off = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    src = np.concatenate([g.edge_src + o for g, o in zip(gs, node_off)])
    dst = np.concatenate([g.edge_dst + o for g, o in zip(gs, node_off)])
    merged = build_graph(
        int(sizes.sum()),
        np.stack([src, dst], axis=1),
        np.concatenate([g.node_features for g in gs]),
        np.concatenate([g.edge_features for g in gs]),
        node_labels=np.concatenate([g.node_labels for g in gs]) if has_node_labels else None,
    )
    return GraphBatch(
        graph=merged,
        graph_of_node=_frozen(np.repeat(np.arange(len(gs)), sizes), np.int64),
        graph_sizes=_frozen(sizes, np.int64),
        edge_counts=_frozen(counts, np.int64),
        graph_labels=_frozen([g.graph_label for g in gs], np.float64) if has_graph_label else None,
    )


# ---------------------------------------------------------------------------
# JSON format


def graph_to_dict(g: Graph) -> dict:
    out = {
        "num_nodes": g.num_nodes,
        "edges": [list(e) for e in g.edge_list()],
        "node_features": g.node_features.tolist(),
        "edge_features": g.edge_features.tolist(),
        "node_dim": g.node_dim,
        "edge_dim": g.edge_dim,
    }
    if g.graph_label is not None:
        out["graph_label"] = g.graph_label
    if g.node_labels is not None:
        out["node_labels"] = g.node_labels.tolist()
    return out


def _matrix(obj: dict, key: str, rows: int, width_key: str) -> np.ndarray:
    if key not in obj:
        raise GraphFormatError(f"missing field {key!r}")
    value = obj[key]
    if not isinstance(value, list) or any(not isinstance(r, list) for r in value):
        raise GraphFormatError(f"field {key!r} must be a list of rows")
    if len(value) != rows:
        raise GraphFormatError(f"field {key!r} has {len(value)} rows, expected {rows}")
    widths = {len(r) for r in value}
    if len(widths) > 1:
        raise GraphFormatError(f"field {key!r} has inconsistent row lengths {sorted(widths)}")
    width = widths.pop() if widths else int(obj.get(width_key, 0))
    if width_key in obj and obj[width_key] != width:
        raise GraphFormatError(f"field {width_key!r}={obj[width_key]} disagrees with {key!r} row length {width}")
    try:
        return np.array(value, dtype=np.float64).reshape(rows, width)
    except (TypeError, ValueError) as exc:
        raise GraphFormatError(f"field {key!r} contains non-numeric entries") from exc


def graph_from_dict(obj: dict) -> Graph:
    if not isinstance(obj, dict):
        raise GraphFormatError("top level must be a JSON object")
    n = obj.get("num_nodes")
    if not isinstance(n, int) or isinstance(n, bool) or n < 0:
        raise GraphFormatError("field 'num_nodes' must be a non-negative integer")
    edges = obj.get("edges")
    if edges is None:
        raise GraphFormatError("missing field 'edges'")
    if not isinstance(edges, list) or any(
        not isinstance(e, list) or len(e) != 2 or not all(isinstance(v, int) for v in e) for e in edges
    ):
        raise GraphFormatError("field 'edges' must be a list of [src, dst] integer pairs")
    node_features = _matrix(obj, "node_features", n, "node_dim")
    edge_features = _matrix(obj, "edge_features", len(edges), "edge_dim")
    label = obj.get("graph_label")
    if label is not None and not isinstance(label, (int, float)):
        raise GraphFormatError("field 'graph_label' must be a number")
    node_labels = obj.get("node_labels")
    if node_labels is not None and (
        not isinstance(node_labels, list) or len(node_labels) != n
        or not all(isinstance(v, int) for v in node_labels)
    ):
        raise GraphFormatError("field 'node_labels' must be a list of num_nodes integers")
    try:
        return build_graph(n, edges, node_features, edge_features, label, node_labels)
    except ValueError as exc:
        raise GraphFormatError(f"field 'edges': {exc}") from exc


def save_json(g: Graph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(g)))


def load_json(path) -> Graph:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: not valid JSON ({exc})") from exc
    return graph_from_dict(obj)
