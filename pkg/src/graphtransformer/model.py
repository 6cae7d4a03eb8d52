"""Graph Transformer layers, input embedding and the stacked model.

Weight matrices are stored input-major, ``(d_in, d_out)``, and applied as
``x @ W + b``.  For the per-head projections the ``d x d`` matrix holds all
heads side by side: columns ``k*d_k:(k+1)*d_k`` belong to head ``k``.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .graph import GraphBatch, add_self_loops, batch_graphs
from .heads import TaskHead, uniform_init, zeros
from .norm import NormLayer
from .tensor import (
    Tensor,
    add,
    clamp,
    gather,
    linear,
    matmul,
    mul,
    relu,
    scalar_mul,
    segment_softmax,
    segment_sum,
)

__all__ = [
    "EmbeddingParams",
    "GraphTransformer",
    "GtLayerParams",
    "ModelConfig",
    "ModelParams",
    "embed_inputs",
    "gt_edge_layer",
    "gt_layer",
    "init_params",
    "load_checkpoint",
    "model_forward",
    "save_checkpoint",
]

PE_KINDS = ("none", "laplacian", "wl")
TASKS = ("graph_regression", "node_classification")


@dataclass
class ModelConfig:
    num_layers: int = 10
    num_heads: int = 8
    hidden_dim: int = 64
    node_dim: int = 1
    edge_dim: int = 0
    pe_kind: str = "laplacian"
    pe_k: int = 8
    wl_max_roles: int = 64
    norm_kind: str = "batch_norm"
    use_edge_features: bool = False
    clamp_bound: float = 5.0
    add_self_loops: bool = False
    readout: str = "mean"
    task: str = "graph_regression"
    num_outputs: int = 1

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.num_layers < 0:
            out.append("num_layers must be >= 0")
        if self.num_heads < 1:
            out.append("num_heads must be >= 1")
        elif self.hidden_dim % self.num_heads:
            out.append(f"hidden_dim={self.hidden_dim} is not divisible by num_heads={self.num_heads}")
        if self.pe_kind not in PE_KINDS:
            out.append(f"pe_kind must be one of {PE_KINDS}")
        if self.pe_kind == "laplacian" and self.pe_k < 1:
            out.append("pe_k must be >= 1 for laplacian PE")
        if self.pe_kind == "wl" and self.wl_max_roles < 1:
            out.append("wl_max_roles must be >= 1")
        if self.norm_kind not in ("layer_norm", "batch_norm"):
            out.append("norm_kind must be layer_norm or batch_norm")
        if not self.clamp_bound > 0:
            out.append("clamp_bound must be > 0")
        if self.use_edge_features and self.edge_dim == 0:
            out.append("use_edge_features needs edge_dim > 0; use the plain layer for graphs without edge features")
        if self.readout != "mean":
            out.append("readout must be 'mean'")
        if self.task not in TASKS:
            out.append(f"task must be one of {TASKS}")
        if self.num_outputs < 1:
            out.append("num_outputs must be >= 1")
        return out

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads


class EmbeddingParams:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.hidden_dim
        self.A = uniform_init(rng, cfg.node_dim, (cfg.node_dim, d), "embed.A")
        self.a = zeros(d, "embed.a")
        self.B = self.b = self.C = self.c = self.roles = None
        if cfg.use_edge_features:
            self.B = uniform_init(rng, cfg.edge_dim, (cfg.edge_dim, d), "embed.B")
            self.b = zeros(d, "embed.b")
        if cfg.pe_kind == "laplacian":
            self.C = uniform_init(rng, cfg.pe_k, (cfg.pe_k, d), "embed.C")
            self.c = zeros(d, "embed.c")
        elif cfg.pe_kind == "wl":
            self.roles = uniform_init(rng, cfg.wl_max_roles, (cfg.wl_max_roles, d), "embed.roles")

    def parameters(self) -> list[Tensor]:
        return [t for t in (self.A, self.a, self.B, self.b, self.C, self.c, self.roles) if t is not None]


class GtLayerParams:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str):
        d = cfg.hidden_dim
        self.edge_mode = cfg.use_edge_features

        def lin(name, d_in, d_out):
            setattr(self, name, uniform_init(rng, d_in, (d_in, d_out), f"{prefix}.{name}"))
            setattr(self, f"{name}_bias", zeros(d_out, f"{prefix}.{name}_bias"))

        for name in ("Q", "K", "V"):
            lin(name, d, d)
        lin("O_h", d, d)
        lin("W_h1", d, 2 * d)
        lin("W_h2", 2 * d, d)
        self.norm_h1 = NormLayer(cfg.norm_kind, d, name=f"{prefix}.norm_h1")
        self.norm_h2 = NormLayer(cfg.norm_kind, d, name=f"{prefix}.norm_h2")
        if self.edge_mode:
            lin("E", d, d)
            lin("O_e", d, d)
            lin("W_e1", d, 2 * d)
            lin("W_e2", 2 * d, d)
            self.norm_e1 = NormLayer(cfg.norm_kind, d, name=f"{prefix}.norm_e1")
            self.norm_e2 = NormLayer(cfg.norm_kind, d, name=f"{prefix}.norm_e2")

    def norms(self) -> list[NormLayer]:
        out = [self.norm_h1, self.norm_h2]
        if self.edge_mode:
            out += [self.norm_e1, self.norm_e2]
        return out

    def parameters(self) -> list[Tensor]:
        names = ["Q", "K", "V", "O_h", "W_h1", "W_h2"]
        if self.edge_mode:
            names += ["E", "O_e", "W_e1", "W_e2"]
        out = []
        for n in names:
            out += [getattr(self, n), getattr(self, f"{n}_bias")]
        for norm in self.norms():
            out += norm.parameters()
        return out


class ModelParams:
    """Every learnable tensor of the embedding, the layer stack and the head."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.embedding = EmbeddingParams(cfg, rng)
        self.layers = [GtLayerParams(cfg, rng, f"layers.{i}") for i in range(cfg.num_layers)]
        kind = "graph_regression" if cfg.task == "graph_regression" else "node_classification"
        self.head = TaskHead(kind, cfg.hidden_dim, cfg.num_outputs, rng)

    def parameters(self) -> list[Tensor]:
        out = self.embedding.parameters()
        for layer in self.layers:
            out += layer.parameters()
        return out + self.head.parameters()

    def named_parameters(self) -> dict[str, Tensor]:
        return {t.name: t for t in self.parameters()}

    def norms(self) -> list[NormLayer]:
        return [n for layer in self.layers for n in layer.norms()]


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Fan-in scaled uniform weights, zero biases, unit norm scales."""
    return ModelParams(cfg, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# forward pass


def embed_inputs(batch: GraphBatch, pe, params: EmbeddingParams, cfg: ModelConfig):
    """Input projections; the positional encoding is added here and nowhere else.

    ``pe`` is an ``(n, k)`` array for Laplacian PE, an ``(n,)`` integer array of
    role ids for WL-PE, and ``None`` otherwise.  Returns ``(h0, e0)`` with
    ``e0`` set to ``None`` unless edge features are in use.
    """
    g = batch.graph
    if g.node_dim != cfg.node_dim:
        raise ValueError(f"node features have width {g.node_dim}, model expects {cfg.node_dim}")
    h = linear(g.node_features, params.A, params.a)
    if cfg.pe_kind == "none":
        if pe is not None:
            raise ValueError("pe given but pe_kind is 'none'")
    elif pe is None:
        raise ValueError(f"pe_kind is {cfg.pe_kind!r} but no positional encoding was given")
    elif cfg.pe_kind == "laplacian":
        pe = np.asarray(pe, dtype=np.float64)
        if pe.shape != (g.num_nodes, cfg.pe_k):
            raise ValueError(f"laplacian PE has shape {pe.shape}, expected {(g.num_nodes, cfg.pe_k)}")
        h = add(h, linear(pe, params.C, params.c))
    else:
        roles = np.asarray(pe, dtype=np.int64)
        if roles.shape != (g.num_nodes,):
            raise ValueError(f"WL roles have shape {roles.shape}, expected {(g.num_nodes,)}")
        h = add(h, gather(params.roles, np.minimum(roles, cfg.wl_max_roles - 1)))
    e = None
    if cfg.use_edge_features:
        if g.edge_dim != cfg.edge_dim:
            raise ValueError(f"edge features have width {g.edge_dim}, model expects {cfg.edge_dim}")
        e = linear(g.edge_features, params.B, params.b)
    return h, e


def _pair_products(h, p: GtLayerParams, src, dst, cfg: ModelConfig) -> Tensor:
    q = linear(h, p.Q, p.Q_bias)
    k = linear(h, p.K, p.K_bias)
    return scalar_mul(mul(gather(q, dst), gather(k, src)), 1.0 / math.sqrt(cfg.head_dim))


@functools.lru_cache(maxsize=None)
def _head_blocks(num_heads: int, head_dim: int) -> np.ndarray:
    """``(H, H*d_k)`` 0/1 matrix; row k covers the columns of head k."""
    blocks = np.kron(np.eye(num_heads), np.ones((1, head_dim)))
    blocks.flags.writeable = False
    return blocks


def _head_sums(x: Tensor, cfg: ModelConfig) -> Tensor:
    """Per-head component sums of a head-concatenated ``(m, d)`` tensor."""
    return matmul(x, _head_blocks(cfg.num_heads, cfg.head_dim).T)


def _attend(h, scores, p: GtLayerParams, batch: GraphBatch, cfg: ModelConfig):
    g = batch.graph
    scores = clamp(scores, -cfg.clamp_bound, cfg.clamp_bound)
    w = segment_softmax(scores, g.edge_dst, g.num_nodes)
    v = gather(linear(h, p.V, p.V_bias), g.edge_src)
    # broadcast each head's weight across that head's d_k value columns
    msg = mul(v, matmul(w, _head_blocks(cfg.num_heads, cfg.head_dim)))
    agg = segment_sum(msg, g.edge_dst, g.num_nodes)
    return linear(agg, p.O_h, p.O_h_bias), w


def _residual_ffn(x, update, norm1, w1, b1, w2, b2, norm2) -> Tensor:
    x1 = norm1(add(x, update))
    ffn = linear(relu(linear(x1, w1, b1)), w2, b2)
    return norm2(add(x1, ffn))


def gt_layer(h: Tensor, batch: GraphBatch, params: GtLayerParams, cfg: ModelConfig,
             return_attention: bool = False):
    """One Graph Transformer layer without edge features.

    Attention for edge ``j -> i`` is the clamped scaled dot product of the
    query of ``i`` and the key of ``j``, normalised over the in-neighbours of
    ``i``.  Nodes without in-neighbours receive a zero attention output.
    """
    if cfg.use_edge_features:
        raise ValueError("gt_layer is the edge-free variant; use gt_edge_layer")
    g = batch.graph
    prod = _pair_products(h, params, g.edge_src, g.edge_dst, cfg)
    h_att, w = _attend(h, _head_sums(prod, cfg), params, batch, cfg)
    p = params
    out = _residual_ffn(h, h_att, p.norm_h1, p.W_h1, p.W_h1_bias, p.W_h2, p.W_h2_bias, p.norm_h2)
    return (out, w) if return_attention else out


def gt_edge_layer(h: Tensor, e: Tensor, batch: GraphBatch, params: GtLayerParams, cfg: ModelConfig,
                  return_attention: bool = False):
    """Graph Transformer layer with an edge-feature stream.

    Per head the score vector is ``(Q h_i * K h_j) / sqrt(d_k) * (E e_ij)``
    (elementwise, width ``d_k``).  Its component sum, clamped, is the
    attention logit; the concatenated vectors feed the edge update.
    """
    if not cfg.use_edge_features or not params.edge_mode:
        raise ValueError("gt_edge_layer needs use_edge_features=True; use gt_layer for graphs without edge features")
    g = batch.graph
    if e.shape != (g.num_edges, cfg.hidden_dim):
        raise ValueError(f"edge states have shape {e.shape}, expected {(g.num_edges, cfg.hidden_dim)}")
    p = params
    w_hat = mul(_pair_products(h, p, g.edge_src, g.edge_dst, cfg), linear(e, p.E, p.E_bias))
    h_att, w = _attend(h, _head_sums(w_hat, cfg), p, batch, cfg)
    e_att = linear(w_hat, p.O_e, p.O_e_bias)
    h_out = _residual_ffn(h, h_att, p.norm_h1, p.W_h1, p.W_h1_bias, p.W_h2, p.W_h2_bias, p.norm_h2)
    e_out = _residual_ffn(e, e_att, p.norm_e1, p.W_e1, p.W_e1_bias, p.W_e2, p.W_e2_bias, p.norm_e2)
    return (h_out, e_out, w) if return_attention else (h_out, e_out)


def prepare_batch(batch: GraphBatch, cfg: ModelConfig) -> GraphBatch:
    if not cfg.add_self_loops:
        return batch
    looped = batch_graphs([add_self_loops(g) for g in batch.unbatch()])
    return looped


def model_forward(batch: GraphBatch, params: ModelParams, cfg: ModelConfig, pe=None):
    """Embedding followed by ``num_layers`` layers; returns ``(h, e)``."""
    batch = prepare_batch(batch, cfg)
    h, e = embed_inputs(batch, pe, params.embedding, cfg)
    for layer in params.layers:
        if cfg.use_edge_features:
            h, e = gt_edge_layer(h, e, batch, layer, cfg)
        else:
            h = gt_layer(h, batch, layer, cfg)
    return h, e


class GraphTransformer:
    """Config plus parameters, with train/eval switching for the norm layers."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, params: Optional[ModelParams] = None):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)

    def parameters(self) -> list[Tensor]:
        return self.params.parameters()

    def train(self) -> "GraphTransformer":
        for n in self.params.norms():
            n.mode = "train"
        return self

    def eval(self) -> "GraphTransformer":
        for n in self.params.norms():
            n.mode = "eval"
        return self

    def __call__(self, batch: GraphBatch, pe=None):
        return model_forward(batch, self.params, self.cfg, pe)

    def save(self, path) -> None:
        save_checkpoint(path, self.cfg, self.params)

    @classmethod
    def load(cls, path) -> "GraphTransformer":
        cfg, params = load_checkpoint(path)
        return cls(cfg, params=params)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, cfg: ModelConfig, params: ModelParams) -> None:
    arrays = [{"name": name, "shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
              for name, t in params.named_parameters().items()]
    buffers = []
    for norm in params.norms():
        for key, value in norm.buffers().items():
            buffers.append({"name": f"{norm.gamma.name[:-len('.gamma')]}.{key}",
                            "shape": list(value.shape), "data": value.tolist()})
    doc = {"config": asdict(cfg), "params": arrays, "buffers": buffers}
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    """Rebuild ``(ModelConfig, ModelParams)``; every name and shape is cross-checked."""
    doc = json.loads(Path(path).read_text())
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(doc.get("config", {})) - known
    if unknown:
        raise ValueError(f"checkpoint config has unknown keys {sorted(unknown)}")
    cfg = ModelConfig(**doc["config"])
    params = init_params(cfg)
    expected = params.named_parameters()
    stored = {a["name"]: a for a in doc["params"]}
    missing = sorted(set(expected) - set(stored))
    extra = sorted(set(stored) - set(expected))
    if missing or extra:
        raise ValueError(f"checkpoint parameter names differ: missing {missing}, unexpected {extra}")
    for name, t in expected.items():
        a = stored[name]
        if tuple(a["shape"]) != t.shape or len(a["data"]) != t.data.size:
            raise ValueError(f"parameter {name}: stored shape {tuple(a['shape'])}, model expects {t.shape}")
        t.data = np.array(a["data"], dtype=np.float64).reshape(t.shape)
    buffers = {b["name"]: b for b in doc.get("buffers", [])}
    for norm in params.norms():
        prefix = norm.gamma.name[:-len(".gamma")]
        for key, value in norm.buffers().items():
            b = buffers.get(f"{prefix}.{key}")
            if b is None or tuple(b["shape"]) != value.shape:
                raise ValueError(f"buffer {prefix}.{key} missing or mis-shaped")
            setattr(norm, key, np.array(b["data"], dtype=np.float64))
    return cfg, params
