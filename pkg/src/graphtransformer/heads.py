"""Task-specific MLP heads: graph readout and the two-layer prediction MLP."""

from __future__ import annotations

import numpy as np

from .graph import GraphBatch
from .tensor import Tensor, linear, relu, segment_mean

__all__ = ["TaskHead", "graph_readout", "head_forward", "uniform_init"]

HEAD_KINDS = ("graph_regression", "node_classification")


def uniform_init(rng: np.random.Generator, fan_in: int, shape, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros(shape, name: str) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


class TaskHead:
    """``x -> P relu(Q x)`` with biases, mapping width ``d`` to ``num_outputs`` scores."""

    def __init__(self, kind: str, hidden_dim: int, num_outputs: int, rng: np.random.Generator,
                 prefix: str = "head"):
        if kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {kind!r}")
        if num_outputs < 1:
            raise ValueError("num_outputs must be >= 1")
        self.kind = kind
        self.num_outputs = num_outputs
        d = hidden_dim
        self.Q = uniform_init(rng, d, (d, d), f"{prefix}.Q")
        self.q_bias = zeros(d, f"{prefix}.q_bias")
        self.P = uniform_init(rng, d, (d, num_outputs), f"{prefix}.P")
        self.p_bias = zeros(num_outputs, f"{prefix}.p_bias")

    def parameters(self) -> list[Tensor]:
        return [self.Q, self.q_bias, self.P, self.p_bias]


def head_forward(head: TaskHead, x: Tensor) -> Tensor:
    """Un-normalized scores; no output nonlinearity."""
    return linear(relu(linear(x, head.Q, head.q_bias)), head.P, head.p_bias)


def graph_readout(h: Tensor, batch: GraphBatch) -> Tensor:
    """Mean of final node features per graph, ``(num_graphs, d)``."""
    return segment_mean(h, batch.graph_of_node, batch.num_graphs)
