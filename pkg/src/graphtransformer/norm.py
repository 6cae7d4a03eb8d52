"""Layer and batch normalization on top of the tensor engine."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, TensorError, add, affine_standardize, mul

__all__ = ["NormLayer", "norm_forward"]

NORM_KINDS = ("layer_norm", "batch_norm")


class NormLayer:
    """Learnable scale/shift around either per-row or per-column standardization.

    ``batch_norm`` pools statistics over every row it is given (all nodes, or
    all edges, of a merged batch) and keeps running estimates for eval mode.
    """

    def __init__(self, kind: str, dim: int, momentum: float = 0.1, eps: float = 1e-5, name: str = "norm"):
        if kind not in NORM_KINDS:
            raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.kind = kind
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.mode = "train"
        self.gamma = Tensor(np.ones(dim), requires_grad=True, name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(dim), requires_grad=True, name=f"{name}.beta")
        if kind == "batch_norm":
            self.running_mean = np.zeros(dim)
            self.running_var = np.ones(dim)

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]

    def buffers(self) -> dict:
        if self.kind != "batch_norm":
            return {}
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def __call__(self, x: Tensor) -> Tensor:
        return norm_forward(self, x)


def norm_forward(layer: NormLayer, x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] != layer.dim:
        raise TensorError(f"norm: expected width {layer.dim}, got shape {x.shape}")
    if layer.kind == "layer_norm":
        return affine_standardize(x, layer.gamma, layer.beta, axis=1, eps=layer.eps)[0]
    if layer.mode == "train":
        n = x.shape[0]
        if n < 2:
            raise TensorError("batch_norm in train mode needs at least 2 rows")
        out, mu, var = affine_standardize(x, layer.gamma, layer.beta, axis=0, eps=layer.eps)
        m = layer.momentum
        layer.running_mean = (1 - m) * layer.running_mean + m * mu
        layer.running_var = (1 - m) * layer.running_var + m * var * (n / (n - 1))
        return out
    inv = 1.0 / np.sqrt(layer.running_var + layer.eps)
    return add(mul(mul(add(x, -layer.running_mean), inv), layer.gamma), layer.beta)
