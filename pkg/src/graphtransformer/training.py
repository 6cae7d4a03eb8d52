"""Losses, optimizer, learning-rate schedule, metrics and the fitting loop."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .graph import Graph, GraphBatch, batch_graphs, densify
from .heads import graph_readout, head_forward
from .model import GraphTransformer, ModelConfig
from .positional import WlRoleVocabulary, lap_pe
from .tensor import Tape, Tensor, TensorError, abs_, log_softmax, mean, mul, sub, sum_

__all__ = [
    "Adam",
    "EpochRecord",
    "FitResult",
    "PlateauScheduler",
    "ScheduleConfig",
    "accuracy",
    "fit_model",
    "l1_loss",
    "lr_schedule_step",
    "mae",
    "prepare_samples",
    "weighted_cross_entropy",
]


# ---------------------------------------------------------------------------
# losses and metrics


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error between ``pred`` (``(g,)`` or ``(g, 1)``) and ``target``."""
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.data.size != target.size:
        raise TensorError(f"l1_loss: {pred.data.size} predictions for {target.size} targets")
    flat = pred if pred.ndim == 1 else sum_(pred, axis=1)
    return mean(abs_(sub(flat, target)))


def class_weights(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """``n / (C * count_c)`` per class; classes absent from ``labels`` get 0."""
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    w = np.zeros(num_classes)
    present = counts > 0
    w[present] = len(labels) / (num_classes * counts[present])
    return w


def weighted_cross_entropy(logits: Tensor, labels, class_counts: Optional[np.ndarray] = None) -> Tensor:
    """Mean over nodes of ``weight[label] * -log softmax(logits)[label]``.

    Weights come from ``class_counts`` when given, otherwise from the label
    histogram of this batch.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n, num_classes = logits.shape
    if labels.shape != (n,):
        raise TensorError(f"weighted_cross_entropy: {len(labels)} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise TensorError(f"weighted_cross_entropy: label out of range for {num_classes} classes")
    if class_counts is None:
        w = class_weights(labels, num_classes)
    else:
        counts = np.asarray(class_counts, dtype=np.float64)
        w = np.zeros(num_classes)
        w[counts > 0] = counts.sum() / (num_classes * counts[counts > 0])
    pick = np.zeros((n, num_classes))
    pick[np.arange(n), labels] = -w[labels] / max(n, 1)
    return sum_(mul(log_softmax(logits), pick))


def mae(pred, target) -> float:
    return float(np.mean(np.abs(np.asarray(pred).reshape(-1) - np.asarray(target).reshape(-1))))


def accuracy(pred_labels, labels, weighted: bool = False) -> float:
    """Fraction of correct labels, or the mean per-class recall when ``weighted``."""
    pred_labels = np.asarray(pred_labels)
    labels = np.asarray(labels)
    if not weighted:
        return float(np.mean(pred_labels == labels))
    recalls = [np.mean(pred_labels[labels == c] == c) for c in np.unique(labels)]
    return float(np.mean(recalls))


# ---------------------------------------------------------------------------
# optimizer and schedule


class Adam:
    """Bias-corrected Adam over a fixed list of tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class ScheduleConfig:
    initial_lr: float = 1e-3
    decay_factor: float = 0.5
    patience: int = 5
    min_lr: float = 1e-6
    max_epochs: int = 300

    def __post_init__(self):
        problems = []
        if not 0 < self.decay_factor < 1:
            problems.append("decay_factor must lie in (0, 1)")
        if not 0 < self.min_lr < self.initial_lr:
            problems.append("need 0 < min_lr < initial_lr")
        if self.patience < 1:
            problems.append("patience must be >= 1")
        if self.max_epochs < 1:
            problems.append("max_epochs must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))


IMPROVEMENT_THRESHOLD = 1e-6


class PlateauScheduler:
    """Reduce-on-plateau decay with the stop-below-``min_lr`` rule.

    The first epoch only sets the reference loss and counts toward patience,
    so a completely flat history decays at epochs ``patience``,
    ``2 * patience``, ...
    """

    def __init__(self, cfg: ScheduleConfig):
        self.cfg = cfg
        self.lr = cfg.initial_lr
        self.best = np.inf
        self.bad_epochs = 0
        self.epoch = 0
        self.num_decays = 0

    def step(self, val_loss: float) -> tuple[float, bool]:
        self.epoch += 1
        if val_loss < self.best - IMPROVEMENT_THRESHOLD and np.isfinite(self.best):
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        self.best = min(self.best, val_loss)
        if self.bad_epochs >= self.cfg.patience:
            self.lr *= self.cfg.decay_factor
            self.num_decays += 1
            self.bad_epochs = 0
        stop = self.lr < self.cfg.min_lr or self.epoch >= self.cfg.max_epochs
        return self.lr, stop


def lr_schedule_step(cfg: ScheduleConfig, history: Sequence[float]) -> tuple[float, bool]:
    """Learning rate and stop flag after the epochs in ``history``."""
    sched = PlateauScheduler(cfg)
    lr, stop = cfg.initial_lr, False
    for loss in history:
        lr, stop = sched.step(loss)
    return lr, stop


# ---------------------------------------------------------------------------
# fitting


@dataclass
class Sample:
    graph: Graph        # graph the model runs on (possibly densified)
    pe: object          # LapPE, role-id array, or None


def prepare_samples(graphs: Sequence[Graph], cfg: ModelConfig, full_graph: bool = False,
                    wl_vocab: Optional[WlRoleVocabulary] = None, pe_cache=None) -> list[Sample]:
    """Pair each graph with its precomputed positional encoding.

    With ``full_graph`` the model sees the completed graph and the encodings
    are computed on that completed graph too, so no trace of the sparse
    connectivity reaches the model.  ``wl_vocab`` must then have been fitted
    on completed graphs as well, and ``pe_cache`` (sparse encodings) is ignored.
    """
    out = []
    for idx, g in enumerate(graphs):
        seen = densify(g) if full_graph else g
        pe = None
        if cfg.pe_kind == "laplacian":
            cached = None if pe_cache is None or full_graph else pe_cache[idx]
            pe = cached if cached is not None and cached.k == cfg.pe_k else lap_pe(seen, cfg.pe_k)
        elif cfg.pe_kind == "wl":
            pe = wl_vocab.transform_one(seen)
        out.append(Sample(seen, pe))
    return out


def batch_pe(samples: Sequence[Sample], cfg: ModelConfig, rng: Optional[np.random.Generator]):
    if cfg.pe_kind == "none":
        return None
    if cfg.pe_kind == "wl":
        return np.concatenate([s.pe for s in samples])
    blocks = []
    for s in samples:
        enc = s.pe.encodings
        if rng is not None:
            enc = enc * rng.choice(np.array([-1.0, 1.0]), size=enc.shape[1])[None, :]
        blocks.append(enc)
    return np.concatenate(blocks)


def _loss_and_outputs(model: GraphTransformer, batch: GraphBatch, pe, weighted_counts=None):
    h, _ = model(batch, pe)
    if model.cfg.task == "graph_regression":
        pred = head_forward(model.params.head, graph_readout(h, batch))
        return l1_loss(pred, batch.graph_labels), pred
    logits = head_forward(model.params.head, h)
    return weighted_cross_entropy(logits, batch.graph.node_labels, weighted_counts), logits


def evaluate(model: GraphTransformer, samples: Sequence[Sample], weighted_accuracy: bool = False,
             batch_size: int = 128) -> tuple[float, float]:
    """``(loss, metric)`` in eval mode without augmentation.

    The metric is MAE for regression and node accuracy for classification.
    """
    model.eval()
    losses, weights, preds, targets = [], [], [], []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        batch = batch_graphs([s.graph for s in chunk])
        loss, out = _loss_and_outputs(model, batch, batch_pe(chunk, model.cfg, None))
        if model.cfg.task == "graph_regression":
            preds.append(out.data.reshape(-1))
            targets.append(batch.graph_labels)
            weights.append(len(chunk))
        else:
            preds.append(out.data.argmax(axis=1))
            targets.append(batch.graph.node_labels)
            weights.append(batch.graph.num_nodes)
        losses.append(loss.item())
    model.train()
    pred, target = np.concatenate(preds), np.concatenate(targets)
    loss = float(np.average(losses, weights=weights))
    if model.cfg.task == "graph_regression":
        return loss, mae(pred, target)
    return loss, accuracy(pred, target, weighted_accuracy)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val_metric: float
    test_metric: Optional[float]
    seconds: Optional[float]


@dataclass
class FitResult:
    epochs: list = field(default_factory=list)
    num_decays: int = 0
    stopped_by: str = ""

    @property
    def num_epochs(self) -> int:
        return len(self.epochs)


def fit_model(model: GraphTransformer, train: Sequence[Sample], val: Sequence[Sample],
              schedule: ScheduleConfig, seed: int = 0, batch_size: int = 32, sign_flip: bool = True,
              test: Optional[Sequence[Sample]] = None, weighted_accuracy: bool = False,
              record_timing: bool = True, callback: Optional[Callable[[EpochRecord], None]] = None,
              ) -> FitResult:
    """Train with Adam and reduce-on-plateau until the lr drops below ``min_lr``.

    Eigenvector signs are re-drawn per graph and per iteration when
    ``sign_flip`` is set and the model uses Laplacian PE.
    """
    rng = np.random.default_rng(seed)
    opt = Adam(model.parameters(), lr=schedule.initial_lr)
    sched = PlateauScheduler(schedule)
    result = FitResult()
    flip = sign_flip and model.cfg.pe_kind == "laplacian"
    val = val if len(val) else train
    model.train()
    while True:
        t0 = time.perf_counter()
        order = rng.permutation(len(train))
        losses, sizes = [], []
        for start in range(0, len(order), batch_size):
            chunk = [train[i] for i in order[start:start + batch_size]]
            batch = batch_graphs([s.graph for s in chunk])
            pe = batch_pe(chunk, model.cfg, rng if flip else None)
            with Tape() as tape:
                loss, _ = _loss_and_outputs(model, batch, pe)
            opt.zero_grad()
            tape.backward(loss)
            opt.step()
            losses.append(loss.item())
            sizes.append(len(chunk))
        val_loss, val_metric = evaluate(model, val, weighted_accuracy)
        test_metric = evaluate(model, test, weighted_accuracy)[1] if test else None
        lr, stop = sched.step(val_loss)
        opt.lr = lr
        rec = EpochRecord(
            epoch=sched.epoch, lr=lr, train_loss=float(np.average(losses, weights=sizes)),
            val_loss=val_loss, val_metric=val_metric, test_metric=test_metric,
            seconds=time.perf_counter() - t0 if record_timing else None,
        )
        result.epochs.append(rec)
        if callback is not None:
            callback(rec)
        if stop:
            result.num_decays = sched.num_decays
            result.stopped_by = "min_lr" if lr < schedule.min_lr else "max_epochs"
            return result
