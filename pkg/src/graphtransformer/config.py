"""Experiment configuration and its flat ``key = value`` file format.

Schema (``#`` starts a comment, blank lines ignored)::

    task                 regression | node_classification        (required)
    dataset.kind         synthetic_regression | sbm | json_dir     (required)
    dataset.num_graphs   int      dataset.min_nodes / max_nodes  int
    dataset.block_sizes  ints     dataset.p_intra / q_inter      float
    dataset.feature_noise float   dataset.path                   str
    dataset.data_seed    int      dataset.val_fraction / test_fraction float
    model.<field>        any ModelConfig field except the data-derived
                         node_dim, edge_dim, task and num_outputs
    schedule.<field>     initial_lr, decay_factor, patience, min_lr, max_epochs
    training.<field>     batch_size, sign_flip, weighted_accuracy, record_timing
    seeds                comma-separated ints (default 0,1,2,3)
    full_graph           bool
    output_dir           path
"""

from __future__ import annotations

import typing
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .graph import NUM_ATOM_TYPES, NUM_BOND_TYPES, SbmParams
from .model import ModelConfig
from .training import ScheduleConfig

__all__ = [
    "ConfigError",
    "DatasetConfig",
    "ExperimentConfig",
    "TrainingConfig",
    "config_to_text",
    "parse_config",
    "parse_config_text",
]

TASKS = ("regression", "node_classification")
DATASET_KINDS = ("synthetic_regression", "sbm", "json_dir")
DERIVED_MODEL_FIELDS = ("node_dim", "edge_dim", "task", "num_outputs")


class ConfigError(ValueError):
    """Validation failure; ``problems`` lists every offending field."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "sbm"
    num_graphs: int = 100
    min_nodes: int = 6
    max_nodes: int = 12
    block_sizes: tuple = (10, 10)
    p_intra: float = 0.9
    q_inter: float = 0.1
    feature_noise: float = 0.1
    path: str = ""
    data_seed: int = 0
    val_fraction: float = 0.2
    test_fraction: float = 0.2

    def sbm_params(self) -> SbmParams:
        return SbmParams(len(self.block_sizes), self.block_sizes, self.p_intra, self.q_inter, self.feature_noise)


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 32
    sign_flip: bool = True
    weighted_accuracy: bool = False
    record_timing: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    dataset: DatasetConfig
    model: ModelConfig
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    seeds: tuple = (0, 1, 2, 3)
    full_graph: bool = False
    output_dir: str = "runs/experiment"

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in DERIVED_MODEL_FIELDS:
            d["model"].pop(key)
        return d

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


SECTIONS = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "schedule": ScheduleConfig,
    "training": TrainingConfig,
}
TOP_LEVEL = {"task": str, "seeds": tuple, "full_graph": bool, "output_dir": str}


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def _coerce(raw: str, typ):
    raw = raw.strip()
    if typ is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    if typ is tuple:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    return raw


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _data_dims(ds: DatasetConfig, task: str) -> dict:
    if ds.kind == "synthetic_regression":
        return {"node_dim": NUM_ATOM_TYPES, "edge_dim": NUM_BOND_TYPES, "num_outputs": 1}
    if ds.kind == "sbm":
        nb = len(ds.block_sizes)
        return {"node_dim": nb + 1, "edge_dim": 0, "num_outputs": nb}
    from .experiment import load_json_dir

    graphs = load_json_dir(ds.path)
    g = graphs[0]
    if task == "regression":
        outputs = 1
    else:
        outputs = int(max(int(x.node_labels.max()) for x in graphs if x.node_labels is not None)) + 1
    return {"node_dim": g.node_dim, "edge_dim": g.edge_dim, "num_outputs": outputs}


def parse_config_text(text: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse and validate a flat config; every problem is reported at once."""
    pairs: dict[str, str] = {}
    problems: list[str] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            problems.append(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    pairs.update(overrides or {})

    top: dict = {}
    sections: dict = {name: {} for name in SECTIONS}
    for key, raw in pairs.items():
        section, _, name = key.partition(".")
        if name:
            if section not in SECTIONS:
                problems.append(f"{key}: unknown section {section!r}")
                continue
            types = _field_types(SECTIONS[section])
            if name not in types or (section == "model" and name in DERIVED_MODEL_FIELDS):
                problems.append(f"{key}: unknown key")
                continue
            target, typ = sections[section], types[name]
        else:
            if key not in TOP_LEVEL:
                problems.append(f"{key}: unknown key")
                continue
            target, typ, name = top, TOP_LEVEL[key], key
        try:
            target[name] = _coerce(raw, typ)
        except ValueError as exc:
            problems.append(f"{key}: {exc}")

    task = top.get("task")
    if task is None:
        problems.append("task: required")
    elif task not in TASKS:
        problems.append(f"task: must be one of {TASKS}")
    if "kind" not in sections["dataset"]:
        problems.append("dataset.kind: required")
    elif sections["dataset"]["kind"] not in DATASET_KINDS:
        problems.append(f"dataset.kind: must be one of {DATASET_KINDS}")
    if "seeds" in top and not top["seeds"]:
        problems.append("seeds: must list at least one seed")

    def build(name, cls, extra=None):
        try:
            return cls(**{**sections[name], **(extra or {})})
        except ValueError as exc:
            problems.extend(f"{name}: {p}" for p in str(exc).split("; "))
        except TypeError as exc:
            problems.append(f"{name}: {exc}")
        return None

    dataset = build("dataset", DatasetConfig)
    schedule = build("schedule", ScheduleConfig)
    training = build("training", TrainingConfig)
    model = None
    if dataset is not None and task in TASKS and dataset.kind in DATASET_KINDS:
        try:
            if dataset.kind == "sbm":
                dataset.sbm_params()
                if task != "node_classification":
                    problems.append("task: the sbm dataset only supports node_classification")
            elif dataset.kind == "synthetic_regression" and task != "regression":
                problems.append("task: the synthetic_regression dataset only supports regression")
            if not 0 <= dataset.val_fraction + dataset.test_fraction < 1:
                problems.append("dataset: val_fraction + test_fraction must be in [0, 1)")
            dims = _data_dims(dataset, task)
            model_task = "graph_regression" if task == "regression" else "node_classification"
            model = build("model", ModelConfig, {**dims, "task": model_task})
        except (ValueError, OSError) as exc:
            problems.append(f"dataset: {exc}")
    if model is not None and top.get("full_graph") and model.use_edge_features:
        problems.append(
            "full_graph: cannot be combined with model.use_edge_features; full graphs discard edge features")

    if problems:
        raise ConfigError(problems)
    kwargs = {k: v for k, v in top.items() if k != "task"}
    return ExperimentConfig(task=task, dataset=dataset, model=model, schedule=schedule,
                            training=training, **kwargs)


def parse_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError([f"config file {str(p)!r} does not exist"])
    return parse_config_text(p.read_text(), overrides)


def config_to_text(cfg: ExperimentConfig) -> str:
    """Serialize to the flat format; ``parse_config_text`` inverts it."""
    lines = [f"task = {cfg.task}"]
    for section, cls in SECTIONS.items():
        obj = getattr(cfg, section)
        for f in fields(cls):
            if section == "model" and f.name in DERIVED_MODEL_FIELDS:
                continue
            lines.append(f"{section}.{f.name} = {_format(getattr(obj, f.name))}")
    lines += [
        f"seeds = {_format(tuple(cfg.seeds))}",
        f"full_graph = {_format(cfg.full_graph)}",
        f"output_dir = {cfg.output_dir}",
    ]
    return "\n".join(lines) + "\n"
