"""Multi-seed experiment execution and tabular reporting."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .config import ExperimentConfig
from .graph import Graph, GraphFormatError, densify, generate_regression_set, generate_sbm, load_json
from .model import GraphTransformer
from .positional import LapPE, WlRoleVocabulary
from .training import evaluate, fit_model, prepare_samples

__all__ = [
    "ExperimentAborted",
    "RunReport",
    "SeedResult",
    "build_dataset",
    "format_table",
    "load_json_dir",
    "load_pe_cache",
    "run_experiment",
    "run_seed",
    "save_pe_cache",
    "split_dataset",
]


def pe_cache_path(graph_path) -> Path:
    p = Path(graph_path)
    return p.with_name(p.stem + ".pe.json")


def save_pe_cache(graph_path, pe: LapPE) -> Path:
    """Write ``lap_pe`` (row-major n x k) and ``eigenvalues`` next to a graph file."""
    out = pe_cache_path(graph_path)
    out.write_text(json.dumps({"lap_pe": pe.encodings.tolist(), "eigenvalues": pe.eigenvalues.tolist()}))
    return out


def load_pe_cache(graph_path) -> Optional[LapPE]:
    p = pe_cache_path(graph_path)
    if not p.is_file():
        return None
    obj = json.loads(p.read_text())
    for key in ("lap_pe", "eigenvalues"):
        if key not in obj:
            raise GraphFormatError(f"{p}: missing field {key!r}")
    enc = np.array(obj["lap_pe"], dtype=np.float64)
    if enc.ndim != 2:
        raise GraphFormatError(f"{p}: field 'lap_pe' must be a matrix")
    return LapPE(enc, np.array(obj["eigenvalues"], dtype=np.float64))


def _graph_files(path) -> list[Path]:
    d = Path(path)
    if not d.is_dir():
        raise OSError(f"dataset directory {str(d)!r} does not exist")
    files = sorted(p for p in d.glob("*.json") if not p.name.endswith(".pe.json"))
    if not files:
        raise OSError(f"no graph JSON files in {str(d)!r}")
    return files


def load_json_dir(path) -> list[Graph]:
    return [load_json(p) for p in _graph_files(path)]


def build_dataset(cfg: ExperimentConfig):
    """Graphs for the configured dataset plus an optional per-graph PE cache."""
    ds = cfg.dataset
    if ds.kind == "synthetic_regression":
        return generate_regression_set(ds.num_graphs, (ds.min_nodes, ds.max_nodes), ds.data_seed), None
    if ds.kind == "sbm":
        params = ds.sbm_params()
        seeds = np.random.SeedSequence(ds.data_seed).generate_state(ds.num_graphs)
        return [generate_sbm(params, int(s)) for s in seeds], None
    files = _graph_files(ds.path)
    return [load_json(p) for p in files], [load_pe_cache(p) for p in files]


def split_dataset(n: int, val_fraction: float, test_fraction: float, seed: int):
    """Index arrays ``(train, val, test)`` from a seeded shuffle."""
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_fraction * n))
    n_val = int(round(val_fraction * n))
    return perm[n_test + n_val:], perm[n_test:n_test + n_val], perm[:n_test]


@dataclass
class SeedResult:
    seed: int
    num_epochs: int
    train_metric: float
    val_metric: float
    test_metric: Optional[float]
    num_params: int
    stopped_by: str
    epoch_seconds: Optional[float]
    total_seconds: Optional[float]
    trajectory: dict = field(default_factory=dict)


def run_seed(cfg: ExperimentConfig, seed: int) -> SeedResult:
    """Train and evaluate one model; the dataset and split depend only on ``data_seed``."""
    graphs, cache = build_dataset(cfg)
    tr, va, te = split_dataset(len(graphs), cfg.dataset.val_fraction, cfg.dataset.test_fraction,
                               cfg.dataset.data_seed)
    mcfg = cfg.model
    vocab = None
    if mcfg.pe_kind == "wl":
        fit_on = [densify(graphs[i]) if cfg.full_graph else graphs[i] for i in tr]
        vocab = WlRoleVocabulary(mcfg.wl_max_roles).fit(fit_on)
    samples = prepare_samples(graphs, mcfg, cfg.full_graph, vocab, cache)
    train = [samples[i] for i in tr]
    val = [samples[i] for i in va]
    test = [samples[i] for i in te]

    tcfg = cfg.training
    model = GraphTransformer(mcfg, seed=seed)
    fit = fit_model(model, train, val, cfg.schedule, seed=seed, batch_size=tcfg.batch_size,
                    sign_flip=tcfg.sign_flip, test=test, weighted_accuracy=tcfg.weighted_accuracy,
                    record_timing=tcfg.record_timing)
    _, train_metric = evaluate(model, train, tcfg.weighted_accuracy)
    _, val_metric = evaluate(model, val if val else train, tcfg.weighted_accuracy)
    test_metric = evaluate(model, test, tcfg.weighted_accuracy)[1] if test else None
    secs = [r.seconds for r in fit.epochs]
    timed = tcfg.record_timing
    return SeedResult(
        seed=seed,
        num_epochs=fit.num_epochs,
        train_metric=train_metric,
        val_metric=val_metric,
        test_metric=test_metric,
        num_params=int(sum(p.data.size for p in model.parameters())),
        stopped_by=fit.stopped_by,
        epoch_seconds=float(np.mean(secs)) if timed else None,
        total_seconds=float(np.sum(secs)) if timed else None,
        trajectory={
            "lr": [r.lr for r in fit.epochs],
            "train_loss": [r.train_loss for r in fit.epochs],
            "val_loss": [r.val_loss for r in fit.epochs],
            "val_metric": [r.val_metric for r in fit.epochs],
            "test_metric": [r.test_metric for r in fit.epochs],
        },
    )


def _mean_sd(values) -> tuple[Optional[float], Optional[float]]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


@dataclass
class RunReport:
    config: dict
    metric: str
    seeds: list
    results: list
    partial: bool = False

    @property
    def single_seed(self) -> bool:
        return len(self.results) == 1

    def summary(self) -> dict:
        test = _mean_sd(r.test_metric for r in self.results)
        train = _mean_sd(r.train_metric for r in self.results)
        epochs = _mean_sd(r.num_epochs for r in self.results)
        return {
            "metric": self.metric,
            "num_seeds": len(self.results),
            "test_mean": test[0], "test_sd": test[1],
            "train_mean": train[0], "train_sd": train[1],
            "epochs_mean": epochs[0],
            "epoch_seconds_mean": _mean_sd(r.epoch_seconds for r in self.results)[0],
            "total_seconds_mean": _mean_sd(r.total_seconds for r in self.results)[0],
            "num_params": self.results[0].num_params if self.results else None,
        }

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "metric": self.metric,
            "seeds": list(self.seeds),
            "completed_seeds": [r.seed for r in self.results],
            "partial": self.partial,
            "single_seed": self.single_seed,
            "summary": self.summary(),
            "results": [asdict(r) for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        return format_table([self])


class ExperimentAborted(RuntimeError):
    """Raised when a run stops early; ``report`` holds the finished seeds."""

    def __init__(self, report: RunReport, cause: BaseException):
        super().__init__(f"experiment aborted after {len(report.results)} of {len(report.seeds)} seeds: {cause!r}")
        self.report = report


def run_experiment(cfg: ExperimentConfig, jobs: int = 1,
                   on_seed_done: Optional[Callable[[SeedResult], None]] = None,
                   seed_runner: Callable[[ExperimentConfig, int], SeedResult] = run_seed) -> RunReport:
    """Run every configured seed and aggregate mean and standard deviation."""
    metric = "MAE" if cfg.task == "regression" else "Acc"
    report = RunReport(config=cfg.to_dict(), metric=metric, seeds=list(cfg.seeds), results=[])
    try:
        if jobs > 1 and len(cfg.seeds) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(seed_runner, cfg, s) for s in cfg.seeds]
                for fut in futures:
                    report.results.append(fut.result())
                    if on_seed_done:
                        on_seed_done(report.results[-1])
        else:
            for s in cfg.seeds:
                report.results.append(seed_runner(cfg, s))
                if on_seed_done:
                    on_seed_done(report.results[-1])
    except BaseException as exc:
        report.partial = True
        raise ExperimentAborted(report, exc) from exc
    return report


# ---------------------------------------------------------------------------
# text table


def _perf(mean, sd, metric) -> str:
    if mean is None:
        return "-"
    if metric == "Acc":
        return f"{100 * mean:.3f}±{100 * sd:.3f}"
    return f"{mean:.3f}±{sd:.3f}"


def _duration(seconds) -> str:
    if seconds < 60:
        return f"{seconds:.2f}s"
    if seconds < 3600:
        return f"{seconds / 60:.2f}min"
    return f"{seconds / 3600:.2f}hr"


def format_table(reports) -> str:
    """One row per report: test and train performance with s.d., epochs and timing."""
    header = ["Dataset", "PE", "Norm", "Graph", "L", "#Param",
              "Test Perf.±s.d.", "Train Perf.±s.d.", "#Epoch", "Epoch/Total"]
    rows = [header]
    for rep in reports:
        s = rep.summary()
        c = rep.config
        if s["epoch_seconds_mean"] is None:
            timing = "-"
        else:
            timing = f"{s['epoch_seconds_mean']:.2f}s/{_duration(s['total_seconds_mean'])}"
        rows.append([
            c["dataset"]["kind"],
            {"none": "x", "laplacian": "L", "wl": "W"}[c["model"]["pe_kind"]],
            "BN" if c["model"]["norm_kind"] == "batch_norm" else "LN",
            "full" if c["full_graph"] else "sparse",
            str(c["model"]["num_layers"]),
            str(s["num_params"]),
            _perf(s["test_mean"], s["test_sd"], s["metric"]),
            _perf(s["train_mean"], s["train_sd"], s["metric"]),
            "-" if s["epochs_mean"] is None else f"{s['epochs_mean']:.2f}",
            timing,
        ])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = [" | ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    footer = []
    for rep in reports:
        if rep.partial:
            footer.append(f"partial run: {len(rep.results)} of {len(rep.seeds)} seeds completed")
        elif rep.single_seed:
            footer.append("single-seed run: s.d. is 0 by definition")
    return "\n".join(lines + footer) + "\n"
