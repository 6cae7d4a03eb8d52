import json

import pytest

from graphtransformer.cli import main
from graphtransformer.config import ConfigError, config_to_text, parse_config_text
from graphtransformer.experiment import ExperimentAborted, format_table, run_experiment, run_seed
from graphtransformer.graph import load_json, save_json

TOY = """
task = node_classification
dataset.kind = sbm
dataset.num_graphs = 5
dataset.block_sizes = 4,4
model.num_layers = 1
model.num_heads = 2
model.hidden_dim = 4
model.pe_k = 2
schedule.max_epochs = 2
training.record_timing = false
seeds = 0,1
"""


class TestConfig:
    def test_minimal_config_uses_protocol_defaults(self):
        cfg = parse_config_text("task = regression\ndataset.kind = synthetic_regression\n")
        assert cfg.model.num_layers == 10 and cfg.model.num_heads == 8
        assert cfg.seeds == (0, 1, 2, 3)
        assert cfg.model.node_dim == 4 and cfg.model.edge_dim == 3

    def test_round_trip(self):
        cfg = parse_config_text(TOY + "model.pe_kind = wl\nfull_graph = true\n")
        text = config_to_text(cfg)
        again = parse_config_text(text)
        assert again == cfg
        assert config_to_text(again) == text

    def test_indivisible_width(self):
        with pytest.raises(ConfigError, match="not divisible"):
            parse_config_text("task = regression\ndataset.kind = synthetic_regression\nmodel.hidden_dim = 100\n")

    def test_full_graph_with_edge_features(self):
        text = "task = regression\ndataset.kind = synthetic_regression\nfull_graph = true\nmodel.use_edge_features = true\n"
        with pytest.raises(ConfigError, match="discard edge features"):
            parse_config_text(text)

    def test_every_problem_is_listed(self):
        text = "task = regression\ndataset.kind = synthetic_regression\nmodel.hidden_dim = 100\n" \
               "schedule.decay_factor = 2\nbogus = 1\nmodel.node_dim = 3\n"
        with pytest.raises(ConfigError) as info:
            parse_config_text(text)
        joined = "\n".join(info.value.problems)
        for piece in ("not divisible", "decay_factor", "bogus", "model.node_dim"):
            assert piece in joined
        assert len(info.value.problems) == 4

    def test_required_keys(self):
        with pytest.raises(ConfigError) as info:
            parse_config_text("")
        assert {"task: required", "dataset.kind: required"} <= set(info.value.problems)

    def test_edge_features_on_plain_dataset(self):
        with pytest.raises(ConfigError, match="edge_dim"):
            parse_config_text(TOY + "model.use_edge_features = true\n")


def write(tmp_path, text, name="c.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestRun:
    def test_report_written(self, tmp_path, capsys):
        cfg = write(tmp_path, TOY + f"output_dir = {tmp_path / 'out'}\n")
        assert main(["run", "--config", str(cfg)]) == 0
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["completed_seeds"] == [0, 1] and not report["partial"]
        assert "Test Perf.±s.d." in (tmp_path / "out" / "report.txt").read_text()
        assert "report written" in capsys.readouterr().out

    def test_bad_config_exit_code(self, tmp_path, capsys):
        cfg = write(tmp_path, "task = regression\n")
        assert main(["run", "--config", str(cfg)]) == 2
        assert "dataset.kind" in capsys.readouterr().err
        assert main(["run", "--config", str(tmp_path / "missing.txt")]) == 2

    def test_override(self, tmp_path):
        cfg = write(tmp_path, TOY)
        out = tmp_path / "o2"
        assert main(["run", "--config", str(cfg), "--set", f"output_dir={out}", "--set", "seeds=3"]) == 0
        assert json.loads((out / "report.json").read_text())["seeds"] == [3]

    def test_interrupted_run_keeps_finished_seeds(self):
        cfg = parse_config_text(TOY, {"seeds": "0,1,2,3"})

        def runner(c, seed):
            if seed == 2:
                raise KeyboardInterrupt
            return run_seed(c, seed)

        with pytest.raises(ExperimentAborted) as info:
            run_experiment(cfg, seed_runner=runner)
        report = info.value.report
        assert report.partial and [r.seed for r in report.results] == [0, 1]
        assert "partial run: 2 of 4 seeds" in format_table([report])

    def test_ablation_trio_differs_only_in_pe(self, tmp_path):
        configs = {}
        for kind in ("none", "laplacian", "wl"):
            out = tmp_path / kind
            cfg = write(tmp_path, TOY + f"model.pe_kind = {kind}\noutput_dir = {out}\n", f"{kind}.txt")
            assert main(["run", "--config", str(cfg)]) == 0
            configs[kind] = json.loads((out / "report.json").read_text())["config"]
        for kind, cfg in configs.items():
            assert cfg["model"].pop("pe_kind") == kind
            cfg.pop("output_dir")
        assert configs["none"] == configs["laplacian"] == configs["wl"]

    def test_identical_seeds_identical_reports(self, tmp_path):
        for name in ("a", "b"):
            cfg = write(tmp_path, TOY + f"output_dir = {tmp_path / 'same'}\n")
            assert main(["run", "--config", str(cfg)]) == 0
            (tmp_path / f"{name}.json").write_bytes((tmp_path / "same" / "report.json").read_bytes())
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_single_seed_flag(self):
        report = run_experiment(parse_config_text(TOY, {"seeds": "5"}))
        assert report.single_seed and report.summary()["test_sd"] == 0.0
        assert "single-seed run" in report.table()


def pe_dump(capsys, graph, tmp_path, k):
    path = tmp_path / "g.json"
    save_json(graph, path)
    assert main(["pe-inspect", str(path), "--k", str(k)]) == 0
    return capsys.readouterr().out.splitlines()


class TestPeInspect:
    def test_path3(self, capsys, tmp_path, path3):
        lines = pe_dump(capsys, path3, tmp_path, 1)
        assert lines[0] == "eigenvalues: 1"
        assert lines[1] == "node,pe0"
        values = [float(line.split(",")[1]) for line in lines[2:]]
        assert values[0] > 0 and values[1] == 0.0 and values[2] < 0

    def test_padding_visible(self, capsys, tmp_path, path3):
        lines = pe_dump(capsys, path3, tmp_path, 4)
        assert all(line.endswith(",0,0") for line in lines[2:])

    def test_complete_graph(self, capsys, tmp_path, k4):
        lines = pe_dump(capsys, k4, tmp_path, 3)
        values = lines[0].split(":")[1].split()
        assert len(values) == 3 and len(set(values)) == 1
        assert float(values[0]) == pytest.approx(4 / 3, abs=1e-9)  # dump keeps 10 significant digits

    def test_parse_error(self, tmp_path, capsys):
        (tmp_path / "bad.json").write_text('{"num_nodes": 2}')
        assert main(["pe-inspect", str(tmp_path / "bad.json")]) == 1
        assert "edges" in capsys.readouterr().err


class TestGenerateData:
    def test_sbm(self, tmp_path):
        out = tmp_path / "sbm"
        assert main(["generate-data", "--kind", "sbm", "--out", str(out), "--num-graphs", "3",
                     "--block-sizes", "3,4", "--pe-k", "2"]) == 0
        graphs = sorted(p for p in out.glob("*.json") if not p.name.endswith(".pe.json"))
        assert len(graphs) == 3 and len(list(out.glob("*.pe.json"))) == 3
        assert load_json(graphs[0]).num_nodes == 7

    def test_json_dir_dataset_runs(self, tmp_path):
        out = tmp_path / "reg"
        assert main(["generate-data", "--kind", "regression", "--out", str(out), "--num-graphs", "5",
                     "--seed", "4", "--pe-k", "2"]) == 0
        text = f"""task = regression
dataset.kind = json_dir
dataset.path = {out}
model.num_layers = 1
model.num_heads = 1
model.hidden_dim = 4
model.pe_k = 2
schedule.max_epochs = 1
seeds = 0
output_dir = {tmp_path / 'run'}
"""
        assert main(["run", "--config", str(write(tmp_path, text))]) == 0

    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            main(["generate-data", "--kind", "regression", "--out", str(tmp_path / name), "--num-graphs", "2"])
        for p in (tmp_path / "a").glob("*.json"):
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_missing_graph_file_reports_error(tmp_path, capsys):
    assert main(["pe-inspect", str(tmp_path / "nope.json")]) == 1
    assert "error" in capsys.readouterr().err

