import csv
import json

import numpy as np
import pytest

from tnpar.cli import main
from tnpar.experiment import (
    ExperimentConfig,
    aggregate,
    config_from_dict,
    load_config,
    run_id,
    svg_line_plot,
)

TINY = {
    "sim": {"node_count": 4, "type_count": 3, "mu_range": [0.05, 0.08], "alpha_range": [0.2, 0.3],
            "horizon": 60.0, "causal_edge_density": 0.5},
    "train": {"epochs": 2, "batch_size": 32, "hidden": [6]},
    "omega": 2,
    "k_max": 1,
    "seeds": [3],
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return p


def files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = ExperimentConfig()
        again = config_from_dict(json.loads(cfg.dumps()))
        assert again.dumps() == cfg.dumps()

    def test_shared_fields_propagate(self):
        cfg = config_from_dict({"delta": 4.0, "omega": 5, "k_max": 2})
        assert cfg.sim.delta == cfg.train.delta == 4.0
        assert (cfg.train.omega, cfg.train.k_max) == (5, 2)

    @pytest.mark.parametrize("doc, where", [
        ({"epochs": 3}, "epochs"),
        ({"sim": {"nodes": 3}}, "sim.nodes"),
        ({"train": {"delta": 1.0}}, "train.delta"),
        ({"sweep": {"param": "sim.bogus", "values": [1]}}, "sweep.param"),
    ])
    def test_unknown_keys_rejected(self, doc, where):
        with pytest.raises(ValueError, match=where.replace(".", r"\.")):
            config_from_dict(doc)

    def test_field_level_errors(self):
        with pytest.raises(ValueError, match="node_count"):
            config_from_dict({"sim": {"node_count": 0}})
        with pytest.raises(ValueError, match="seeds"):
            config_from_dict({"seeds": []})

    def test_bad_json_reports_line(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{\n "seeds": [1,\n}')
        with pytest.raises(ValueError, match="line 3"):
            load_config(p)

    def test_run_id_depends_on_seed_and_content(self):
        cfg = config_from_dict(TINY)
        assert run_id(cfg.for_seed(1)) != run_id(cfg.for_seed(2))
        assert run_id(cfg.for_seed(1)) == run_id(config_from_dict(TINY).for_seed(1))


class TestSimulate:
    def test_writes_four_files_and_echo(self, tmp_path, cfg_path):
        assert main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "d")]) == 0
        names = set(files(tmp_path / "d"))
        assert {"events.csv", "topology.csv", "truth_graph.json", "simconfig.json", "config.json"} == names

    def test_deterministic(self, tmp_path, cfg_path):
        main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "a")])
        main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "b")])
        assert files(tmp_path / "a") == files(tmp_path / "b")

    def test_echo_reproduces(self, tmp_path, cfg_path):
        main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "a")])
        main(["simulate", "--config", str(tmp_path / "a" / "config.json"), "--out", str(tmp_path / "b")])
        a, b = files(tmp_path / "a"), files(tmp_path / "b")
        assert a["events.csv"] == b["events.csv"]
        assert a["truth_graph.json"] == b["truth_graph.json"]

    def test_zero_rates_header_only(self, tmp_path):
        doc = {**TINY, "sim": {**TINY["sim"], "mu_range": [0, 0]}}
        (tmp_path / "c.json").write_text(json.dumps(doc))
        assert main(["simulate", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "d")]) == 0
        assert (tmp_path / "d" / "events.csv").read_text() == "event_type,node,timestamp\n"

    def test_invalid_config_exit_status(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"sim": {"delta_t": 1}}))
        assert main(["simulate", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "d")]) == 1
        assert "sim.delta_t" in capsys.readouterr().err


class TestTrainEval:
    @pytest.fixture
    def data(self, tmp_path, cfg_path):
        main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "data")])
        return tmp_path / "data"

    def train(self, tmp_path, cfg_path, data, out, *extra):
        return main(["train", "--config", str(cfg_path), "--events", str(data / "events.csv"),
                     "--topology", str(data / "topology.csv"), "--out", str(tmp_path / out), *extra])

    def test_outputs(self, tmp_path, cfg_path, data):
        assert self.train(tmp_path, cfg_path, data, "m") == 0
        graph = json.loads((tmp_path / "m" / "graph.json").read_text())
        assert np.array(graph["posterior"]).shape == (2, 3, 3)
        assert graph["mode"] == "full" and graph["threshold"] == 0.5
        rows = list(csv.reader(open(tmp_path / "m" / "train_log.csv")))
        assert rows[0] == ["epoch", "reconstruction", "kl", "acyclicity", "sparsity", "total"]
        assert len(rows) == 3
        ckpt = json.loads((tmp_path / "m" / "checkpoint.json").read_text())
        assert ckpt["hyperparameters"]["epochs"] == 2 and ckpt["encoder_optimizer"]["step"] > 0

    def test_deterministic(self, tmp_path, cfg_path, data):
        self.train(tmp_path, cfg_path, data, "a")
        self.train(tmp_path, cfg_path, data, "b")
        assert files(tmp_path / "a") == files(tmp_path / "b")

    def test_mode_merged(self, tmp_path, cfg_path, data):
        assert self.train(tmp_path, cfg_path, data, "m", "--mode", "merged") == 0
        graph = json.loads((tmp_path / "m" / "graph.json").read_text())
        assert graph["mode"] == "merged"
        assert np.array(graph["posterior"]).shape == (1, 3, 3)

    def test_zero_epochs(self, tmp_path, cfg_path, data):
        assert self.train(tmp_path, cfg_path, data, "m", "--epochs", "0") == 0
        assert (tmp_path / "m" / "train_log.csv").read_text().count("\n") == 1

    def test_missing_events_file(self, tmp_path, cfg_path, capsys):
        assert main(["train", "--config", str(cfg_path), "--events", str(tmp_path / "nope.csv"),
                     "--topology", str(tmp_path / "nope2.csv"), "--out", str(tmp_path / "m")]) == 1

    def test_malformed_events_line_number(self, tmp_path, cfg_path, data, capsys):
        (data / "events.csv").write_text("event_type,node,timestamp\n0,0,1.0\n1,x,2\n")
        assert self.train(tmp_path, cfg_path, data, "m") == 1
        assert "line 3" in capsys.readouterr().err

    def test_eval_pipeline(self, tmp_path, cfg_path, data):
        self.train(tmp_path, cfg_path, data, "m")
        out = tmp_path / "e"
        args = ["eval", "--pred", str(tmp_path / "m" / "graph.json"), "--truth", str(data / "truth_graph.json"),
                "--out", str(out)]
        assert main(args) == 0
        assert main(args) == 0
        report = json.loads((out / "metrics.json").read_text())
        assert {"precision", "recall", "f1", "shd", "sid", "dag_repair_applied", "run_id"} <= set(report)
        rows = list(csv.reader(open(out / "metrics.csv")))
        assert len(rows) == 3 and rows[1] == rows[2]
        assert rows[1][0] == json.loads((tmp_path / "m" / "graph.json").read_text())["run_id"]


def write_graph(path, n, edges):
    path.write_text(json.dumps({"type_count": n, "edges": [list(e) for e in edges]}))
    return str(path)


class TestEvalFixtures:
    def run(self, tmp_path, pred, truth):
        assert main(["eval", "--pred", pred, "--truth", truth, "--out", str(tmp_path / "e")]) == 0
        return json.loads((tmp_path / "e" / "metrics.json").read_text())

    def test_perfect(self, tmp_path):
        g = write_graph(tmp_path / "g.json", 3, [(0, 1), (1, 2)])
        r = self.run(tmp_path, g, g)
        assert (r["precision"], r["recall"], r["f1"], r["shd"], r["sid"]) == (1, 1, 1, 0, 0)

    def test_empty_prediction(self, tmp_path):
        r = self.run(tmp_path, write_graph(tmp_path / "p.json", 3, []),
                     write_graph(tmp_path / "t.json", 3, [(0, 1)]))
        assert (r["precision"], r["recall"], r["f1"]) == (0, 0, 0)

    def test_reversal(self, tmp_path):
        r = self.run(tmp_path, write_graph(tmp_path / "p.json", 2, [(1, 0)]),
                     write_graph(tmp_path / "t.json", 2, [(0, 1)]))
        assert (r["shd"], r["sid"]) == (1, 2)

    def test_mismatch_is_error(self, tmp_path, capsys):
        code = main(["eval", "--pred", write_graph(tmp_path / "p.json", 2, []),
                     "--truth", write_graph(tmp_path / "t.json", 3, []), "--out", str(tmp_path / "e")])
        assert code == 1
        assert "mismatch" in capsys.readouterr().err


class TestSweep:
    def test_value_grid(self, tmp_path):
        doc = {**TINY, "seeds": [0, 1], "sweep": {"param": "sim.alpha_range", "values": [[0, 0], [0.3, 0.4]]}}
        (tmp_path / "c.json").write_text(json.dumps(doc))
        assert main(["sweep", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "s")]) == 0
        runs = list(csv.DictReader(open(tmp_path / "s" / "runs.csv")))
        assert len(runs) == 4 and all(r["status"] == "ok" for r in runs)
        assert len({r["run_id"] for r in runs}) == 4
        agg = list(csv.DictReader(open(tmp_path / "s" / "sweep.csv")))
        assert [a["value"] for a in agg] == ["[0,0]", "[0.3,0.4]"]
        for a in agg:
            f1 = [float(r["f1"]) for r in runs if r["value"] == a["value"]]
            assert float(a["f1_mean"]) == pytest.approx(np.mean(f1), abs=1e-12)
            assert float(a["f1_std"]) == pytest.approx(np.std(f1, ddof=1), abs=1e-12)
        for m in ("precision", "recall", "f1", "shd", "sid"):
            assert (tmp_path / "s" / f"{m}.svg").read_text().startswith("<svg")

    def test_seeds_only_and_determinism(self, tmp_path, cfg_path):
        for out in ("a", "b"):
            assert main(["sweep", "--config", str(cfg_path), "--out", str(tmp_path / out)]) == 0
        agg = list(csv.DictReader(open(tmp_path / "a" / "sweep.csv")))
        assert len(agg) == 1 and agg[0]["value"] == "-"
        assert files(tmp_path / "a") == files(tmp_path / "b")

    def test_partial_failure_recorded(self, tmp_path):
        doc = {**TINY, "seeds": [0], "sweep": {"param": "train.prior_p", "values": [0.5, 2.0]}}
        (tmp_path / "c.json").write_text(json.dumps(doc))
        assert main(["sweep", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "s")]) == 1
        runs = list(csv.DictReader(open(tmp_path / "s" / "runs.csv")))
        assert runs[0]["status"] == "ok"
        assert runs[1]["status"].startswith("failed") and "prior_p" in runs[1]["status"]
        agg = list(csv.DictReader(open(tmp_path / "s" / "sweep.csv")))
        assert agg[1]["ok"] == "0"


def test_aggregate_single_run_std_zero():
    rows = [{"value": "-", "status": "ok", "precision": 1, "recall": 0.5, "f1": 0.6, "shd": 2, "sid": 3}]
    (agg,) = aggregate(rows, [None])
    assert agg["f1_mean"] == 0.6 and agg["f1_std"] == 0.0


def test_svg_is_wellformed():
    import xml.etree.ElementTree as ET

    root = ET.fromstring(svg_line_plot(["a<b", "c"], [0.2, float("nan")], [0.1, 0.0], "x&y", "f1"))
    assert root.tag.endswith("svg")
    assert len([e for e in root.iter() if e.tag.endswith("circle")]) == 1
