import json
import os

import pytest

from v2nsim import experiments
from v2nsim.cli import main

TINY = {
    "pops": 2,
    "intensity": {
        "source": "synth",
        "days": 1,
        "peak_veh_per_hour": 120.0,
        "trough_veh_per_hour": 40.0,
        "phase_per_pop_hours": 0.5,
        "seed": 3,
    },
    "traces": {"base_seed": 10, "count": 2},
    "split": {"train": [0.0, 43200.0], "test": [43200.0, 86400.0]},
    "agents": [
        {"type": "cnst", "cpus": [2, 2]},
        {"type": "pi"},
        {"type": "tes"},
        {"type": "ddpg1", "hidden": 8, "batch_size": 8, "episodes": 1, "seed": 1},
    ],
    "bench": {"decisions": 300, "seed": 2},
    "oracle": {"vehicles": 2, "trace_seed": None, "max_cpus": None, "budget": 10**7},
}


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "config.json"
    path.write_text(json.dumps(TINY))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tiny_config, tmp_path_factory):
    """gen-trace + train + evaluate executed once, shared by the checks below."""
    out = str(tmp_path_factory.mktemp("out"))
    cfg = experiments.load_config(tiny_config)
    experiments.cmd_gen_trace(cfg, out)
    experiments.cmd_train(cfg, out)
    experiments.cmd_evaluate(cfg, out)
    return cfg, out


class TestConfig:
    def test_defaults_load(self):
        cfg = experiments.load_config()
        assert cfg["pops"] == 5
        assert cfg["reward"]["d_tgt_ms"] == 50.0

    def test_overrides_merge(self, tiny_config):
        cfg = experiments.load_config(tiny_config, {"traces": {"base_seed": 99}})
        assert cfg["traces"]["base_seed"] == 99
        assert cfg["traces"]["count"] == 2

    def test_rejects_bad_version(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"version": 99}))
        with pytest.raises(ValueError):
            experiments.load_config(str(path))

    def test_rejects_overlapping_split(self):
        with pytest.raises(ValueError):
            experiments.load_config(None, {"split": {"train": [0, 100], "test": [50, 200]}})

    def test_rejects_zero_traces(self):
        with pytest.raises(ValueError):
            experiments.load_config(None, {"traces": {"count": 0}})

    def test_rejects_unknown_agent(self):
        with pytest.raises(ValueError):
            experiments.load_config(None, {"agents": [{"type": "magic"}]})


class TestGenTrace:
    def test_writes_traces_and_manifest(self, tiny_config, tmp_path):
        cfg = experiments.load_config(tiny_config)
        out = str(tmp_path)
        manifest = experiments.cmd_gen_trace(cfg, out)
        assert len(manifest["traces"]) == 2
        for entry in manifest["traces"]:
            assert os.path.exists(os.path.join(out, entry["file"]))
        assert manifest["rng"] == "pcg64"
        on_disk = json.load(open(os.path.join(out, "trace_manifest.json")))
        assert on_disk == manifest

    def test_reruns_are_byte_identical(self, tiny_config, tmp_path):
        cfg = experiments.load_config(tiny_config)
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        experiments.cmd_gen_trace(cfg, a)
        experiments.cmd_gen_trace(cfg, b)
        for name in os.listdir(a):
            assert open(os.path.join(a, name), "rb").read() == open(os.path.join(b, name), "rb").read()


class TestTrainCmd:
    def test_checkpoint_and_curve(self, pipeline):
        cfg, out = pipeline
        assert os.path.exists(os.path.join(out, "checkpoint_ddpg1.json"))
        curve = open(os.path.join(out, "curve_ddpg1.csv")).read().splitlines()
        assert curve[0] == "episode,mean_reward"
        assert len(curve) == 2  # one episode
        assert os.path.exists(os.path.join(out, "learning_curves.png"))


class TestEvaluateCmd:
    def test_metrics_schema(self, pipeline):
        cfg, out = pipeline
        lines = open(os.path.join(out, "metrics.csv")).read().splitlines()
        assert lines[0] == "agent,mean_reward,std_reward,mean_cpus_per_pop,violation_frac,steps"
        agents = [line.split(",")[0] for line in lines[1:]]
        assert agents == ["CNST", "PI", "TES", "DDPG-1"]
        for line in lines[1:]:
            frac = float(line.split(",")[4])
            assert 0.0 <= frac <= 1.0

    def test_dumps_and_figures_exist(self, pipeline):
        cfg, out = pipeline
        for name in (
            "decision_latency.csv",
            "delay_hist.csv",
            "cpu_ecdf.csv",
            "per_pop.csv",
            "delays_cnst.csv",
            "cpus_tes.csv",
            "evaluation_manifest.json",
            "delay_epdf.png",
            "cpu_ecdf.png",
            "avg_reward.png",
        ):
            assert os.path.exists(os.path.join(out, name)), name

    def test_dump_rows_lie_in_test_window(self, pipeline):
        cfg, out = pipeline
        rows = open(os.path.join(out, "delays_pi.csv")).read().splitlines()[1:]
        assert rows
        for row in rows:
            t = float(row.split(",")[2])
            assert 43200.0 <= t < 86400.0

    def test_missing_checkpoint_errors(self, tiny_config, tmp_path):
        cfg = experiments.load_config(tiny_config)
        with pytest.raises(FileNotFoundError):
            experiments.cmd_evaluate(cfg, str(tmp_path / "fresh"))


class TestBenchCmd:
    def test_bench_rows(self, tiny_config, tmp_path):
        cfg = experiments.load_config(tiny_config, {"figures": False})
        rows = experiments.cmd_bench(cfg, str(tmp_path))
        assert [r["agent"] for r in rows] == ["CNST", "PI", "TES", "DDPG-1"]
        for r in rows:
            assert 0 < r["mean_us"] <= r["p99_us"]


class TestOracleCmd:
    def test_report(self, pipeline):
        cfg, out = pipeline
        report = experiments.cmd_oracle(cfg, out)
        assert report["vehicles"] == 2
        assert report["optimal_reward"] > 0
        names = [row["agent"] for row in report["agents"]]
        assert names == ["CNST", "PI", "TES", "DDPG-1"]
        for row in report["agents"]:
            assert row["gap_pct"] >= 0.0
            assert row["total_reward"] <= report["optimal_reward"] + 1e-9
        assert os.path.exists(os.path.join(out, "oracle_report.json"))


class TestMain:
    def test_gen_trace_exit_zero(self, tiny_config, tmp_path, capsys):
        code = main(["gen-trace", "--config", tiny_config, "--out", str(tmp_path)])
        assert code == 0
        assert "2 traces" in capsys.readouterr().out

    def test_seed_override(self, tiny_config, tmp_path):
        out = str(tmp_path)
        main(["gen-trace", "--config", tiny_config, "--out", out, "--seed", "77"])
        manifest = json.load(open(os.path.join(out, "trace_manifest.json")))
        assert [t["seed"] for t in manifest["traces"]] == [77, 78]

    def test_error_is_machine_readable(self, tmp_path, capsys):
        code = main(["gen-trace", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)])
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert "error" in err and "type" in err

    def test_bench_prints_rows(self, tiny_config, tmp_path, capsys):
        code = main(
            ["bench", "--config", tiny_config, "--out", str(tmp_path), "--no-figures"]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "CNST" in out and "us" in out
