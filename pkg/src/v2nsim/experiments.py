"""Config-driven experiment pipeline behind the CLI.

The JSON config (schema version 1) declares the traffic source, trace
replications, train/test windows on the trace timeline, the agent roster,
and reward/environment settings. Every command regenerates what it needs
from seeds, so identical configs reproduce identical data files.
"""

from __future__ import annotations

import copy
import json
import math
import os
import time

import numpy as np

from .agents import (
    CnstAgent,
    GreedyPlacement,
    PiAgent,
    PiParams,
    TesAgent,
    TesParams,
    cnst_search,
)
from .ddpg import DdpgAgent, DdpgConfig, load_checkpoint, save_checkpoint, train
from .environment import Observation, RewardConfig, SystemState, V2NEnv, run_episode
from .oracle import OracleInstance, optimality_gap, replay_agents, solve
from .queueing import ServiceProfile, default_profile, load_profile_csv
from .traffic import (
    IntensityTable,
    generate_arrivals,
    load_intensity_csv,
    replicate,
    write_trace,
)

CONFIG_VERSION = 1

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "pops": 5,
    "intensity": {
        "source": "synth",  # "synth" | "csv"
        "path": None,
        "days": 2,
        "peak_veh_per_hour": 300.0,
        "trough_veh_per_hour": 30.0,
        "phase_per_pop_hours": 1.0,
        "seed": 7,
    },
    "traces": {"base_seed": 100, "count": 10},
    "split": {"train": [0.0, 86400.0], "test": [86400.0, 172800.0]},
    "profile_csv": None,
    "reward": {"d_tgt_ms": 50.0, "transmission_ms": 20.0, "variant": "base", "sigma_ms": 10.0},
    "env": {
        "initial_cpus": 1,
        "dwell_seed": 11,
        "dwell_mean_s": 30.0,
        "include_candidate": True,
    },
    "agents": [
        {"type": "cnst", "cpus": None},
        {"type": "pi", "alpha": 4.0, "beta": 0.0, "rho_tgt": 0.7},
        {"type": "tes", "interval_s": 1.0, "horizon": 1, "alpha": 0.02, "beta": 0.002, "gamma": 0.1},
        {"type": "ddpg1", "hidden": 64, "episodes": 100, "seed": 3},
        {"type": "ddpgn", "hidden": 256, "episodes": 100, "seed": 3},
    ],
    "train": {"trace_seed": None},  # None: traces.base_seed
    "bench": {"decisions": 10000, "seed": 1},
    "oracle": {
        "vehicles": 6,
        "trace_seed": None,  # None: traces.base_seed
        "max_cpus": None,  # None: full profile
        "budget": 10**7,
        "check_naive": False,
    },
    "figures": True,
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, optionally overlaid with a JSON file and explicit overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as fh:
            user = json.load(fh)
        if user.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {user.get('version')}")
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if cfg["traces"]["count"] < 1:
        raise ValueError("traces.count must be >= 1")
    a0, a1 = cfg["split"]["train"]
    b0, b1 = cfg["split"]["test"]
    if not (a0 < a1 and b0 < b1):
        raise ValueError("split windows must be non-empty intervals")
    if max(a0, b0) < min(a1, b1):
        raise ValueError("train and test windows overlap")
    for spec in cfg["agents"]:
        if spec["type"] not in ("cnst", "pi", "tes", "ddpg1", "ddpgn"):
            raise ValueError(f"unknown agent type {spec['type']!r}")


def build_profile(cfg: dict) -> ServiceProfile:
    if cfg.get("profile_csv"):
        return load_profile_csv(cfg["profile_csv"])
    return default_profile()


def build_reward(cfg: dict) -> RewardConfig:
    r = cfg["reward"]
    return RewardConfig(
        d_tgt_ms=r["d_tgt_ms"],
        transmission_ms=r["transmission_ms"],
        variant=r["variant"],
        sigma_ms=r["sigma_ms"],
    )


def build_table(cfg: dict) -> IntensityTable:
    intensity = cfg["intensity"]
    if intensity["source"] == "csv":
        table = load_intensity_csv(intensity["path"])
        if table.pop_count != cfg["pops"]:
            raise ValueError(
                f"intensity file covers {table.pop_count} PoPs, config says {cfg['pops']}"
            )
        return table
    from .traffic import synth_intensity

    return synth_intensity(
        pops=cfg["pops"],
        days=intensity["days"],
        peak_veh_per_hour=intensity["peak_veh_per_hour"],
        trough_veh_per_hour=intensity["trough_veh_per_hour"],
        phase_per_pop_hours=intensity["phase_per_pop_hours"],
        seed=intensity["seed"],
    )


def agent_display_name(spec: dict, pops: int) -> str:
    return {
        "cnst": "CNST",
        "pi": "PI",
        "tes": "TES",
        "ddpg1": "DDPG-1",
        "ddpgn": f"DDPG-{pops}",
    }[spec["type"]]


def agent_file_tag(spec: dict) -> str:
    return spec["type"]


def _ddpg_config(spec: dict, scope: str) -> DdpgConfig:
    return DdpgConfig(
        hidden=spec.get("hidden", 64 if scope == "per_pop" else 256),
        gamma=spec.get("gamma", 0.99),
        tau=spec.get("tau", 1e-3),
        lr_actor=spec.get("lr_actor", 1e-4),
        lr_critic=spec.get("lr_critic", 1e-3),
        exploration_sigma=spec.get("exploration_sigma", 0.1),
        batch_size=spec.get("batch_size", 64),
        warmup=spec.get("warmup"),
        buffer_capacity=spec.get("buffer_capacity", 1_000_000),
        reward_scope=spec.get("reward_scope", "averaged"),
    )


def build_ddpg(spec: dict, cfg: dict) -> DdpgAgent:
    scope = "per_pop" if spec["type"] == "ddpg1" else "global"
    profile = build_profile(cfg)
    return DdpgAgent(
        pop_count=cfg["pops"],
        max_cpus=profile.max_cpus,
        scope=scope,
        config=_ddpg_config(spec, scope),
        seed=spec.get("seed", 3),
    )


def _training_trace(cfg: dict, table: IntensityTable):
    seed = cfg["train"].get("trace_seed")
    if seed is None:
        seed = cfg["traces"]["base_seed"]
    trace = generate_arrivals(table, seed)
    lo, hi = cfg["split"]["train"]
    return trace.window(lo, hi), seed


def resolve_cnst_vector(spec: dict, cfg: dict, table: IntensityTable) -> tuple:
    """Configured constant CPU vector, or the exhaustive-search optimum on the training window."""
    if spec.get("cpus"):
        return tuple(int(c) for c in spec["cpus"])
    trace, seed = _training_trace(cfg, table)
    env_cfg = cfg["env"]
    return cnst_search(
        trace,
        build_profile(cfg),
        build_reward(cfg),
        dwell_seed=env_cfg["dwell_seed"] + seed,
        pop_count=cfg["pops"],
        initial_cpus=env_cfg["initial_cpus"],
        include_candidate=env_cfg["include_candidate"],
        dwell_mean_s=env_cfg["dwell_mean_s"],
    )


def make_scaling_factory(spec: dict, cfg: dict, out_dir=None, cnst_vector=None):
    """Zero-argument factory producing a fresh scaling agent per episode.

    Stateful baselines (PI's previous loads, TES accumulators) must not leak
    across traces; DDPG checkpoints are read-only at inference so one shared
    instance is safe.
    """
    profile = build_profile(cfg)
    reward_cfg = build_reward(cfg)
    pops = cfg["pops"]
    kind = spec["type"]
    if kind == "cnst":
        vec = cnst_vector if cnst_vector is not None else spec.get("cpus")
        return lambda: CnstAgent(vec)
    if kind == "pi":
        params = PiParams(
            alpha=spec.get("alpha", 4.0),
            beta=spec.get("beta", 0.0),
            rho_tgt=spec.get("rho_tgt", 0.7),
        )
        return lambda: PiAgent(profile, params, pops)
    if kind == "tes":
        params = TesParams(
            interval_s=spec.get("interval_s", 1.0),
            horizon=spec.get("horizon", 1),
            alpha=spec.get("alpha", 0.02),
            beta=spec.get("beta", 0.002),
            gamma=spec.get("gamma", 0.1),
            season_intervals=spec.get("season_intervals"),
            residence_s=spec.get("residence_s", 30.0),
        )
        return lambda: TesAgent(profile, reward_cfg, pops, params)
    if kind in ("ddpg1", "ddpgn"):
        if out_dir is None:
            agent = build_ddpg(spec, cfg)
        else:
            path = os.path.join(out_dir, f"checkpoint_{agent_file_tag(spec)}.json")
            if not os.path.exists(path):
                raise FileNotFoundError(f"missing checkpoint {path}; run `train` first")
            agent = load_checkpoint(path)
        return lambda: agent
    raise ValueError(f"unknown agent type {kind!r}")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_gen_trace(cfg: dict, out_dir) -> dict:
    """Write trace_<seed>.csv per replication plus a digest manifest."""
    os.makedirs(out_dir, exist_ok=True)
    table = build_table(cfg)
    traces = replicate(table, cfg["traces"]["base_seed"], cfg["traces"]["count"])
    files = []
    for trace in traces:
        name = f"trace_{trace.seed}.csv"
        write_trace(trace, os.path.join(out_dir, name))
        files.append({"file": name, "seed": trace.seed, "events": len(trace.events)})
    manifest = {
        "source_hash": table.digest(),
        "rng": "pcg64",
        "window_seconds": table.window_seconds,
        "pops": table.pop_count,
        "traces": files,
    }
    with open(os.path.join(out_dir, "trace_manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    return manifest


def cmd_train(cfg: dict, out_dir) -> dict:
    """Train every configured DDPG agent on the training window; write checkpoints and curves."""
    os.makedirs(out_dir, exist_ok=True)
    table = build_table(cfg)
    trace, trace_seed = _training_trace(cfg, table)
    if not trace.events:
        raise ValueError("training window holds no arrivals")
    profile = build_profile(cfg)
    reward_cfg = build_reward(cfg)
    env_cfg = cfg["env"]
    curves = {}
    result = {"trained": []}
    for spec in cfg["agents"]:
        if spec["type"] not in ("ddpg1", "ddpgn"):
            continue
        agent = build_ddpg(spec, cfg)
        curve = train(
            agent,
            trace,
            profile,
            reward_cfg,
            episodes=spec.get("episodes", 100),
            dwell_seed=env_cfg["dwell_seed"] + trace_seed,
            pop_count=cfg["pops"],
            initial_cpus=env_cfg["initial_cpus"],
            include_candidate=env_cfg["include_candidate"],
        )
        tag = agent_file_tag(spec)
        save_checkpoint(agent, os.path.join(out_dir, f"checkpoint_{tag}.json"))
        curve_path = os.path.join(out_dir, f"curve_{tag}.csv")
        with open(curve_path, "w") as fh:
            fh.write("episode,mean_reward\n")
            for ep, r in enumerate(curve):
                fh.write(f"{ep},{r!r}\n")
        curves[agent_display_name(spec, cfg["pops"])] = curve
        result["trained"].append(tag)
    if cfg.get("figures", True) and curves:
        from .figures import fig_learning_curves

        fig_learning_curves(curves, os.path.join(out_dir, "learning_curves.png"))
    return result


def _window_indices(record, window) -> list:
    lo, hi = window
    return [i for i, t in enumerate(record.t_s) if lo <= t < hi]


def cmd_evaluate(cfg: dict, out_dir) -> dict:
    """Run every agent over every test trace with exploration off; aggregate metrics.

    Episodes run over the full trace so adaptive baselines warm up, but all
    metrics, dumps, and histograms cover only the test window.
    """
    os.makedirs(out_dir, exist_ok=True)
    table = build_table(cfg)
    traces = replicate(table, cfg["traces"]["base_seed"], cfg["traces"]["count"])
    profile = build_profile(cfg)
    reward_cfg = build_reward(cfg)
    env_cfg = cfg["env"]
    window = cfg["split"]["test"]
    d_tgt = reward_cfg.d_tgt_ms

    manifest = {"window": list(window), "traces": [t.seed for t in traces]}
    metrics_rows = []
    latency_rows = []
    hist_rows = []
    ecdf_rows = []
    per_pop_rows = []

    for spec in cfg["agents"]:
        name = agent_display_name(spec, cfg["pops"])
        tag = agent_file_tag(spec)
        cnst_vector = None
        if spec["type"] == "cnst":
            cnst_vector = resolve_cnst_vector(spec, cfg, table)
            manifest["cnst_vector"] = list(cnst_vector)
        factory = make_scaling_factory(spec, cfg, out_dir=out_dir, cnst_vector=cnst_vector)

        per_trace_mean = []
        delays_all = []
        latencies_all = []
        cpus_sum_all = []
        cpus_per_pop = np.zeros(cfg["pops"])
        veh_per_pop = np.zeros(cfg["pops"])
        delay_by_pop = [[] for _ in range(cfg["pops"])]
        n_steps = 0

        delay_dump = open(os.path.join(out_dir, f"delays_{tag}.csv"), "w")
        delay_dump.write("trace_seed,step,t_s,delay_ms\n")
        cpu_dump = open(os.path.join(out_dir, f"cpus_{tag}.csv"), "w")
        cpu_dump.write("trace_seed,step,t_s," + ",".join(f"c_{p}" for p in range(cfg["pops"])) + "\n")
        try:
            for trace in traces:
                env = V2NEnv(
                    trace,
                    profile,
                    reward_cfg,
                    dwell_seed=env_cfg["dwell_seed"] + trace.seed,
                    pop_count=cfg["pops"],
                    initial_cpus=env_cfg["initial_cpus"],
                    dwell_mean_s=env_cfg["dwell_mean_s"],
                )
                placement = GreedyPlacement(
                    profile, reward_cfg.transmission_ms, env_cfg["include_candidate"]
                )
                record = run_episode(env, placement, factory())
                idx = _window_indices(record, window)
                if idx:
                    per_trace_mean.append(float(np.mean([record.avg_reward[i] for i in idx])))
                for i in idx:
                    delays_all.append(record.delay_ms[i])
                    latencies_all.append(record.decision_us[i])
                    cpus_sum_all.append(sum(record.cpus[i]))
                    cpus_per_pop += record.cpus[i]
                    veh_per_pop += record.vehicles[i]
                    delay_by_pop[record.placed[i]].append(record.delay_ms[i])
                    delay_dump.write(
                        f"{trace.seed},{i},{record.t_s[i]:.6f},{record.delay_ms[i]!r}\n"
                    )
                    cpu_dump.write(
                        f"{trace.seed},{i},{record.t_s[i]:.6f},"
                        + ",".join(str(c) for c in record.cpus[i])
                        + "\n"
                    )
                n_steps += len(idx)
        finally:
            delay_dump.close()
            cpu_dump.close()

        mean_reward = float(np.mean(per_trace_mean)) if per_trace_mean else 0.0
        std_reward = float(np.std(per_trace_mean)) if per_trace_mean else 0.0
        finite = [d for d in delays_all if math.isfinite(d)]
        violations = sum(1 for d in delays_all if d > d_tgt)
        metrics_rows.append(
            {
                "agent": name,
                "mean_reward": mean_reward,
                "std_reward": std_reward,
                "mean_cpus_per_pop": float(cpus_per_pop.sum() / (n_steps * cfg["pops"])) if n_steps else 0.0,
                "violation_frac": violations / len(delays_all) if delays_all else 0.0,
                "steps": n_steps,
            }
        )
        latency_rows.append(
            {
                "agent": name,
                "mean_us": float(np.mean(latencies_all)) if latencies_all else 0.0,
                "p99_us": float(np.percentile(latencies_all, 99)) if latencies_all else 0.0,
            }
        )

        # 1 ms delay histogram up to 4x target, overload and overflow pooled at the top
        cap = int(4 * d_tgt)
        counts = np.zeros(cap + 1, dtype=int)
        for d in delays_all:
            if math.isfinite(d) and d < cap:
                counts[int(d)] += 1
            else:
                counts[cap] += 1
        for b in range(cap):
            hist_rows.append({"agent": name, "bin_left_ms": b, "bin_right_ms": b + 1, "count": int(counts[b])})
        hist_rows.append({"agent": name, "bin_left_ms": cap, "bin_right_ms": "inf", "count": int(counts[cap])})

        if cpus_sum_all:
            values, freq = np.unique(np.array(cpus_sum_all), return_counts=True)
            cum = np.cumsum(freq) / len(cpus_sum_all)
            for v, c in zip(values, cum):
                ecdf_rows.append({"agent": name, "total_cpus": int(v), "cum_fraction": float(c)})

        for p in range(cfg["pops"]):
            finite_p = [d for d in delay_by_pop[p] if math.isfinite(d)]
            per_pop_rows.append(
                {
                    "agent": name,
                    "pop": p,
                    "placed_vehicles": len(delay_by_pop[p]),
                    "mean_delay_ms": float(np.mean(finite_p)) if finite_p else 0.0,
                    "mean_cpus": float(cpus_per_pop[p] / n_steps) if n_steps else 0.0,
                    "mean_vehicles": float(veh_per_pop[p] / n_steps) if n_steps else 0.0,
                }
            )

    _write_csv(os.path.join(out_dir, "metrics.csv"),
               ["agent", "mean_reward", "std_reward", "mean_cpus_per_pop", "violation_frac", "steps"],
               metrics_rows)
    _write_csv(os.path.join(out_dir, "decision_latency.csv"),
               ["agent", "mean_us", "p99_us"], latency_rows)
    _write_csv(os.path.join(out_dir, "delay_hist.csv"),
               ["agent", "bin_left_ms", "bin_right_ms", "count"], hist_rows)
    _write_csv(os.path.join(out_dir, "cpu_ecdf.csv"),
               ["agent", "total_cpus", "cum_fraction"], ecdf_rows)
    _write_csv(os.path.join(out_dir, "per_pop.csv"),
               ["agent", "pop", "placed_vehicles", "mean_delay_ms", "mean_cpus", "mean_vehicles"],
               per_pop_rows)
    with open(os.path.join(out_dir, "evaluation_manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)

    if cfg.get("figures", True):
        from .figures import fig_cpu_ecdf, fig_delay_epdf, fig_reward_bars

        fig_delay_epdf(hist_rows, d_tgt, os.path.join(out_dir, "delay_epdf.png"))
        fig_cpu_ecdf(ecdf_rows, os.path.join(out_dir, "cpu_ecdf.png"))
        fig_reward_bars(metrics_rows, os.path.join(out_dir, "avg_reward.png"))
    return {"metrics": metrics_rows, "latency": latency_rows, "manifest": manifest}


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            out = []
            for key in header:
                val = row[key]
                out.append(repr(val) if isinstance(val, float) else str(val))
            fh.write(",".join(out) + "\n")


def synthetic_observations(cfg: dict, count: int, seed: int) -> list:
    """Plausible random observations for decision-latency benchmarking."""
    rng = np.random.default_rng(seed)
    profile = build_profile(cfg)
    pops = cfg["pops"]
    out = []
    t = 0.0
    for _ in range(count):
        t += float(rng.uniform(0.01, 0.2))
        per_pop = tuple(
            (int(rng.integers(0, 6)), int(rng.integers(0, profile.max_cpus + 1)))
            for _ in range(pops)
        )
        out.append(
            Observation(
                t_s=t,
                origin=int(rng.integers(0, pops)),
                state=SystemState(per_pop=per_pop, clock_s=t),
                remote_present=tuple(bool(rng.integers(0, 2)) for _ in range(pops)),
            )
        )
    return out


def cmd_bench(cfg: dict, out_dir) -> list:
    """Wall-clock per-decision (placement + scaling) latency per agent."""
    os.makedirs(out_dir, exist_ok=True)
    bench_cfg = cfg["bench"]
    observations = synthetic_observations(cfg, bench_cfg["decisions"], bench_cfg["seed"])
    profile = build_profile(cfg)
    reward_cfg = build_reward(cfg)
    placement = GreedyPlacement(profile, reward_cfg.transmission_ms, cfg["env"]["include_candidate"])
    rows = []
    for spec in cfg["agents"]:
        name = agent_display_name(spec, cfg["pops"])
        cnst_vector = spec.get("cpus") or (1,) * cfg["pops"] if spec["type"] == "cnst" else None
        factory = make_scaling_factory(spec, cfg, out_dir=None, cnst_vector=cnst_vector)
        agent = factory()
        samples = np.empty(len(observations))
        for i, obs in enumerate(observations):
            t0 = time.perf_counter()
            placement.place(obs)
            agent.scale(obs)
            samples[i] = time.perf_counter() - t0
        rows.append(
            {
                "agent": name,
                "mean_us": float(samples.mean() * 1e6),
                "p99_us": float(np.percentile(samples, 99) * 1e6),
            }
        )
    _write_csv(os.path.join(out_dir, "bench.csv"), ["agent", "mean_us", "p99_us"], rows)
    if cfg.get("figures", True):
        from .figures import fig_runtime_bars

        fig_runtime_bars(rows, os.path.join(out_dir, "runtime.png"))
    return rows


def cmd_oracle(cfg: dict, out_dir) -> dict:
    """Exact optimum on a micro prefix of the test trace, plus per-agent gaps."""
    os.makedirs(out_dir, exist_ok=True)
    table = build_table(cfg)
    ocfg = cfg["oracle"]
    seed = ocfg.get("trace_seed")
    if seed is None:
        seed = cfg["traces"]["base_seed"]
    trace = generate_arrivals(table, seed)
    lo, hi = cfg["split"]["test"]
    test = trace.window(lo, hi)
    if len(test.events) < ocfg["vehicles"]:
        raise ValueError(
            f"test window holds {len(test.events)} arrivals, oracle needs {ocfg['vehicles']}"
        )
    profile = build_profile(cfg)
    if ocfg.get("max_cpus"):
        profile = profile.truncate(ocfg["max_cpus"])
    reward_cfg = build_reward(cfg)
    env_cfg = cfg["env"]
    instance = OracleInstance.from_trace(
        test,
        ocfg["vehicles"],
        profile,
        reward_cfg,
        dwell_seed=env_cfg["dwell_seed"] + seed,
        pop_count=cfg["pops"],
        budget=int(ocfg["budget"]),
        dwell_mean_s=env_cfg["dwell_mean_s"],
    )
    optimum = solve(instance)
    report = {
        "instance_digest": instance.digest(),
        "vehicles": instance.vehicles,
        "pops": instance.pop_count,
        "max_cpus": instance.max_cpus,
        "optimal_reward": optimum.total_reward,
        "optimal_placements": list(optimum.placements),
        "agents": [],
    }
    if ocfg.get("check_naive"):
        from .oracle import naive_enumerate

        naive = naive_enumerate(instance)
        report["naive_reward"] = naive.total_reward

    d_tgt = reward_cfg.d_tgt_ms
    for spec in cfg["agents"]:
        if spec["type"] in ("ddpg1", "ddpgn"):
            # a checkpoint trained on the full profile cannot drive a truncated one
            if ocfg.get("max_cpus") and ocfg["max_cpus"] != build_profile(cfg).max_cpus:
                continue
            factory = make_scaling_factory(spec, cfg, out_dir=out_dir)
        else:
            cnst_vector = None
            if spec["type"] == "cnst":
                cnst_vector = spec.get("cpus") or resolve_cnst_vector(spec, cfg, table)
            factory = make_scaling_factory(spec, cfg, out_dir=None, cnst_vector=cnst_vector)
        placement = GreedyPlacement(
            instance.profile, reward_cfg.transmission_ms, env_cfg["include_candidate"]
        )
        record = replay_agents(instance, placement, factory(), initial_cpus=env_cfg["initial_cpus"])
        total = record.total_reward
        delays = record.delay_ms
        report["agents"].append(
            {
                "agent": agent_display_name(spec, cfg["pops"]),
                "total_reward": total,
                "gap_pct": optimality_gap(total, optimum.total_reward),
                "mean_cpus_per_pop": float(np.mean([np.mean(c) for c in record.cpus])),
                "violation_pct": 100.0 * sum(1 for d in delays if d > d_tgt) / len(delays)
                if delays
                else 0.0,
            }
        )
    with open(os.path.join(out_dir, "oracle_report.json"), "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
    return report
