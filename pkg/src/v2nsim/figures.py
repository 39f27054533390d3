"""Matplotlib renderings of the evaluation outputs, written next to the CSVs.

Figures are a convenience view; the delimited files remain the data of
record. Everything renders through the Agg backend so the pipeline runs
headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_STYLE = {"figure.figsize": (6.4, 3.6), "axes.grid": True, "grid.alpha": 0.3}


def _agents_in(rows):
    seen = []
    for row in rows:
        if row["agent"] not in seen:
            seen.append(row["agent"])
    return seen


def fig_delay_epdf(hist_rows, d_tgt_ms, path) -> None:
    """Per-agent empirical delay density from the 1 ms histogram rows."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for agent in _agents_in(hist_rows):
            rows = [r for r in hist_rows if r["agent"] == agent and r["bin_right_ms"] != "inf"]
            counts = np.array([r["count"] for r in rows], dtype=float)
            edges = np.array([r["bin_left_ms"] for r in rows], dtype=float)
            total = counts.sum()
            if total > 0:
                ax.plot(edges + 0.5, 100.0 * counts / total, label=agent)
        ax.axvline(d_tgt_ms, color="gray", linestyle="--", linewidth=1, label="target")
        ax.set_xlabel("per-vehicle delay [ms]")
        ax.set_ylabel("ePDF [%]")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)


def fig_cpu_ecdf(ecdf_rows, path) -> None:
    """eCDF of the total active CPUs across PoPs, one curve per agent."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for agent in _agents_in(ecdf_rows):
            rows = [r for r in ecdf_rows if r["agent"] == agent]
            xs = [r["total_cpus"] for r in rows]
            ys = [r["cum_fraction"] for r in rows]
            ax.step(xs, ys, where="post", label=agent)
        ax.set_xlabel("total active CPUs")
        ax.set_ylabel("eCDF")
        ax.set_ylim(0, 1.02)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)


def fig_reward_bars(metrics_rows, path) -> None:
    """Mean reward per agent with +-3 sigma whiskers across traces."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        names = [r["agent"] for r in metrics_rows]
        means = [r["mean_reward"] for r in metrics_rows]
        errs = [3.0 * r["std_reward"] for r in metrics_rows]
        x = np.arange(len(names))
        ax.bar(x, means, yerr=errs, capsize=4, color="0.55", edgecolor="black")
        for xi, m in zip(x, means):
            ax.annotate(f"{m:.2f}", (xi, m), ha="center", va="bottom", fontsize=8)
        ax.set_xticks(x, names)
        ax.set_ylabel("average reward")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)


def fig_learning_curves(curves: dict, path) -> None:
    """Per-episode mean reward during training, one line per agent."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for name, curve in curves.items():
            ax.plot(range(len(curve)), curve, label=name)
        ax.set_xlabel("episode")
        ax.set_ylabel("mean reward")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)


def fig_runtime_bars(bench_rows, path) -> None:
    """Mean decision latency per agent, log scale, annotated in microseconds."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        names = [r["agent"] for r in bench_rows]
        means = [r["mean_us"] for r in bench_rows]
        x = np.arange(len(names))
        ax.bar(x, means, color="0.55", edgecolor="black")
        for xi, m in zip(x, means):
            ax.annotate(f"{m:.2f}", (xi, m), ha="center", va="bottom", fontsize=8)
        ax.set_xticks(x, names)
        ax.set_ylabel("decision time [us]")
        ax.set_yscale("log")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
