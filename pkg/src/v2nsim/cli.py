"""Command-line entry point: gen-trace, train, evaluate, oracle, bench.

Each subcommand reads the JSON config (defaults apply when omitted), writes
its outputs under --out, and exits 0 on success. Failures exit nonzero with
a machine-readable JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import experiments


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (defaults used when omitted)")
    common.add_argument("--out", default="results", help="output directory (default: results)")
    common.add_argument("--seed", type=int, help="override traces.base_seed")
    common.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    parser = argparse.ArgumentParser(
        prog="v2nsim",
        description="Simulate C-V2N task placement and edge CPU scaling across PoPs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-trace", parents=[common], help="write seeded arrival traces and a manifest")
    sub.add_parser("train", parents=[common], help="train the configured DDPG agents; write checkpoints and curves")
    sub.add_parser("evaluate", parents=[common], help="run all agents over the test traces; write metrics and dumps")
    sub.add_parser("oracle", parents=[common], help="exact optimum on a micro instance plus per-agent gaps")
    sub.add_parser("bench", parents=[common], help="per-decision wall-clock latency per agent")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["traces"] = {"base_seed": args.seed}
    if args.no_figures:
        overrides["figures"] = False
    try:
        cfg = experiments.load_config(args.config, overrides)
        if args.command == "gen-trace":
            manifest = experiments.cmd_gen_trace(cfg, args.out)
            print(f"wrote {len(manifest['traces'])} traces to {args.out}")
        elif args.command == "train":
            result = experiments.cmd_train(cfg, args.out)
            print(f"trained {', '.join(result['trained']) or 'nothing'}; outputs in {args.out}")
        elif args.command == "evaluate":
            result = experiments.cmd_evaluate(cfg, args.out)
            for row in result["metrics"]:
                print(
                    f"{row['agent']:>8}: reward {row['mean_reward']:.4f} "
                    f"(+-{row['std_reward']:.4f}), cpus/pop {row['mean_cpus_per_pop']:.2f}, "
                    f"violations {100 * row['violation_frac']:.1f}%"
                )
        elif args.command == "oracle":
            report = experiments.cmd_oracle(cfg, args.out)
            print(f"optimal reward {report['optimal_reward']:.4f} on {report['vehicles']} arrivals")
            for row in report["agents"]:
                print(f"{row['agent']:>8}: gap {row['gap_pct']:.1f}%")
        elif args.command == "bench":
            rows = experiments.cmd_bench(cfg, args.out)
            for row in rows:
                print(f"{row['agent']:>8}: mean {row['mean_us']:.2f} us, p99 {row['p99_us']:.2f} us")
        return 0
    except Exception as exc:  # structured error contract for scripting
        json.dump({"error": str(exc), "type": type(exc).__name__}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
