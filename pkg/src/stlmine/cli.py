"""Command-line entry points: run, mine, train, evaluate, serve."""
from __future__ import annotations

import argparse
import json
import os
import sys

from .config import RunConfig, default_config
from .formulas import format_formula, parse_formula, robustness
from .gridworld import rollout_policy
from .loop import evaluate_report, run_joint_loop
from .mining import LabeledDataset, evolve, write_stats_csv
from .qlearn import greedy_policy, train
from .seeding import derive_rng


def _load_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.load(args.config)
    else:
        cfg = default_config(args.size)
    if getattr(args, "mode", None):
        cfg.loop.labeling_mode = args.mode
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def cmd_run(args) -> int:
    cfg = _load_config(args)
    if cfg.loop.labeling_mode == "interactive":
        # An interactive run is a serve: the loop needs the console to label.
        from .server import serve

        serve(cfg, args.port)
        return 0
    report = run_joint_loop(cfg)
    print(f"status: {report.status}")
    print(f"iterations: {len(report.records)}")
    if report.records:
        print(
            f"unsafe: first {report.first_unsafe * 100:.1f}% "
            f"last {report.last_unsafe * 100:.1f}%"
        )
    if report.final_mcr_mean is not None:
        print(f"final MCR: {report.final_mcr_mean:.4f} +/- {report.final_mcr_se:.4f}")
    if report.final_formula:
        print(f"constraint: {report.final_formula}")
    return 0 if report.status == "converged" else 2


def cmd_mine(args) -> int:
    cfg = _load_config(args)
    env = cfg.env.build()
    dataset = LabeledDataset.load(args.dataset)
    best, history = evolve(dataset, cfg.miner.build(env), derive_rng(cfg.seed))
    print(f"best constraint: {format_formula(best)}")
    print(f"best fitness: {max(h.best_fitness for h in history):.4f}")
    print(f"generations: {len(history)}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        csv_path = os.path.join(args.out, "mining_stats.csv")
        write_stats_csv(csv_path, history)
        with open(os.path.join(args.out, "formula.txt"), "w") as fh:
            fh.write(format_formula(best) + "\n")
        print(f"stats written to {csv_path}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    env = cfg.env.build()
    phi = parse_formula(args.formula)
    qtable = train(env, phi, cfg.learner.build(), derive_rng(cfg.seed))
    policy = greedy_policy(qtable)
    trace = rollout_policy(env, policy, env.episode_length, 0.0, derive_rng(cfg.seed, 1))
    rho = robustness(phi, trace, 0)
    print(f"greedy rollout robustness: {rho:.4f} ({'satisfied' if rho >= 0 else 'violated'})")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "qtable.json")
        with open(path, "w") as fh:
            json.dump(qtable.to_dict(), fh)
        print(f"qtable written to {path}")
    return 0


def cmd_evaluate(args) -> int:
    print(evaluate_report(args.report))
    return 0


def cmd_serve(args) -> int:
    cfg = _load_config(args)
    cfg.loop.labeling_mode = "interactive"
    from .server import serve

    print(f"console API on http://127.0.0.1:{args.port} (labeling mode: interactive)")
    serve(cfg, args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stlmine",
        description="Mine an STL safety constraint while learning a policy under it.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_config=True):
        p.add_argument("--config", help="run config JSON", required=False)
        p.add_argument("--size", type=int, default=6, help="stock grid size when no config is given")
        p.add_argument("--seed", type=int, default=None)

    p_run = sub.add_parser("run", help="execute the full joint loop")
    add_common(p_run)
    p_run.add_argument("--mode", choices=["oracle", "interactive"], default=None)
    p_run.add_argument("--out", help="run directory for artifacts")
    p_run.add_argument("--port", type=int, default=8000, help="port for interactive mode")
    p_run.set_defaults(fn=cmd_run)

    p_mine = sub.add_parser("mine", help="evolve a constraint from a labeled dataset")
    add_common(p_mine)
    p_mine.add_argument("--dataset", required=True, help="dataset JSON file")
    p_mine.add_argument("--out", help="directory for stats CSV")
    p_mine.set_defaults(fn=cmd_mine)

    p_train = sub.add_parser("train", help="train a policy against a constraint")
    add_common(p_train)
    p_train.add_argument("--formula", required=True, help="constraint text")
    p_train.add_argument("--out", help="directory for the exported qtable")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("evaluate", help="summarize a persisted run report")
    p_eval.add_argument("--report", required=True, help="report.json path")
    p_eval.set_defaults(fn=cmd_evaluate)

    p_serve = sub.add_parser("serve", help="interactive run with the HTTP console")
    add_common(p_serve)
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--out", help="run directory for artifacts")
    p_serve.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
