"""Command line: gen-data, eval, bench-search and cluster."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from . import harness, simenv
from .policy import PolicyConfig
from .store import DatasetFormatError, load_dataset, save_dataset


def _csv_list(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maskseek",
                                description="Mask-based trajectory search for language-conditioned "
                                            "manipulation on a simulated tabletop.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate expert demonstrations")
    g.add_argument("--variants", type=_csv_list, default=list(simenv.TRAIN_VARIANTS),
                   help="comma-separated environment variants (default A,B,C)")
    g.add_argument("--tasks", type=_csv_list, default=None,
                   help="comma-separated task labels (default: all)")
    g.add_argument("--per-task", type=int, default=17,
                   help="rollouts per (variant, task) (default 17, about 50 per task)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)

    e = sub.add_parser("eval", help="zero-shot evaluation on a held-out variant")
    e.add_argument("--mode", choices=("first", "second"), default="first")
    e.add_argument("--dataset", type=Path, required=True)
    e.add_argument("--env-variant", default="D")
    e.add_argument("--alpha", type=float, default=0.9)
    e.add_argument("--sigma-threshold", type=float, default=0.03)
    e.add_argument("--empty-threshold", type=float, default=0.003)
    e.add_argument("--stride", type=int, default=4)
    e.add_argument("--subset-frac", type=float, default=0.08)
    e.add_argument("--max-steps", type=int, default=180)
    e.add_argument("--rollouts", type=int, default=10,
                   help="rollouts per task; the second mode runs rollouts x tasks instructions")
    e.add_argument("--instructions", type=int, default=None,
                   help="second mode only: number of instructions (overrides --rollouts)")
    e.add_argument("--tasks", type=_csv_list, default=None)
    e.add_argument("--agent", choices=("search", "expert"), default="search",
                   help="first mode only: 'expert' replays the scripted expert as a sanity check")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--report", type=Path, required=True)
    e.add_argument("--no-figures", action="store_true")

    b = sub.add_parser("bench-search", help="time the global search")
    b.add_argument("--pool", type=int, default=200)
    b.add_argument("--frames", type=int, default=64)
    b.add_argument("--stride", type=int, default=4)
    b.add_argument("--repeats", type=int, default=200)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--report", type=Path, default=None)
    b.add_argument("--no-figures", action="store_true")

    c = sub.add_parser("cluster", help="cluster instruction embeddings and score the clustering")
    c.add_argument("--templates", type=Path, default=None,
                   help="template file (default: the shipped 34-task corpus)")
    c.add_argument("--k", type=int, default=None, help="cluster count (default: task count)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--report", type=Path, required=True)
    c.add_argument("--no-figures", action="store_true")
    return p


def _gen_data(args) -> int:
    args.out.parent.mkdir(parents=True, exist_ok=True)
    ds = simenv.generate_demos(args.variants, args.tasks, args.per_task, args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} trajectories to {args.out}")
    return 0


def _eval(args) -> int:
    config = PolicyConfig(alpha=args.alpha, sigma_threshold=args.sigma_threshold,
                          empty_gripper_threshold=args.empty_threshold, stride=args.stride,
                          subset_fraction=args.subset_frac, max_steps=args.max_steps)
    dataset = load_dataset(args.dataset)
    if args.mode == "first":
        report = harness.eval_first_setting(dataset, config, args.rollouts, args.seed,
                                            args.env_variant, args.tasks, args.agent)
    else:
        if args.agent != "search":
            raise harness.EvalConfigError("the expert agent is only available in the first mode")
        n_tasks = len(args.tasks) if args.tasks else len(simenv.default_scenario().tasks)
        n = args.instructions if args.instructions is not None else args.rollouts * n_tasks
        report = harness.eval_second_setting(dataset, config, n, args.seed, args.env_variant,
                                             args.tasks)
    harness.write_eval_report(report, args.report, figures=not args.no_figures)
    sys.stdout.write(harness.format_eval_summary(report))
    return 0


def _bench(args) -> int:
    report = harness.bench_search(args.pool, args.frames, args.stride, args.repeats,
                                  args.threads, args.seed)
    print(f"pool {report.pool_size} x {report.frames_per_traj} frames, stride {report.stride}: "
          f"{report.frames_scanned} frames scanned per search")
    print(f"latency us: min {report.min_us:.1f}  median {report.median_us:.1f}  "
          f"p95 {report.p95_us:.1f}  ({report.threads} thread(s))")
    print(f"thread-count consistency: {'ok' if report.threads_consistent else 'MISMATCH'}")
    if args.report is not None:
        harness.write_bench_report(report, args.report, figures=not args.no_figures)
    return 0 if report.threads_consistent else 1


def _cluster(args) -> int:
    instructions, labels = harness.load_templates(args.templates)
    report = harness.cluster_instructions(instructions, labels, args.k, args.seed)
    harness.write_cluster_report(report, args.report, figures=not args.no_figures)
    print(f"{report.n_instructions} instructions, {report.n_tasks} tasks, k={report.k}")
    print(f"silhouette {report.silhouette:.4f}  ARI {report.ari:.4f}  NMI {report.nmi:.4f}")
    return 0


COMMANDS = {"gen-data": _gen_data, "eval": _eval, "bench-search": _bench, "cluster": _cluster}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, LookupError, RuntimeError, DatasetFormatError) as exc:
        print(f"maskseek {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
