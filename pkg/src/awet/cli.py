"""``awet`` command line: demo-gen, train, ablate, stats, curves.

Exit codes: 0 on success, 1 for a package error (bad input, failed
generation, undefined test, ...), 2 for usage errors, 3 for I/O errors and
4 when a run finished but some seeds failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from awet import bench
from awet.demos import annotate_mc_returns, generate_demos, save_demos
from awet.envs import TASKS
from awet.errors import AwetError


def _demo_gen(args) -> int:
    trajs = annotate_mc_returns(generate_demos(args.task, args.n, args.seed), args.gamma)
    save_demos(args.out, trajs, args.task, args.gamma)
    print(f"wrote {len(trajs)} {args.task} demos to {args.out}")
    return 0


def _report(summary: bench.Summary) -> None:
    m, s = summary.stat("success_rate")
    rm, rs = summary.stat("mean_return")
    cfg = summary.config
    print(f"{cfg.tag}: success {m:.3f} +- {s:.3f}, return {rm:.2f} +- {rs:.2f} over {cfg.n_seeds} seeds"
          f" ({summary.n_failed} failed)")
    for seed in summary.seeds:
        if seed.status != "ok":
            print(f"  seed {seed.seed} failed: {seed.error}", file=sys.stderr)


def _train(args) -> int:
    config = bench.load_run_config(args.config)
    if args.ablate:
        config = bench.apply_variant(config, args.ablate)
    overrides = {}
    if args.seeds is not None:
        overrides["n_seeds"] = args.seeds
    if args.out is not None:
        overrides["out_dir"] = args.out
    if overrides:
        config = dataclasses.replace(config, **overrides)
    summary = bench.run_experiment(config, jobs=args.jobs)
    _report(summary)
    return 4 if summary.n_failed else 0


def _ablate(args) -> int:
    if args.config:
        base = bench.load_run_config(args.config)
        base = dataclasses.replace(base, task=args.task, out_dir=args.out)
    else:
        base = bench.RunConfig(task=args.task, out_dir=args.out)
    if args.seeds is not None:
        base = dataclasses.replace(base, n_seeds=args.seeds)
    if args.episodes is not None:
        base = dataclasses.replace(base, awet=dataclasses.replace(base.awet, online_episodes=args.episodes))
    variants = args.variants.split(",") if args.variants else bench.VARIANTS + bench.EXTRA_VARIANTS
    counts = [int(v) for v in args.demo_counts.split(",")] if args.demo_counts else bench.DEMO_COUNTS
    result = bench.ablation_matrix(base, variants, counts, jobs=args.jobs)
    for row in result.table:
        print(f"{row[0]:>12}  demos={row[1]:<4} success {row[4]:.3f} +- {row[5]:.3f}")
    return 4 if any(row[3] for row in result.table) else 0


def _stats(args) -> int:
    a, b = bench.read_samples(args.a), bench.read_samples(args.b)
    res = bench.wilcoxon_signed_rank(a, b, method=args.method)
    print(f"W+ = {res.statistic:g}, n = {res.n}, method = {res.method}")
    print(f"p(a > b) = {res.p_greater:.6g}")
    print(f"p(a < b) = {res.p_less:.6g}")
    print(f"p(two-sided) = {res.p_two_sided:.6g}")
    return 0


def _curves(args) -> int:
    files = bench.find_metrics(args.inp)
    rows = bench.emit_curves(files, args.out)
    print(f"wrote {len(rows)} curve rows from {len(files)} metrics files to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="awet", description="Offline pre-training plus online fine-tuning from demos.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("demo-gen", help="roll out the scripted expert and save annotated demos")
    g.add_argument("--task", required=True, choices=sorted(TASKS))
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--gamma", type=float, default=0.98)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_demo_gen)

    t = sub.add_parser("train", help="run one configuration over several seeds")
    t.add_argument("--config", required=True)
    t.add_argument("--ablate", choices=["no_aa", "no_et", "no_aa_no_et", "no_clip"])
    t.add_argument("--seeds", type=int)
    t.add_argument("--out")
    t.add_argument("--jobs", type=int, default=1)
    t.set_defaults(func=_train)

    a = sub.add_parser("ablate", help="run the ablation matrix and the demo-count sweep")
    a.add_argument("--task", required=True, choices=sorted(TASKS))
    a.add_argument("--out", required=True)
    a.add_argument("--config")
    a.add_argument("--seeds", type=int)
    a.add_argument("--episodes", type=int)
    a.add_argument("--variants", help="comma-separated list; default is every variant, ET_full_expert and a c_l sweep")
    a.add_argument("--demo-counts", help="comma-separated, default 20,40,60,80,100")
    a.add_argument("--jobs", type=int, default=1)
    a.set_defaults(func=_ablate)

    s = sub.add_parser("stats", help="paired Wilcoxon signed-rank test")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--method", choices=["auto", "exact", "normal"], default="auto")
    s.set_defaults(func=_stats)

    c = sub.add_parser("curves", help="aggregate metrics files into mean/std curves")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=_curves)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AwetError as exc:
        print(f"awet {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"awet {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
