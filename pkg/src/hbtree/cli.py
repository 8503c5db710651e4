"""Command-line entry point: analyze, plan, sim, curve, trace."""
from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path

from . import analysis
from .sim.config import ConfigError, SimConfig
from .sim.engine import TreeContext
from .sim.experiments import run_config
from .sim.stats import emit_report
from .tree import run_protocol_iterated

EXIT_OK = 0
EXIT_CONFIG = 2


def _csv_list(kind):
    def parse(text: str):
        try:
            return [kind(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated {kind.__name__} values") from None

    return parse


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _table(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    if not rows:
        return ""
    cols = list(rows[0])
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row.values()))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- subcommands


def cmd_analyze(args) -> int:
    rows = []
    for r, tau, r_tr in itertools.product(args.r, args.tau, args.r_tr or [None]):
        r_tr = r if r_tr is None else r_tr
        p_fb = analysis.false_branch(r_tr, args.eps, args.beta)
        fa = analysis.frr_auth(r, tau, args.eps)
        gamma = analysis.combined_frr(args.depth, p_fb, fa)
        delta = analysis.far_auth(r, tau)
        rows.append({
            "r": r, "tau": tau, "r_tr": r_tr, "eps": args.eps, "beta": args.beta, "d": args.depth,
            "s": args.s,
            "frr_auth": fa,
            "far_auth": delta,
            "p_false_branch": p_fb,
            "p_false_branch_reader": analysis.false_branch_reader(r_tr, args.eps, args.beta),
            "combined_frr": gamma,
            # gamma may be 1 here (hopeless parameters), so no iterated_rates
            "iterated_frr": gamma ** args.s,
            "iterated_far": min(1.0, args.s * delta),
        })
    _write(_table(rows, args.format), args.out)
    return EXIT_OK


def cmd_plan(args) -> int:
    plan = analysis.plan_parameters(
        args.n, args.target_frr, args.target_far, args.eps, args.depth,
        k_x=args.k_x, k_y=args.k_y, s_max=args.s_max,
    )
    p = plan.params
    row = {
        "n": args.n, "eps": p.eps, "d": p.d, "beta": p.beta, "k_x": p.k_x, "k_y": p.k_y,
        "r": p.r, "tau": p.tau, "r_tr": p.r_tr, "s": p.s,
        "frr": plan.frr, "far": plan.far, "single_frr": plan.single_frr, "single_far": plan.single_far,
        "p_false_branch": plan.p_fb,
        "c_rdr": plan.cost.reader_bitops, "c_tag": plan.cost.tag_bitops,
        "comm": plan.cost.comm_bits, "mem": plan.cost.tag_mem_bits,
    }
    _write(_table([row], args.format), args.out)
    return EXIT_OK


def _load_config(args) -> SimConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = SimConfig.from_file(args.config)
    changes = {}
    if args.seed is not None:
        changes["root_seed"] = args.seed
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.workers is not None:
        changes["workers"] = args.workers
    if changes:
        try:
            cfg = cfg.replace(**changes)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def cmd_sim(args) -> int:
    cfg = _load_config(args)
    stats = run_config(cfg, timing=args.timing)
    emit_report(stats, args.format, args.out)
    return EXIT_OK


def cmd_curve(args) -> int:
    betas = analysis.beta_grid(args.beta_max, args.per_decade)
    for b in args.beta or []:
        if 2 <= b <= args.beta_max:
            betas.append(b)
    points = analysis.response_length_curve(args.targets, betas, args.eps)
    rows = [{"target": p.target, "beta": p.beta, "r": p.r, "p_false_branch": p.p_fb} for p in points]
    _write(_table(rows, args.format), args.out)
    return EXIT_OK


def cmd_trace(args) -> int:
    cfg = _load_config(args)
    if cfg.baseline != "tree_hb":
        raise ConfigError("trace needs a tree_hb configuration")
    ctx = TreeContext(cfg)
    legit, j, run_s, cred = ctx.identity(args.trial)
    forced = int(ctx.leaves[j]) if cfg.traversal == "forced" else None
    out = run_protocol_iterated(ctx.directory, cred, cfg.params, run_s, forced_leaf=forced, record=True)
    doc = {
        "config_id": cfg.config_id,
        "trial": args.trial,
        "legitimate": legit,
        "true_leaf": cred.true_leaf,
        "attempts": [t.to_json() for t in out.transcripts],
        "accepted": out.accepted,
        "repeats_used": out.repeats_used,
        "op_counts": out.op_counts.as_dict(),
    }
    _write(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", help="root seed (hex)")
    common.add_argument("--trials", type=int, help="override the trial count")
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--workers", type=int, help="worker processes")

    parser = argparse.ArgumentParser(prog="hbtree", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="closed-form error rates")
    p.add_argument("--r", type=_csv_list(int), required=True, help="response length(s)")
    p.add_argument("--tau", type=_csv_list(int), required=True, help="threshold(s)")
    p.add_argument("--r-tr", type=_csv_list(int), help="traversal length(s); default r")
    p.add_argument("--eps", type=float, default=0.25)
    p.add_argument("--beta", type=int, default=2)
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--s", type=int, default=1, help="maximum repeats")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plan", parents=[common], help="parameter planner")
    p.add_argument("--n", type=int, required=True, help="population bound")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--target-frr", type=float, required=True)
    p.add_argument("--target-far", type=float, required=True)
    p.add_argument("--k-x", type=int, default=analysis.DEFAULT_K_X)
    p.add_argument("--k-y", type=int)
    p.add_argument("--s-max", type=int, default=4)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("sim", parents=[common], help="Monte Carlo run from a config file")
    p.add_argument("--timing", action="store_true", help="include wall-clock statistics")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("curve", parents=[common], help="minimal response length against beta")
    p.add_argument("--targets", type=_csv_list(float), default=[0.1, 0.01])
    p.add_argument("--beta-max", type=int, default=10_000)
    p.add_argument("--beta", type=_csv_list(int), help="extra beta values to include")
    p.add_argument("--per-decade", type=int, default=10)
    p.add_argument("--eps", type=float, default=0.25)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("trace", parents=[common], help="dump one run's transcript")
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"hbtree: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"hbtree: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
