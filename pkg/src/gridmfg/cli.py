"""Command-line entry point: ``gridmfg <command> [flags]``.

Exit status is 0 on success, 1 when the command fails on its inputs (bad
case bundle, infeasible dispatch, empty log) and 2 on usage errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .case import CaseError, generate_case, load_case, parse_gen_spec, write_case


def _cmd_gen_case(args) -> int:
    gens = parse_gen_spec(args.gens)
    case = generate_case(args.buses, gens, args.seed, H=args.H)
    write_case(case, args.out)
    print(f"wrote {args.buses}-bus case with {case.network.G} generators to {args.out}")
    return 0


def _cmd_dispatch(args) -> int:
    from .dispatch import linearize_costs, read_bids, solve_dispatch, write_result

    case = load_case(args.case)
    net = case.network
    if not 0 <= args.hour < case.H:
        raise ValueError(f"--hour must lie in [0, {case.H})")
    bids = read_bids(args.bids, net.M)
    caps = net.mean_capacities(args.hour)
    result = solve_dispatch(net, bids, linearize_costs(net, caps))
    write_result(result, args.out)
    if not result.optimal:
        print(f"dispatch {result.status}; result written to {args.out}", file=sys.stderr)
        return 1
    print(f"hub price {result.hub_price:.6g} $/MWh, objective {result.objective:.6g}; wrote {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    from .market import ScenarioConfig, simulate

    overrides = {"storage": not args.no_storage, "seeds": tuple(range(args.seeds))}
    if args.days is not None:
        overrides["days"] = args.days
    if args.learner is not None:
        overrides["learner"] = args.learner
    if args.t_train is not None:
        overrides["t_train"] = args.t_train
    cfg = ScenarioConfig.from_case(args.case, **overrides)
    _, report = simulate(cfg, args.out)
    print(json.dumps({"imv": report["imv"]["mean"], "ex_post_cost": report["ex_post_cost"]["mean"],
                      "converged": report["converged"]}))
    return 0


def _cmd_report(args) -> int:
    from .market import report_from_dir
    from .metrics import write_report

    report = report_from_dir(args.runs, window_days=args.window)
    write_report(report, args.out or args.runs)
    print(json.dumps({"imv": report["imv"]["mean"], "ex_post_cost": report["ex_post_cost"]["mean"],
                      "converged": report["converged"]}))
    return 0


def _label_and_seed(path: Path, idx: int) -> tuple[str, int]:
    parent = path.parent
    if parent.name.startswith("seed") and parent.name[4:].isdigit():
        return parent.parent.name or "run", int(parent.name[4:])
    return parent.name or "run", idx


def _cmd_plot(args) -> int:
    from .market import read_runlog
    from . import plotting

    runs = []
    for i, p in enumerate(args.runlog):
        path = Path(p)
        label, seed = _label_and_seed(path, i)
        runs.append((label, seed, read_runlog(path)))
    if args.labels:
        if len(args.labels) != len(runs):
            raise ValueError("--labels needs one label per --runlog file")
        runs = [(lab, s, c) for lab, (_, s, c) in zip(args.labels, runs)]
    if args.kind == "hub":
        out = plotting.plot_hub([(f"{lab}/seed{s}", c) for lab, s, c in runs], args.out, args.days)
    elif args.kind == "storage":
        out = plotting.plot_storage([(f"{lab}/seed{s}", c) for lab, s, c in runs], args.out, args.days)
    else:
        out = plotting.plot_bars(runs, args.kind, args.out, args.days)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridmfg", description="Mean-field storage learning in a DC dispatch market.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-case", help="write a synthetic hub-spoke case bundle")
    p.add_argument("--buses", type=int, required=True)
    p.add_argument("--gens", default="oil:4,biomass:2,solar:17,wind:3", help="counts per kind, e.g. oil:4,wind:3")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--H", type=int, default=12, help="steps per day")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_case)

    p = sub.add_parser("dispatch", help="solve one dispatch; bids.csv gives bus,D_mt in MW")
    p.add_argument("--case", required=True)
    p.add_argument("--bids", required=True)
    p.add_argument("--hour", type=int, default=0, help="hour of day for mean renewable capacity")
    p.add_argument("--out", default="dispatch_result.json")
    p.set_defaults(func=_cmd_dispatch)

    p = sub.add_parser("simulate", help="run the two-phase market loop for several seeds")
    p.add_argument("--case", required=True)
    p.add_argument("--days", type=int, default=None, help="default: scenario.json (50)")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, run as 0..N-1")
    p.add_argument("--no-storage", action="store_true", help="baseline: no training, all actions 0")
    p.add_argument("--learner", choices=("q", "pg"), default=None)
    p.add_argument("--t-train", type=int, default=None, dest="t_train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("report", help="recompute report.json and summary.csv from run logs")
    p.add_argument("--runs", required=True, help="directory written by simulate")
    p.add_argument("--window", type=int, default=5, help="trailing days")
    p.add_argument("--out", default=None, help="default: the runs directory")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("plot", help="write an SVG figure from run logs")
    p.add_argument("--runlog", nargs="+", required=True)
    p.add_argument("--kind", choices=("hub", "storage", "imv", "cost"), required=True)
    p.add_argument("--labels", nargs="+", default=None)
    p.add_argument("--days", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate" and args.seeds < 1:
        parser.error("--seeds must be at least 1")
    try:
        return args.func(args)
    except (CaseError, ValueError, RuntimeError, OSError) as exc:
        print(f"gridmfg {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
