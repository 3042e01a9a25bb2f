"""Command line entry point: ``aggsolve {gen,run,compare,plot,validate}``.

Exit codes: 0 success, 1 other package error, 2 bad configuration or input,
3 numerical abort. ``AGGSOLVE_OUTPUT_ROOT`` sets the default output root.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import cournot as cn
from . import experiment as ex
from . import network as nw
from . import schedules as sc
from .errors import AggsolveError, ConfigurationError
from .game import game_to_dict

OUTPUT_ENV = "AGGSOLVE_OUTPUT_ROOT"


def _default_out(name):
    return Path(os.environ.get(OUTPUT_ENV, "aggsolve-out")) / name


GRAPH_KINDS = {"er": "erdos_renyi", "erdos_renyi": "erdos_renyi", "ring": "ring", "complete": "complete"}


def _load(args):
    if args.config is None:
        raise ConfigurationError("no config file given (positional or --config)")
    cfg = ex.load_config(args.config)
    run = cfg.setdefault("run", {})
    for key in ("horizon", "replications", "workers", "master_seed"):
        val = getattr(args, key, None)
        if val is not None:
            run[key] = val
    if args.graph is not None:
        graph = {"kind": GRAPH_KINDS[args.graph]}
        if graph["kind"] == "erdos_renyi":
            graph["p"] = 0.2 if args.p is None else args.p
            graph["seed"] = 0 if args.graph_seed is None else args.graph_seed
        cfg["graph"] = graph
    return cfg, Path(args.config).resolve().parent


def _out_dir(args, cfg, verb):
    if args.out:
        return Path(args.out)
    if cfg.get("run", {}).get("output"):
        return Path(cfg["run"]["output"])
    return _default_out(f"{Path(args.config).stem}-{verb}")


def cmd_gen(args):
    if args.preset not in cn.PRESETS:
        raise ConfigurationError(f"unknown preset {args.preset!r}; choose from {sorted(cn.PRESETS)}")
    game, graph, hier, inst = cn.preset(args.preset, args.seed)
    spec = game_to_dict(game)
    spec["graph"] = graph.to_dict()
    target = Path(args.out) if args.out else _default_out("instances") / f"{args.preset}-{args.seed}.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(spec, indent=2))
    print(target)
    return 0


def cmd_run(args):
    cfg, base = _load(args)
    out = _out_dir(args, cfg, "run")
    res = ex.run_experiment(cfg, out, base_dir=base)
    print(json.dumps({"out": str(out), "final": res.summary["final"],
                      "slopes": res.summary["slopes"], "partial": res.summary["partial"]}, indent=2))
    if res.summary["completed"] == 0:
        return _exit_for_errors(res.summary["errors"])
    return 0


def _exit_for_errors(errors):
    msgs = list(errors.values())
    for m in msgs:
        print(m, file=sys.stderr)
    if any(m.startswith("NumericError") for m in msgs):
        return 3
    return 2 if any(m.startswith(("ConfigurationError", "ValidationError", "Unsupported")) for m in msgs) else 1


def cmd_compare(args):
    cfg, base = _load(args)
    out = _out_dir(args, cfg, "compare")
    arms, summary = ex.compare_regularization(cfg, out, base_dir=base)
    last = summary["table"][-1] if summary["table"] else {}
    print(json.dumps({"out": str(out), "final": last}, indent=2))
    for arm in arms.values():
        if arm.summary["completed"] == 0:
            return _exit_for_errors(arm.summary["errors"])
    return 0


def cmd_plot(args):
    from .plotting import plot_traces
    out = Path(args.out) if args.out else _default_out("plots")
    files = plot_traces(list(args.traces) + list(args.trace_opt), out, metrics=args.metrics, fmt=args.format)
    for f in files:
        print(f)
    return 0


def cmd_validate(args):
    cfg, base = _load(args)
    resolved = ex.resolve_config(cfg, base)
    game, _, _ = ex._load_game(resolved["game"], base)
    report = {"schedules": ex.schedule_report(resolved, game.n_players)}
    graph = nw.GraphSchedule.from_dict(resolved["graph"])
    horizon = args.graph_horizon or min(int(resolved["run"]["horizon"]), 2000)
    diag = nw.validate_schedule(graph, horizon)
    report["graph"] = {"ok": bool(diag.ok), "horizon": diag.horizon,
                       "varsigma_empirical": diag.varsigma_empirical, "violation": diag.violation,
                       "violation_k": diag.violation_k}
    mix = nw.mixing_diagnostics(graph, min(horizon, 200))
    report["mixing"] = {"theta": mix.theta, "beta": mix.beta, "varsigma": mix.varsigma,
                        "bound_holds": bool(mix.bound_holds)}
    if resolved["run"]["solver"] == "hierarchical":
        params = sc.ParamSchedules.from_config(resolved["schedule"], game.n_players)
        report["hierarchical_case"] = sc.hierarchical_case(
            params.a, params.eps.exponent if params.eps is not None else float("inf"), params.mu.exponent)
    report = ex._jsonable(report)
    print(json.dumps(report, indent=2))
    ok = report["graph"]["ok"] and all(v["ok"] for v in report["schedules"].values())
    return 0 if ok or not args.strict else 2


def build_parser():
    p = argparse.ArgumentParser(prog="aggsolve", description="Distributed aggregative game solvers")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen", help="write a Cournot instance to JSON")
    g.add_argument("--preset", default="paper-5.2")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(fn=cmd_gen)

    for name, fn, hlp in (("run", cmd_run, "run replications of one solver"),
                          ("compare", cmd_compare, "regularized versus unregularized"),
                          ("validate", cmd_validate, "check schedules and the graph")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("config", nargs="?", help="TOML or JSON experiment config")
        s.add_argument("--config", dest="config_opt", help="same as the positional config")
        s.add_argument("--graph", choices=sorted(GRAPH_KINDS), help="override the graph block")
        s.add_argument("--p", type=float, help="edge probability for --graph er")
        s.add_argument("--graph-seed", type=int)
        s.add_argument("--out")
        s.add_argument("--horizon", type=int)
        s.add_argument("--replications", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--master-seed", dest="master_seed", type=int)
        if name == "validate":
            s.add_argument("--graph-horizon", type=int)
            s.add_argument("--strict", action="store_true", help="exit 2 when a check fails")
        s.set_defaults(fn=fn)

    pl = sub.add_parser("plot", help="log-scale plots from trace CSVs")
    pl.add_argument("traces", nargs="*")
    pl.add_argument("--trace", dest="trace_opt", action="append", default=[], help="trace CSV (repeatable)")
    pl.add_argument("--out")
    pl.add_argument("--metrics", nargs="*")
    pl.add_argument("--format", default="png", choices=("png", "svg", "pdf"))
    pl.set_defaults(fn=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "config_opt", None):
        args.config = args.config_opt
    try:
        return args.fn(args)
    except AggsolveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
