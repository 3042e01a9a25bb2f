"""Replicated experiments, regularization comparisons and result files."""
from __future__ import annotations

import copy
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cournot as cn
from . import game as gm
from . import metrics as mt
from . import network as nw
from . import rng as rngmod
from . import schedules as sc
from .errors import AggsolveError, ConfigurationError
from .hierarchical import run_algorithm2
from .tikhonov import RunConfig, run_algorithm1

SOLVERS = ("tikhonov", "hierarchical", "unregularized")
DEFAULT_SCHEDULE = {"a": 0.8, "b": 0.05, "lambda": "uniform(4,5)", "delta": "uniform(2,3)"}


def load_config(path):
    """Read a TOML or JSON experiment config."""
    path = Path(path)
    text = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            return tomllib.loads(text.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Config resolution


def _load_game(game_cfg, base_dir=None):
    """``(game, hier_terms, graph_default)`` from a preset or a game file."""
    if "preset" in game_cfg:
        game, graph, hier, _ = cn.preset(game_cfg["preset"], int(game_cfg.get("seed", 0)))
        return game, hier, graph
    if "file" in game_cfg:
        p = Path(game_cfg["file"])
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        if not p.exists():
            raise ConfigurationError(f"game file {p} not found")
        spec = json.loads(p.read_text())
    elif "inline" in game_cfg:
        spec = game_cfg["inline"]
    else:
        raise ConfigurationError("game block needs 'preset', 'file' or 'inline'")
    graph = nw.GraphSchedule.from_dict(spec["graph"]) if "graph" in spec else None
    return gm.game_from_dict(spec), cn.hier_terms_from_dict(spec), graph


def _build_graph(graph_cfg, n, default):
    if not graph_cfg:
        if default is None:
            raise ConfigurationError("no graph block and the game source has no default graph")
        return default
    kind = graph_cfg.get("kind", "erdos_renyi")
    spec = dict(graph_cfg, kind=kind)
    spec.setdefault("n", n)
    if spec["n"] != n:
        raise ConfigurationError(f"graph has {spec['n']} nodes, game has {n} players")
    return nw.GraphSchedule.from_dict(spec)


def resolve_config(cfg, base_dir=None):
    """Fill defaults and draw random schedule offsets so the result replays exactly."""
    cfg = copy.deepcopy(cfg)
    run = cfg.setdefault("run", {})
    run.setdefault("solver", "tikhonov")
    if run["solver"] not in SOLVERS:
        raise ConfigurationError(f"unknown solver {run['solver']!r}; choose from {SOLVERS}")
    run.setdefault("horizon", 10_000)
    run.setdefault("replications", 20)
    run.setdefault("record_every", max(1, run["horizon"] // 100))
    run.setdefault("master_seed", 0)
    run.setdefault("metrics", ["consensus_error", "relative_residual"]
                   if run["solver"] != "hierarchical" else ["consensus_error", "relative_M"])
    if int(run["replications"]) < 1:
        raise ConfigurationError("replications must be at least 1")
    game, hier, graph_default = _load_game(cfg.get("game", {}), base_dir)
    graph = _build_graph(cfg.get("graph"), game.n_players, graph_default)
    cfg["graph"] = graph.to_dict()
    sched = dict(DEFAULT_SCHEDULE)
    sched.update(cfg.get("schedule", {}))
    init_rng = rngmod.player_stream(run["master_seed"], 0, rngmod.INIT)
    n = game.n_players
    sched["lambda"] = sc.parse_offsets(sched["lambda"], n, init_rng).tolist()
    sched["delta"] = sc.parse_offsets(sched["delta"], n, init_rng).tolist()
    if run["solver"] == "hierarchical":
        sched.setdefault("mu0", 1.0)
        sched.setdefault("d", 0.24)
    cfg["schedule"] = sched
    return cfg


@dataclass
class Prepared:
    game: object
    graph: object
    params: object
    hier: object
    run_cfg: RunConfig
    solver: str


def prepare(resolved, base_dir=None, seed=0):
    game, hier, _ = _load_game(resolved["game"], base_dir)
    graph = nw.GraphSchedule.from_dict(resolved["graph"])
    run = resolved["run"]
    sched = dict(resolved["schedule"])
    if run["solver"] == "unregularized":
        sched["regularized"] = False
    params = sc.ParamSchedules.from_config(sched, game.n_players)
    run_cfg = RunConfig(
        horizon=int(run["horizon"]), record_every=int(run["record_every"]),
        metrics=tuple(run["metrics"]), seed=seed, noise_free=bool(run.get("noise_free", False)),
        checkpoints=tuple(run.get("checkpoints", ())), gap_method=run.get("gap_method", "multistart"),
        gap_options=dict(run.get("gap_options", {})), engine=run.get("engine", "auto"),
    )
    return Prepared(game, graph, params, hier, run_cfg, run["solver"])


def schedule_report(resolved, n):
    sched = dict(resolved["schedule"])
    params = sc.ParamSchedules.from_config(sched, n)
    out = {}
    for name, fn in (("basic", sc.validate_basic), ("corollary1", sc.validate_corollary1)):
        rep = fn(params)
        out[name] = {"ok": rep.ok, "violations": rep.violations, "info": rep.info}
    if params.mu is not None:
        rep = sc.validate_hierarchical(params)
        out["hierarchical"] = {"ok": rep.ok, "violations": rep.violations, "info": _jsonable(rep.info)}
    return out


def _jsonable(d):
    return json.loads(json.dumps(d, default=mt._json_default, allow_nan=True))


# ---------------------------------------------------------------------------
# Running


def run_replication(resolved, r, base_dir=None):
    """One replication; returns ``(trace, error_message_or_None)``."""
    seed = rngmod.replication_seed(resolved["run"]["master_seed"], r)
    try:
        prep = prepare(resolved, base_dir, seed)
        if prep.solver == "hierarchical":
            if prep.hier is None:
                raise ConfigurationError("hierarchical solver needs a game with hierarchical terms")
            trace = run_algorithm2(prep.game, prep.hier, prep.graph, prep.params, prep.run_cfg,
                                   waive_validation=bool(resolved["run"].get("waive_validation", True)))
        else:
            trace = run_algorithm1(prep.game, prep.graph, prep.params, prep.run_cfg)
        trace.config["replication"] = r
        trace.config["replication_seed"] = seed
        return trace, None
    except AggsolveError as exc:
        return None, f"{type(exc).__name__}: {exc}"
    except Exception:  # keep other replications alive, record the failure
        return None, traceback.format_exc(limit=3)


def _worker(args):
    resolved, r, base_dir = args
    return run_replication(resolved, r, base_dir)


@dataclass
class ExperimentResult:
    traces: list
    summary: dict
    out_dir: object = None
    averaged: dict = field(default_factory=dict)


def average_traces(traces):
    """Mean of each metric column over traces sharing the same record points."""
    traces = [t for t in traces if t is not None]
    if not traces:
        return [], {}
    ks = traces[0].ks
    for t in traces[1:]:
        if t.ks != ks:
            raise ConfigurationError("traces have different record points")
    cols = {}
    for name in traces[0].columns:
        cols[name] = np.mean(np.vstack([t.column(name) for t in traces]), axis=0)
    return ks, cols


def decay_slopes(ks, cols):
    """Log-log slope over the last recorded decade for each metric."""
    ks = np.asarray(ks, dtype=float)
    if ks.size < 2:
        return {}
    lo = ks[-1] / 10.0
    keep = ks >= lo
    return {name: mt.log_slope(ks[keep], vals[keep]) for name, vals in cols.items()}


def _expected_gap_slope(sched):
    """``-min(b, 1 - a)`` from the gap-rate bound; ``None`` without regularization."""
    if sched.get("regularized", True) is False or not sched.get("b"):
        return None
    return -min(float(sched["b"]), 1.0 - float(sched["a"]))


def run_experiment(cfg, out_dir=None, workers=None, base_dir=None, write=True):
    """Run all replications, write per-run CSVs, the averaged CSV and ``summary.json``."""
    resolved = cfg if cfg.get("_resolved") else resolve_config(cfg, base_dir)
    resolved["_resolved"] = True
    run = resolved["run"]
    R = int(run["replications"])
    workers = int(run.get("workers", 1) if workers is None else workers)
    jobs = [(resolved, r, base_dir) for r in range(R)]
    if workers > 1 and R > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = [_worker(j) for j in jobs]
    traces = [t for t, _ in results]
    errors = {r: e for r, (_, e) in enumerate(results) if e is not None}
    ks, avg = average_traces(traces)
    game, _, _ = _load_game(resolved["game"], base_dir)
    summary = {
        "replications": R,
        "completed": R - len(errors),
        "partial": bool(errors),
        "errors": errors,
        "solver": run["solver"],
        "final": {name: float(v[-1]) for name, v in avg.items()},
        "slopes": decay_slopes(ks, avg),
        "expected_gap_slope": _expected_gap_slope(resolved["schedule"]),
        "schedule_validation": schedule_report(resolved, game.n_players),
        "max_drift": max((t.max_drift for t in traces if t is not None), default=None),
    }
    summary = _jsonable(summary)
    if write:
        out = Path(out_dir if out_dir is not None else run.get("output", "aggsolve-out"))
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.json").write_text(json.dumps(resolved, indent=2, default=mt._json_default))
        for r, t in enumerate(traces):
            if t is not None:
                t.to_csv(out / f"run_{r:03d}.csv")
        if avg:
            avg_trace = mt.RunTrace(ks=list(ks), columns={k: list(v) for k, v in avg.items()},
                                    config={"averaged_over": R - len(errors)})
            avg_trace.to_csv(out / "averaged.csv")
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
        out_dir = out
    return ExperimentResult(traces, summary, out_dir, {"ks": ks, **avg})


def compare_regularization(cfg, out_dir=None, workers=None, base_dir=None, write=True):
    """Regularized arm versus the ``eta == 0`` arm with identical seeds, graphs and offsets."""
    resolved = resolve_config(cfg, base_dir)
    if resolved["run"]["solver"] == "hierarchical":
        raise ConfigurationError("regularization comparison runs the non-hierarchical solver")
    arms = {}
    for arm, solver in (("regularized", "tikhonov"), ("unregularized", "unregularized")):
        rc = copy.deepcopy(resolved)
        rc["run"]["solver"] = solver
        rc["_resolved"] = True
        sub = None if out_dir is None else Path(out_dir) / arm
        arms[arm] = run_experiment(rc, sub, workers, base_dir, write=write and out_dir is not None)
    ks = arms["regularized"].averaged.get("ks", [])
    table = []
    reg, unreg = arms["regularized"].averaged, arms["unregularized"].averaged
    for j, k in enumerate(ks):
        row = {"k": int(k)}
        for name in reg:
            if name == "ks":
                continue
            a, b = float(reg[name][j]), float(unreg[name][j])
            row[f"{name}_reg"] = a
            row[f"{name}_unreg"] = b
            row[f"{name}_ratio"] = a / b if b != 0 else float("nan")
        table.append(row)
    summary = {"regularized": arms["regularized"].summary,
               "unregularized": arms["unregularized"].summary, "table": table}
    summary = _jsonable(summary)
    if write and out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "comparison.json").write_text(json.dumps(summary, indent=2))
    return arms, summary
