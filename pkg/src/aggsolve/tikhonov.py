"""Distributed iterative Tikhonov proximal stochastic gradient method.

Each iteration runs three steps:

* consensus: ``v_hat = W_k v``
* strategy:  ``x_i+ = prox_{alpha r_i}(x_i - alpha (q_i(x_i, N v_hat_i) + eta x_i))``
* average:   ``v_i+ = v_hat_i + h_i(x_i+) - h_i(x_i)``

Starting from ``v_{i,0} = h_i(x_{i,0})`` the sum of the ``v_i`` equals the true
aggregate at every iteration; the loop checks this and aborts on drift.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import game as gm
from . import kernels
from . import metrics as mt
from . import rng as rngmod
from .errors import AggsolveError, ConfigurationError, NumericError

DEFAULT_METRICS = ("consensus_error", "residual")
KNOWN_METRICS = {
    "consensus_error", "residual", "relative_residual", "gap", "gap_x", "xnorm",
    "xhat_norm", "drift", "M", "relative_M", "gap_d",
}


@dataclass
class RunConfig:
    """Run plumbing.

    Attributes:
        horizon: number of iterations ``K``.
        record_every: metrics are recorded at multiples of this (and at ``checkpoints``).
        metrics: names of metrics to record.
        seed: replication seed for the per-player random streams.
        noise_free: use ``F_i`` in place of the stochastic oracle.
        checkpoints: extra iteration counts at which metrics are recorded.
        workers: threads for the per-player updates (``0`` or ``1`` runs serially).
        record_x: keep ``x_k`` at every recorded ``k`` in ``trace.snapshots``.
        engine: ``"auto"`` uses the compiled loop for eligible linear games,
            ``"generic"`` forces the per-player Python loop, ``"fast"`` requires the compiled one.
    """

    horizon: int
    record_every: int = 100
    metrics: tuple = DEFAULT_METRICS
    seed: int = 0
    noise_free: bool = False
    x0: Optional[np.ndarray] = None
    checkpoints: tuple = ()
    workers: int = 0
    record_x: bool = False
    record_initial: bool = False
    conservation_factor: float = 1e-6
    gap_method: str = "multistart"
    gap_options: dict = field(default_factory=dict)
    engine: str = "auto"

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigurationError("horizon must be at least 1")
        if self.record_every < 1:
            raise ConfigurationError("record_every must be at least 1")
        unknown = set(self.metrics) - KNOWN_METRICS
        if unknown:
            raise ConfigurationError(f"unknown metrics {sorted(unknown)}; known: {sorted(KNOWN_METRICS)}")

    def record_points(self):
        pts = set(range(self.record_every, self.horizon + 1, self.record_every))
        pts.update(int(c) for c in self.checkpoints if 0 < c <= self.horizon)
        pts.add(self.horizon)
        if self.record_initial:
            pts.add(0)
        return pts

    def snapshot(self):
        d = asdict(self)
        d["x0"] = None if self.x0 is None else np.asarray(self.x0).tolist()
        d["metrics"] = list(self.metrics)
        d["checkpoints"] = list(self.checkpoints)
        return d


@dataclass
class SolverState:
    k: int
    x: list
    v: np.ndarray
    v_hat: np.ndarray
    h: np.ndarray
    rng_streams: list

    @property
    def x_joint(self):
        return np.concatenate(self.x)


def consensus_step(W, v):
    """``v_hat_i = sum_j W_ij v_j`` for stacked ``v`` of shape ``(N, m)`` (or a list of blocks)."""
    V = np.asarray(v, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    W = np.asarray(W, dtype=float)
    if W.shape != (V.shape[0], V.shape[0]):
        raise ConfigurationError(f"weight matrix {W.shape} does not match {V.shape[0]} estimates")
    return W @ V


def strategy_step(player, x_i, v_hat_i, alpha, eta, rng, n_players, noise_free=False, extra=None):
    """Prox step on ``q_i(x_i, N v_hat_i) + eta x_i`` (plus an optional extra gradient)."""
    if not alpha > 0:
        raise ConfigurationError("steplength must be positive")
    if eta < 0:
        raise ConfigurationError("regularization must be nonnegative")
    q = player.gradient(x_i, n_players * v_hat_i, rng, noise_free)
    if extra is not None:
        q = q + extra
    return player.nonsmooth.prox(x_i - alpha * (q + eta * x_i), alpha)


def average_step(player, v_hat_i, x_i, x_new, h_old=None):
    h_old = player.h(x_i) if h_old is None else h_old
    return v_hat_i + player.h(x_new) - h_old


class _MetricBook:
    """Evaluates requested metrics at recorded iterations."""

    def __init__(self, game, cfg, hier, x0):
        self.game = game
        self.cfg = cfg
        self.hier = hier
        self.names = tuple(cfg.metrics)
        self.res0 = None
        self.M0 = None
        if "relative_residual" in self.names:
            self.res0 = mt.residual_metric(game, x0)
        if "relative_M" in self.names:
            self.M0 = mt.hierarchical_residual_M(game, hier, x0)

    def evaluate(self, x, xhat, V, drift):
        g = self.game
        out = {}
        for name in self.names:
            if name == "consensus_error":
                out[name] = mt.consensus_error(V)
            elif name == "residual":
                out[name] = mt.residual_metric(g, x)
            elif name == "relative_residual":
                r = mt.residual_metric(g, x)
                out[name] = r / self.res0 if self.res0 > 0 else r
            elif name == "gap":
                out[name] = np.nan if xhat is None else mt.gap(
                    g, xhat, self.cfg.gap_method, **self.cfg.gap_options).value
            elif name == "gap_x":
                out[name] = mt.gap(g, x, self.cfg.gap_method, **self.cfg.gap_options).value
            elif name == "xnorm":
                out[name] = float(np.linalg.norm(x))
            elif name == "xhat_norm":
                out[name] = np.nan if xhat is None else float(np.linalg.norm(xhat))
            elif name == "drift":
                out[name] = drift
            elif name == "M":
                out[name] = mt.hierarchical_residual_M(g, self.hier, x)
            elif name == "relative_M":
                Mv = mt.hierarchical_residual_M(g, self.hier, x)
                out[name] = Mv / self.M0 if self.M0 > 0 else Mv
            elif name == "gap_d":
                out[name] = np.nan if xhat is None else mt.gap_hierarchical(
                    g, self.hier, xhat, self.cfg.gap_method, **self.cfg.gap_options).value
        return out


def _initial_point(game, cfg):
    if cfg.x0 is not None:
        blocks = game.split(np.asarray(cfg.x0, dtype=float))
        return [b.copy() for b in blocks]
    return [p.initial_point() for p in game.players]


@dataclass
class LinearPack:
    """Flattened player data for the compiled linear-game loop."""

    offs: np.ndarray
    koffs: np.ndarray
    Pf: np.ndarray
    Pofs: np.ndarray
    Cf: np.ndarray
    Cofs: np.ndarray
    Af: np.ndarray
    Aofs: np.ndarray
    cvec: np.ndarray
    Lf: np.ndarray
    Lofs: np.ndarray
    set_kind: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    l1w: np.ndarray


def linear_pack(game):
    """Pack a game for the fast path, or ``None`` if some player is not eligible.

    Eligible players have linear structure, an optional :class:`~aggsolve.game.NoiseModel`
    and a box, ball, balanced-capacity or L1 term.
    """
    N = game.n_players
    m = game.agg_dim
    o = game.offsets
    lo = np.zeros(game.total_dim)
    hi = np.zeros(game.total_dim)
    l1w = np.zeros(N)
    kinds = np.zeros(N, dtype=np.int32)
    Ps, Cs, As, Ls, cs, kdims = [], [], [], [], [], []
    for i, p in enumerate(game.players):
        lin = p.linear
        if lin is None:
            return None
        term = p.nonsmooth
        sl = slice(o[i], o[i + 1])
        if isinstance(term, gm.Indicator) and type(term.set) is gm.Box:
            kinds[i] = 0
            lo[sl], hi[sl] = term.set.lower, term.set.upper
        elif isinstance(term, gm.Indicator) and type(term.set) is gm.BalancedCapacitySet:
            kinds[i] = 1
            hi[o[i]:o[i] + term.set.n] = term.set.cap
        elif type(term) is gm.L1:
            kinds[i] = 2
            l1w[i] = term.weight
        elif isinstance(term, gm.Indicator) and type(term.set) is gm.Ball:
            kinds[i] = 3
            lo[sl] = term.set.center
            hi[o[i]] = term.set.radius
        else:
            return None
        n = p.dim
        if lin.P.shape != (n, n) or lin.C.shape != (n, m) or lin.A.shape != (m, n):
            return None
        Ps.append(lin.P.ravel())
        Cs.append(lin.C.ravel())
        As.append(lin.A.ravel())
        cs.append(lin.c)
        if p.noise is not None:
            Ls.append(p.noise.L.ravel())
            kdims.append(p.noise.n_variates)
        else:
            Ls.append(np.zeros(0))
            kdims.append(0)

    def cat(arrs):
        return np.ascontiguousarray(np.concatenate(arrs), dtype=float)

    def offsets(arrs):
        return np.concatenate([[0], np.cumsum([a.size for a in arrs])[:-1]]).astype(np.int64)

    return LinearPack(
        offs=o.astype(np.int64), koffs=np.concatenate([[0], np.cumsum(kdims)]).astype(np.int64),
        Pf=cat(Ps), Pofs=offsets(Ps), Cf=cat(Cs), Cofs=offsets(Cs), Af=cat(As), Aofs=offsets(As),
        cvec=cat(cs), Lf=cat(Ls) if sum(kdims) else np.zeros(1), Lofs=offsets(Ls),
        set_kind=kinds, lo=lo, hi=hi, l1w=l1w,
    )


FAST_CHUNK = 4096


@dataclass
class SmoothingPack:
    """Closed-form max-affine hierarchical terms flattened for the compiled loop.

    ``directions(n, start)`` returns the ``(n, total_dim)`` unit directions for
    iterations ``start .. start+n-1`` (zeros for players without a term) and
    ``radii(n, start)`` the matching smoothing radii.
    """

    Yofs: np.ndarray
    HMofs: np.ndarray
    HLf: np.ndarray
    HUf: np.ndarray
    Hl0: np.ndarray
    Hu0: np.ndarray
    Hz: np.ndarray
    directions: Callable
    radii: Callable

    @classmethod
    def empty(cls, n_players):
        z1 = np.zeros(1)
        zi = np.zeros(n_players + 1, dtype=np.int64)
        return cls(zi, zi[:-1].copy(), z1, z1, z1, z1, z1, None, None)


def _run(game, sched, params, cfg, extra: Optional[Callable] = None, hier=None, algorithm="1",
         smoothing: Optional[SmoothingPack] = None):
    """Shared iteration loop.

    ``extra(i, k, x_i)`` may return an additional gradient term for player ``i``
    (the smoothed hierarchical estimator) or ``None``. Linear games run on the
    compiled segment kernel unless ``cfg.engine == "generic"``, provided any extra
    term is also described by ``smoothing``.
    """
    N = game.n_players
    m = game.agg_dim
    if sched.n != N:
        raise ConfigurationError(f"graph has {sched.n} nodes but the game has {N} players")
    if params.n_players != N:
        raise ConfigurationError(f"schedules cover {params.n_players} players, game has {N}")
    players = game.players
    oracle_rngs = rngmod.player_streams(cfg.seed, N, rngmod.ORACLE)
    x = _initial_point(game, cfg)
    H = np.array([np.atleast_1d(p.h(b)) for p, b in zip(players, x)], dtype=float).reshape(N, m)
    V = H.copy()
    avg = mt.TimeAverage(game.total_dim)
    book = _MetricBook(game, cfg, hier, np.concatenate(x))
    record = cfg.record_points()
    pack = None
    if cfg.engine not in ("auto", "fast", "generic"):
        raise ConfigurationError(f"unknown engine {cfg.engine!r}")
    if cfg.engine != "generic" and (extra is None or smoothing is not None) \
            and not (cfg.workers and cfg.workers > 1):
        pack = linear_pack(game)
    if cfg.engine == "fast" and pack is None:
        raise ConfigurationError("fast engine needs linear players, a serial loop and, for hierarchical "
                                 "runs, closed-form max-affine terms")
    hpack = smoothing if smoothing is not None else SmoothingPack.empty(N)
    trace = mt.RunTrace(config={"algorithm": algorithm, "run": cfg.snapshot(),
                                "params": _params_snapshot(params),
                                "graph": _graph_snapshot(sched),
                                "engine": "generic" if pack is None else "fast"})
    state = {"max_drift": 0.0, "drift": 0.0}
    noise_free = cfg.noise_free
    factor = cfg.conservation_factor
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers and cfg.workers > 1 else None

    def update(i, k, alpha_i, eta_i, vhat_i):
        p = players[i]
        xi = x[i]
        try:
            q = p.gradient(xi, N * vhat_i, oracle_rngs[i], noise_free)
            if extra is not None:
                g = extra(i, k, xi)
                if g is not None:
                    q = q + g
            x_new = p.nonsmooth.prox(xi - alpha_i * (q + eta_i * xi), alpha_i)
            h_new = p.h(x_new)
        except AggsolveError:
            raise
        except Exception as exc:
            raise NumericError(f"player {i} update failed at iteration {k}: {exc}",
                               {"player": i, "k": k}) from exc
        return x_new, h_new

    def abort(k, drift, scale):
        raise NumericError(
            f"aggregate conservation violated at iteration {k}: drift {drift:.3e}",
            {"k": k, "drift": drift, "scale": scale, "v": V.tolist(), "h": H.tolist(),
             "x": [np.asarray(b).tolist() for b in x]},
        )

    def advance_generic(k0, k1):
        nonlocal V
        for k in range(k0, k1):
            alpha = params.alpha_at(k)
            eta = params.eta_at(k)
            avg.update(np.concatenate(x), float(alpha.max()))
            V_hat = sched.weights_at(k) @ V
            if pool is None:
                results = [update(i, k, alpha[i], eta[i], V_hat[i]) for i in range(N)]
            else:
                results = list(pool.map(lambda i: update(i, k, alpha[i], eta[i], V_hat[i]), range(N)))
            for i, (x_new, h_new) in enumerate(results):
                V_hat[i] += h_new - H[i]
                H[i] = h_new
                x[i] = x_new
            V = V_hat
            drift = float(np.max(np.abs(V.sum(axis=0) - H.sum(axis=0))))
            state["drift"] = drift
            if not drift <= state["max_drift"]:
                state["max_drift"] = drift
            scale = 1.0 + float(np.max(np.linalg.norm(H, axis=1)))
            # NaN compares false, so test the negation
            if not drift <= factor * N * scale:
                abort(k + 1, drift, scale)

    use_noise = int(not noise_free and pack is not None and pack.koffs[-1] > 0)

    def advance_fast(k0, k1):
        nonlocal V
        xf = np.ascontiguousarray(np.concatenate(x))
        V = np.ascontiguousarray(V)
        scalars = np.array([avg.weight, state["max_drift"], state["drift"]])
        static = sched.is_static
        W0 = np.ascontiguousarray(sched.weights_at(0)[None, :, :]) if static else None
        for c0 in range(k0, k1, FAST_CHUNK):
            c1 = min(k1, c0 + FAST_CHUNK)
            n = c1 - c0
            alpha = np.ascontiguousarray(params.alpha_table(n, start=c0))
            eta = np.ascontiguousarray(params.eta_table(n, start=c0))
            if use_noise:
                cols = [p.noise.variates(oracle_rngs[i], n) if p.noise is not None else np.zeros((n, 0))
                        for i, p in enumerate(players)]
                U = np.ascontiguousarray(np.hstack(cols))
            else:
                U = np.zeros((n, 1))
            if smoothing is not None:
                S = np.ascontiguousarray(smoothing.directions(n, c0))
                mus = np.ascontiguousarray(smoothing.radii(n, c0), dtype=float)
            else:
                S, mus = np.zeros((1, 1)), np.zeros(1)
            if static:
                Ws, w_idx = W0, np.zeros(n, dtype=np.int64)
            else:
                Ws = np.ascontiguousarray(np.stack([sched.weights_at(k) for k in range(c0, c1)]))
                w_idx = np.arange(n, dtype=np.int64)
            status = kernels.run_linear_segment(
                xf, V, H, avg.total, scalars, pack.offs, pack.koffs, pack.Pf, pack.Pofs,
                pack.Cf, pack.Cofs, pack.Af, pack.Aofs, pack.cvec, pack.Lf, pack.Lofs,
                pack.set_kind, pack.lo, pack.hi, pack.l1w, Ws, w_idx, alpha, eta, U,
                use_noise, factor, int(smoothing is not None), hpack.Yofs, hpack.HMofs, hpack.HLf,
                hpack.HUf, hpack.Hl0, hpack.Hu0, hpack.Hz, S, mus)
            avg.weight = float(scalars[0])
            state["max_drift"] = float(scalars[1])
            state["drift"] = float(scalars[2])
            x[:] = [b.copy() for b in game.split(xf)]
            if status >= 0:
                abort(c0 + status + 1, state["drift"], 1.0 + float(np.max(np.linalg.norm(H, axis=1))))

    advance = advance_generic if pack is None else advance_fast
    if 0 in record:
        trace.add(0, **book.evaluate(np.concatenate(x), None, V, 0.0))
        if cfg.record_x:
            trace.snapshots[0] = np.concatenate(x)
    t0 = time.perf_counter()
    k = 0
    try:
        for end in sorted(p for p in record if p > 0):
            advance(k, end)
            k = end
            xj = np.concatenate(x)
            trace.add(k, **book.evaluate(xj, avg.value, V, state["drift"]))
            if cfg.record_x:
                trace.snapshots[k] = xj
    finally:
        if pool is not None:
            pool.shutdown()
    trace.x_final = np.concatenate(x)
    trace.xhat = avg.value
    trace.v_final = V
    trace.max_drift = state["max_drift"]
    trace.config["elapsed_s"] = time.perf_counter() - t0
    return trace


def _params_snapshot(params):
    try:
        return params.to_config()
    except AggsolveError:
        return {"regularized": params.regularized}


def _graph_snapshot(sched):
    try:
        return sched.to_dict()
    except AggsolveError:
        return {"kind": sched.kind, "n": sched.n}


def run_algorithm1(game, sched, params, cfg):
    """Run the distributed Tikhonov scheme and return a :class:`~aggsolve.metrics.RunTrace`.

    Set ``params.regularized = False`` for the unregularized baseline.
    """
    return _run(game, sched, params, cfg, algorithm="1")


def run_centralized(game, params, horizon, x0=None):
    """Reference ``x+ = prox(x - alpha (phi(x) + eta x))`` with per-player steps; returns all iterates."""
    x = game.join([p.initial_point() for p in game.players]) if x0 is None else np.asarray(x0, float)
    o = game.offsets
    out = [x.copy()]
    for k in range(horizon):
        alpha = params.alpha_at(k)
        eta = params.eta_at(k)
        ph = gm.phi(game, x)
        blocks = []
        for i, p in enumerate(game.players):
            xi = x[o[i]:o[i + 1]]
            blocks.append(p.nonsmooth.prox(xi - alpha[i] * (ph[o[i]:o[i + 1]] + eta[i] * xi), alpha[i]))
        x = np.concatenate(blocks)
        out.append(x.copy())
    return np.array(out)
