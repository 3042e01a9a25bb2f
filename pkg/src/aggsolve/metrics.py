"""Diagnostics: gap functions, residuals, consensus error and run traces."""
from __future__ import annotations

import csv
import itertools
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import optimize

from . import game as gm
from .errors import ConfigurationError, UnsupportedOperationError

TRACE_SCHEMA = "aggsolve-trace/1"
GRID_DIM_CAP = 6
SUBSET_ENUM_CAP = 16


# ---------------------------------------------------------------------------
# Traces


@dataclass
class RunTrace:
    """Recorded metrics of one run plus final state and resolved configuration."""

    ks: list = field(default_factory=list)
    columns: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    x_final: Optional[np.ndarray] = None
    xhat: Optional[np.ndarray] = None
    v_final: Optional[np.ndarray] = None
    max_drift: float = 0.0
    snapshots: dict = field(default_factory=dict)

    def add(self, k, **values):
        n = len(self.ks)
        self.ks.append(int(k))
        for name, val in values.items():
            col = self.columns.setdefault(name, [np.nan] * n)
            col.append(float(val))
        for name, col in self.columns.items():
            if len(col) < n + 1:
                col.append(np.nan)

    def column(self, name):
        if name not in self.columns:
            raise KeyError(f"trace has no column {name!r}; available: {sorted(self.columns)}")
        return np.asarray(self.columns[name], dtype=float)

    def __getitem__(self, name):
        if name == "k":
            return np.asarray(self.ks)
        return self.column(name)

    def equals(self, other):
        """Bitwise equality of recorded values and final iterates."""
        if self.ks != other.ks or set(self.columns) != set(other.columns):
            return False
        for name in self.columns:
            if not np.array_equal(self.column(name), other.column(name), equal_nan=True):
                return False
        return np.array_equal(self.x_final, other.x_final)

    def to_csv(self, path):
        """Write ``path`` (CSV) and a JSON sidecar with config and final state."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = list(self.columns)
        with open(path, "w", newline="") as fh:
            fh.write(f"# {TRACE_SCHEMA}\n")
            w = csv.writer(fh)
            w.writerow(["k"] + names)
            for row, k in enumerate(self.ks):
                w.writerow([int(k)] + [repr(float(self.columns[n][row])) for n in names])
        side = {
            "schema": TRACE_SCHEMA,
            "config": self.config,
            "max_drift": self.max_drift,
            "x_final": None if self.x_final is None else np.asarray(self.x_final).tolist(),
            "xhat": None if self.xhat is None else np.asarray(self.xhat).tolist(),
        }
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, default=_json_default))
        return path

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        with open(path, newline="") as fh:
            first = fh.readline().strip()
            if first != f"# {TRACE_SCHEMA}":
                raise ConfigurationError(f"{path} is not a {TRACE_SCHEMA} trace (header {first!r})")
            rows = list(csv.reader(fh))
        if not rows or not rows[0] or rows[0][0] != "k":
            raise ConfigurationError(f"{path}: expected a header starting with 'k'")
        header, body = rows[0], rows[1:]
        tr = cls()
        try:
            for line, r in enumerate(body, start=3):
                if len(r) != len(header):
                    raise ConfigurationError(
                        f"{path}:{line}: {len(r)} fields, header {header} has {len(header)}")
            tr.ks = [int(r[0]) for r in body]
            tr.columns = {name: [float(r[j + 1]) for r in body] for j, name in enumerate(header[1:])}
        except ValueError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
        side = path.with_suffix(".json")
        if side.exists():
            meta = json.loads(side.read_text())
            tr.config = meta.get("config", {})
            tr.max_drift = meta.get("max_drift", 0.0)
            if meta.get("x_final") is not None:
                tr.x_final = np.asarray(meta["x_final"])
            if meta.get("xhat") is not None:
                tr.xhat = np.asarray(meta["xhat"])
        return tr


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return str(obj)


class TimeAverage:
    """Running ``sum_p w_p x_p / sum_p w_p``."""

    def __init__(self, dim):
        self.total = np.zeros(dim)
        self.weight = 0.0

    def update(self, x, w):
        self.total += w * np.asarray(x, dtype=float)
        self.weight += w

    @property
    def value(self):
        if self.weight == 0.0:
            raise ConfigurationError("time average is empty")
        return self.total / self.weight


def time_average(xs, weights):
    xs = np.asarray(xs, dtype=float)
    w = np.asarray(weights, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
        return float((w @ xs)[0] / w.sum())
    return (w @ xs) / w.sum()


# ---------------------------------------------------------------------------
# Residuals and consensus


def consensus_error(v):
    """``||v - 1 (x) mean_i v_i||`` for stacked estimates ``v`` of shape ``(N, m)``."""
    if hasattr(v, "v"):
        v = v.v
    V = np.asarray(v, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    return float(np.linalg.norm(V - V.mean(axis=0)))


def residual_metric(game, x, x0=None):
    """``||x - Pi_X(x - phi(x))||``, divided by its value at ``x0`` when given."""
    x = game.join(game.split(x))
    r = float(np.linalg.norm(x - game.project(x - gm.phi(game, x))))
    if x0 is None:
        return r
    r0 = residual_metric(game, x0)
    return r / r0 if r0 > 0 else r


# ---------------------------------------------------------------------------
# Gap function


@dataclass
class GapResult:
    value: float
    upper: Optional[float]
    method: str
    argmax: Optional[np.ndarray] = None
    tolerance: Optional[float] = None

    def __float__(self):
        return self.value


def _joint_bounds(game):
    sets = game.feasible_sets()
    if sets is None:
        raise UnsupportedOperationError("gap needs indicator terms on every player")
    los, his = [], []
    for s in sets:
        b = s.bounds()
        if b is None:
            raise ConfigurationError("gap needs bounded strategy sets")
        los.append(b[0])
        his.append(b[1])
    return np.concatenate(los), np.concatenate(his)


def _phi_batch(game, Y):
    aff = game.affine_phi()
    if aff is not None:
        P, c = aff
        return Y @ P.T + c
    return np.array([gm.phi(game, y) for y in Y])


def _project_batch(game, Y):
    if all(isinstance(p.nonsmooth, gm.Indicator) and type(p.nonsmooth.set) is gm.Box
           for p in game.players):
        lo, hi = _joint_bounds(game)
        return np.clip(Y, lo, hi)
    return np.array([game.project(y) for y in Y])


def _phi_lipschitz(game, lo, hi, rng):
    aff = game.affine_phi()
    if aff is not None:
        return float(np.linalg.norm(aff[0], 2))
    rep = gm.check_monotone(game, n_pairs=200, rng=rng)
    return 1.25 * rep.max_lipschitz_ratio


def grid_points(game, n_per_axis=None, max_points=400_000):
    lo, hi = _joint_bounds(game)
    dim = lo.size
    if dim > GRID_DIM_CAP:
        raise UnsupportedOperationError(f"grid gap refused above dimension {GRID_DIM_CAP} (got {dim})")
    if n_per_axis is None:
        n_per_axis = max(2, int(np.floor(max_points ** (1.0 / dim))))
    axes = [np.linspace(a, b, n_per_axis) for a, b in zip(lo, hi)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    spacing = float(np.max((hi - lo) / (n_per_axis - 1)))
    return _project_batch(game, mesh), spacing


def gap_grid(game, x, n_per_axis=None, max_points=400_000, rng=0):
    """Grid search for ``sup_y (x - y)^T phi(y)`` with a Lipschitz upper bound."""
    x = game.join(game.split(x))
    Y, h = grid_points(game, n_per_axis, max_points)
    Phi = _phi_batch(game, Y)
    vals = np.einsum("ij,ij->i", x - Y, Phi)
    j = int(np.argmax(vals))
    lo, hi = _joint_bounds(game)
    L_phi = _phi_lipschitz(game, lo, hi, rng)
    diam = float(np.linalg.norm(hi - lo))
    phi_max = float(np.max(np.linalg.norm(Phi, axis=1)))
    radius = h * np.sqrt(x.size) / 2.0
    lip = phi_max + L_phi * radius + L_phi * (np.linalg.norm(x - Y, axis=1).max() + radius)
    tol = lip * radius
    best = max(float(vals[j]), 0.0)
    return GapResult(best, best + tol, "grid", Y[j].copy(), tol)


def _ascent(game, x, y0, P=None, c=None, max_iter=2000, tol=1e-12):
    """Accelerated projected ascent on ``y -> (x - y)^T phi(y)``."""
    if P is not None:
        L = float(np.linalg.norm(P + P.T, 2)) or 1.0

        def val(y):
            return float((x - y) @ (P @ y + c))

        def grad(y):
            return P.T @ (x - y) - (P @ y + c)
    else:
        L = None

        def val(y):
            return float((x - y) @ gm.phi(game, y))

        def grad(y):
            f0 = val(y)
            g = np.empty_like(y)
            step = 1e-6
            for j in range(y.size):
                e = np.zeros_like(y)
                e[j] = step
                g[j] = (val(y + e) - f0) / step
            return g

    y = game.project(y0)
    fy = val(y)
    z = y.copy()
    t = 1.0
    step = 1.0 / L if L else 1e-2
    for _ in range(max_iter):
        y_new = game.project(z + step * grad(z))
        f_new = val(y_new)
        if f_new < fy - 1e-15 * (1.0 + abs(fy)):
            if t == 1.0:
                step *= 0.5
                if step < 1e-12:
                    break
            t = 1.0
            z = y.copy()
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = y_new + ((t - 1.0) / t_new) * (y_new - y)
        moved = float(np.linalg.norm(y_new - y))
        y, fy, t = y_new, f_new, t_new
        if moved <= tol * (1.0 + np.linalg.norm(y)):
            break
    best, best_y = fy, y
    return best, best_y


def gap_multistart(game, x, n_starts=32, rng=0, max_iter=2000):
    """Best of projected ascents from ``x`` and ``n_starts`` random feasible points (lower bound)."""
    rng = np.random.default_rng(rng)
    x = game.join(game.split(x))
    aff = game.affine_phi()
    P, c = aff if aff is not None else (None, None)
    starts = [x] + list(gm.sample_joint(game, rng, n_starts))
    best, arg = -np.inf, None
    for y0 in starts:
        v, y = _ascent(game, x, y0, P, c, max_iter=max_iter)
        if v > best:
            best, arg = v, y
    return GapResult(max(best, 0.0), None, "multistart", arg)


def gap(game, x, method="multistart", **kw):
    """Lower bound on ``G(x) = sup_{y in X} (x - y)^T phi(y)``."""
    if method == "grid":
        return gap_grid(game, x, **kw)
    if method in ("multistart", "multistart-ascent"):
        return gap_multistart(game, x, **kw)
    raise ConfigurationError(f"unknown gap method {method!r}")


# ---------------------------------------------------------------------------
# Hierarchical diagnostics


def _support(g0, D, hvec):
    s = float(g0 @ hvec)
    if D.size:
        s += float(np.sum(np.maximum(0.0, D.T @ hvec)))
    return s


def _hier_inner(game, hier, x_blocks, y_blocks, phi_y):
    total = 0.0
    o = game.offsets
    for i, (xb, yb) in enumerate(zip(x_blocks, y_blocks)):
        diff = xb - yb
        total += float(diff @ phi_y[o[i]:o[i + 1]])
        term = hier[i] if hier is not None else None
        if term is not None:
            g0, D = term.subdifferential(yb)
            total += _support(g0, D, diff)
    return total


def gap_hierarchical(game, hier, x, method="grid", n_per_axis=None, max_points=200_000,
                     n_starts=32, rng=0):
    """Lower bound on ``sup_{y} (x - y)^T phi(y) + sup_{g in subdiff d(y)} g^T (x - y)``.

    Subdifferentials come from each term's zonotope description, so the inner
    supremum over subgradient selections is evaluated exactly at every probe.
    """
    x = game.join(game.split(x))
    xb = game.split(x)
    for term in hier or []:
        if term is not None and not term.has_subdifferential:
            warnings.warn("hierarchical term without a subdifferential oracle; "
                          "using a single selection", stacklevel=2)
    if method == "grid":
        Y, _ = grid_points(game, n_per_axis, max_points)
    elif method in ("multistart", "multistart-ascent"):
        rng = np.random.default_rng(rng)
        Y = np.vstack([x[None, :], gm.sample_joint(game, rng, max(n_starts, 1) * 64)])
    else:
        raise ConfigurationError(f"unknown gap method {method!r}")
    Phi = _phi_batch(game, Y)
    best, arg = -np.inf, None
    for y, ph in zip(Y, Phi):
        v = _hier_inner(game, hier, xb, game.split(y), ph)
        if v > best:
            best, arg = v, y
    return GapResult(max(best, 0.0), None, method, arg)


def _player_M(xb, ph, g0, D, proj):
    """``min_theta ||x - Pi(x - (phi + g0 + D theta))||^2`` over ``theta in [0,1]^T``."""

    def f(theta):
        g = g0 + (D @ theta if D.size else 0.0)
        r = xb - proj(xb - (ph + g))
        return float(r @ r)

    T = D.shape[1] if D.size else 0
    if T == 0:
        return f(np.zeros(0))
    if T <= SUBSET_ENUM_CAP:
        best_val, best_theta = np.inf, None
        for bits in itertools.product((0.0, 1.0), repeat=T):
            th = np.array(bits)
            v = f(th)
            if v < best_val:
                best_val, best_theta = v, th
    else:
        warnings.warn(f"{2**T} subgradient selections exceed the enumeration cap; "
                      "using coordinatewise greedy search", stacklevel=3)
        best_theta = np.full(T, 0.5)
        best_val = f(best_theta)
        for _ in range(3):
            for j in range(T):
                for cand in (0.0, 0.5, 1.0):
                    th = best_theta.copy()
                    th[j] = cand
                    v = f(th)
                    if v < best_val:
                        best_val, best_theta = v, th
    res = optimize.minimize(f, best_theta, method="L-BFGS-B", bounds=[(0.0, 1.0)] * T,
                            options={"ftol": 1e-15, "gtol": 1e-12})
    # exact when the projection is inactive: bounded least squares on phi + g
    ls = optimize.lsq_linear(D, -(ph + g0), bounds=(0.0, 1.0))
    return min(best_val, float(res.fun), f(ls.x))


def hierarchical_residual_M(game, hier, x):
    """``min_{g in prod subdiff d_i(x_i)} ||x - Pi_X[x - (phi(x) + g)]||``.

    The objective separates across players, so each block is minimized on its own.
    """
    x = game.join(game.split(x))
    ph = gm.phi(game, x)
    o = game.offsets
    total = 0.0
    for i, (xb, p) in enumerate(zip(game.split(x), game.players)):
        if not isinstance(p.nonsmooth, gm.Indicator):
            raise UnsupportedOperationError("hierarchical residual needs indicator terms")
        term = hier[i] if hier is not None else None
        if term is None:
            g0, D = np.zeros(p.dim), np.zeros((p.dim, 0))
        else:
            g0, D = term.subdifferential(xb)
        total += _player_M(xb, ph[o[i]:o[i + 1]], g0, D, p.nonsmooth.set.project)
    return float(np.sqrt(total))


def log_slope(ks, values):
    """Least-squares slope of ``log values`` against ``log ks``."""
    ks = np.asarray(ks, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = (ks > 0) & (v > 0) & np.isfinite(v)
    if keep.sum() < 2:
        return np.nan
    return float(np.polyfit(np.log(ks[keep]), np.log(v[keep]), 1)[0])
