"""Aggregative game model.

A game is a list of players, each owning a strategy block ``x_i``, a map
``h_i`` contributing to the shared aggregate ``sigma(x) = sum_j h_j(x_j)``, a
(possibly stochastic) gradient oracle for its smooth cost, and a nonsmooth term
handled through its proximal map.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from . import kernels
from .errors import ConfigurationError, NumericError, UnsupportedOperationError

# ---------------------------------------------------------------------------
# Convex sets


class ConvexSet:
    """Closed convex set with a Euclidean projection."""

    dim: int

    def project(self, x):
        raise NotImplementedError

    def contains(self, x, tol=1e-9):
        raise NotImplementedError

    def bounds(self):
        """Axis-aligned bounding box ``(lower, upper)``, or ``None`` if unbounded."""
        return None

    def max_norm(self):
        lo_hi = self.bounds()
        if lo_hi is None:
            return np.inf
        lo, hi = lo_hi
        return float(np.sqrt(np.sum(np.maximum(lo**2, hi**2))))

    def diameter(self):
        lo_hi = self.bounds()
        if lo_hi is None:
            return np.inf
        lo, hi = lo_hi
        return float(np.linalg.norm(hi - lo))

    def sample(self, rng, n=1):
        """Approximately spread points: uniform in the bounding box, then projected."""
        lo_hi = self.bounds()
        if lo_hi is None:
            raise ConfigurationError("cannot sample from an unbounded set")
        lo, hi = lo_hi
        pts = rng.uniform(lo, hi, size=(n, self.dim))
        return np.array([p if self.contains(p) else self.project(p) for p in pts])

    def to_dict(self):
        raise NotImplementedError


class Box(ConvexSet):
    def __init__(self, lower, upper, dim=None):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if dim is None:
            dim = max(lower.size, upper.size)
        self.dim = int(dim)
        self.lower = np.broadcast_to(lower, (self.dim,)).astype(float)
        self.upper = np.broadcast_to(upper, (self.dim,)).astype(float)
        if np.any(self.lower > self.upper):
            raise ConfigurationError("box lower bound exceeds upper bound")

    def project(self, x):
        return kernels.project_box(x, self.lower, self.upper)

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def bounds(self):
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            return None
        return self.lower.copy(), self.upper.copy()

    def to_dict(self):
        return {"type": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}

    def __repr__(self):
        return f"Box(lower={self.lower.tolist()}, upper={self.upper.tolist()})"


class Ball(ConvexSet):
    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        self.dim = self.center.size
        if self.radius < 0:
            raise ConfigurationError("ball radius must be nonnegative")

    def project(self, x):
        return kernels.project_ball(x, self.center, self.radius)

    def contains(self, x, tol=1e-9):
        return bool(np.linalg.norm(np.asarray(x, dtype=float) - self.center) <= self.radius + tol)

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    def max_norm(self):
        return float(np.linalg.norm(self.center) + self.radius)

    def diameter(self):
        return 2.0 * self.radius

    def to_dict(self):
        return {"type": "ball", "center": self.center.tolist(), "radius": self.radius}


class Polyhedron(ConvexSet):
    """``{x : A x <= b, E x == d}``, projected by Dykstra's algorithm."""

    def __init__(self, A=None, b=None, E=None, d=None, dim=None, tol=1e-10, max_iter=10_000):
        if dim is None:
            for M in (A, E):
                if M is not None and np.size(M):
                    dim = np.asarray(M).shape[1]
                    break
        if dim is None:
            raise ConfigurationError("polyhedron needs at least one constraint or an explicit dim")
        self.dim = int(dim)
        self.A = np.zeros((0, self.dim)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.zeros(0) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
        self.E = np.zeros((0, self.dim)) if E is None else np.atleast_2d(np.asarray(E, dtype=float))
        self.d = np.zeros(0) if d is None else np.atleast_1d(np.asarray(d, dtype=float))
        if self.A.shape[0] != self.b.size or self.E.shape[0] != self.d.size:
            raise ConfigurationError("polyhedron constraint shapes do not match")
        self.E_pinv = np.linalg.pinv(self.E) if self.E.shape[0] else np.zeros((self.dim, 0))
        self.tol = tol
        self.max_iter = max_iter
        self._bounds = None

    def project(self, x):
        return self.project_iterative(x)

    def project_iterative(self, x):
        y, iters, err = kernels.dykstra_polyhedron(
            np.asarray(x, dtype=float), self.A, self.b, self.E, self.E_pinv, self.d,
            self.tol, self.max_iter,
        )
        if iters >= self.max_iter and err > 1e3 * self.tol:
            raise NumericError(
                f"polyhedron projection did not converge in {self.max_iter} sweeps",
                {"constraint_violation": err},
            )
        return y

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        ok = True
        if self.A.shape[0]:
            ok = ok and bool(np.all(self.A @ x <= self.b + tol))
        if self.E.shape[0]:
            ok = ok and bool(np.all(np.abs(self.E @ x - self.d) <= tol))
        return ok

    def bounds(self):
        if self._bounds is None:
            lo = np.empty(self.dim)
            hi = np.empty(self.dim)
            A_ub = self.A if self.A.shape[0] else None
            b_ub = self.b if self.A.shape[0] else None
            A_eq = self.E if self.E.shape[0] else None
            b_eq = self.d if self.E.shape[0] else None
            for j in range(self.dim):
                c = np.zeros(self.dim)
                for sign, store in ((1.0, lo), (-1.0, hi)):
                    c[j] = sign
                    res = optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                                           bounds=[(None, None)] * self.dim, method="highs")
                    if res.status == 3:
                        return None
                    if res.status != 0:
                        raise ConfigurationError(f"polyhedron bounding LP failed: {res.message}")
                    store[j] = sign * res.fun
            self._bounds = (lo, hi)
        return self._bounds[0].copy(), self._bounds[1].copy()

    def to_dict(self):
        return {"type": "polyhedron", "A": self.A.tolist(), "b": self.b.tolist(),
                "E": self.E.tolist(), "d": self.d.tolist(), "dim": self.dim}


class BalancedCapacitySet(Polyhedron):
    """``{(g, s) : 0 <= g <= cap, s >= 0, sum(s) == sum(g)}`` with an exact projection.

    This is the production/sales set of a Cournot firm. The generic Dykstra
    route stays available as :meth:`project_iterative`.
    """

    def __init__(self, n, cap):
        self.n = int(n)
        self.cap = np.broadcast_to(np.asarray(cap, dtype=float), (self.n,)).copy()
        if np.any(self.cap <= 0):
            raise ConfigurationError("capacities must be positive")
        eye = np.eye(self.n)
        zero = np.zeros((self.n, self.n))
        A = np.block([[eye, zero], [-eye, zero], [zero, -eye]])
        b = np.concatenate([self.cap, np.zeros(2 * self.n)])
        E = np.concatenate([-np.ones(self.n), np.ones(self.n)])[None, :]
        super().__init__(A, b, E, np.zeros(1))
        total = self.cap.sum()
        self._bounds = (np.zeros(2 * self.n), np.concatenate([self.cap, np.full(self.n, total)]))

    def project(self, x):
        return kernels.project_balanced(x, self.cap)

    def max_norm(self):
        return float(np.sqrt(np.sum(self.cap**2) + self.cap.sum() ** 2))

    def to_dict(self):
        return {"type": "balanced_capacity", "n": self.n, "cap": self.cap.tolist()}


def set_from_dict(spec):
    kind = spec.get("type")
    if kind == "box":
        return Box(spec["lower"], spec["upper"])
    if kind == "ball":
        return Ball(spec["center"], spec["radius"])
    if kind == "polyhedron":
        return Polyhedron(spec.get("A") or None, spec.get("b") or None,
                          spec.get("E") or None, spec.get("d") or None, dim=spec.get("dim"))
    if kind == "balanced_capacity":
        return BalancedCapacitySet(spec["n"], spec["cap"])
    raise ConfigurationError(f"unknown set type {kind!r}")


# ---------------------------------------------------------------------------
# Nonsmooth terms


class NonsmoothTerm:
    """Convex ``r_i`` accessed through ``prox_{alpha r}``."""

    domain: Optional[ConvexSet] = None

    def prox(self, x, alpha):
        raise NotImplementedError

    def value(self, x):
        raise NotImplementedError

    def to_dict(self):
        raise UnsupportedOperationError(f"{type(self).__name__} is not serializable")


class Indicator(NonsmoothTerm):
    def __init__(self, convex_set):
        self.set = convex_set
        self.domain = convex_set

    def prox(self, x, alpha):
        return self.set.project(x)

    def value(self, x):
        return 0.0 if self.set.contains(x) else np.inf

    def to_dict(self):
        return {"type": "indicator", "set": self.set.to_dict()}


class L1(NonsmoothTerm):
    def __init__(self, weight=1.0):
        self.weight = float(weight)
        self.domain = None

    def prox(self, x, alpha):
        return kernels.soft_threshold(x, alpha * self.weight)

    def value(self, x):
        return self.weight * float(np.sum(np.abs(x)))

    def to_dict(self):
        return {"type": "l1", "weight": self.weight}


class CustomProx(NonsmoothTerm):
    """User-supplied prox, or a numerical prox of a user-supplied convex ``value``."""

    def __init__(self, prox=None, value=None, domain=None, max_iter=2000, tol=1e-10):
        if prox is None and value is None:
            raise ConfigurationError("CustomProx needs a prox map or a value function")
        self._prox = prox
        self._value = value
        self.domain = domain
        self.max_iter = max_iter
        self.tol = tol

    def prox(self, x, alpha):
        if self._prox is not None:
            return np.asarray(self._prox(np.asarray(x, dtype=float), alpha), dtype=float)
        x = np.asarray(x, dtype=float)

        def obj(y):
            return self._value(y) + np.sum((y - x) ** 2) / (2.0 * alpha)

        res = optimize.minimize(obj, x, method="Powell",
                                options={"maxiter": self.max_iter, "xtol": self.tol, "ftol": self.tol})
        if not res.success:
            raise NumericError("custom prox did not converge",
                               {"residual": float(res.fun), "message": str(res.message), "nit": res.nit})
        return np.atleast_1d(res.x)

    def value(self, x):
        if self._value is None:
            raise UnsupportedOperationError("custom prox term has no value function")
        return float(self._value(x))


def nonsmooth_from_dict(spec):
    kind = spec.get("type")
    if kind == "indicator":
        return Indicator(set_from_dict(spec["set"]))
    if kind == "l1":
        return L1(spec.get("weight", 1.0))
    raise ConfigurationError(f"unknown nonsmooth term type {kind!r}")


# ---------------------------------------------------------------------------
# Players and games


@dataclass
class NoiseModel:
    """Additive oracle noise ``L u`` with ``u`` iid standard normal or uniform on ``[-1, 1]``.

    One draw consumes ``L.shape[1]`` variates from the player's stream, so blocks of
    draws can be generated at once without changing the sequence.
    """

    kind: str
    L: np.ndarray

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise ConfigurationError(f"unknown noise kind {self.kind!r}")
        self.L = np.atleast_2d(np.asarray(self.L, dtype=float))

    @property
    def n_variates(self):
        return self.L.shape[1]

    def variates(self, rng, n=None):
        size = self.n_variates if n is None else (n, self.n_variates)
        if self.kind == "gaussian":
            return rng.standard_normal(size)
        return rng.uniform(-1.0, 1.0, size)

    def draw(self, rng):
        return self.L @ self.variates(rng)

    @property
    def rms(self):
        """``sqrt(E||L u||^2)``."""
        var = 1.0 if self.kind == "gaussian" else 1.0 / 3.0
        return float(np.sqrt(var * np.sum(self.L**2)))


@dataclass
class LinearStructure:
    """``h(x) = A x`` and ``F(x, z) = P x + C z + c``."""

    A: np.ndarray
    P: np.ndarray
    C: np.ndarray
    c: np.ndarray


@dataclass
class PlayerSpec:
    dim: int
    h: Callable
    nonsmooth: NonsmoothTerm
    mean_grad: Optional[Callable] = None
    grad_oracle: Optional[Callable] = None
    jac_h: Optional[Callable] = None
    noise_bound: Optional[float] = None
    lip_h: Optional[float] = None
    x0: Optional[np.ndarray] = None
    linear: Optional[LinearStructure] = None
    noise: Optional[NoiseModel] = None
    meta: Optional[dict] = None

    def gradient(self, x, z, rng, noise_free=False):
        """Stochastic gradient ``q_i(x, z; xi)``, or ``F_i(x, z)`` when noise-free."""
        if noise_free or self.grad_oracle is None:
            if self.mean_grad is None:
                raise UnsupportedOperationError("player has neither a gradient oracle nor a mean map")
            return self.mean_grad(x, z)
        return self.grad_oracle(x, z, rng)

    def jacobian_h(self, x):
        """``dh/dx`` (shape ``agg_dim x dim``); central differences if not supplied."""
        if self.jac_h is not None:
            return np.asarray(self.jac_h(x), dtype=float)
        x = np.asarray(x, dtype=float)
        step = 1e-6 * (1.0 + np.linalg.norm(x))
        cols = []
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = step
            cols.append((np.asarray(self.h(x + e)) - np.asarray(self.h(x - e))) / (2 * step))
        return np.column_stack(cols)

    @property
    def feasible_set(self):
        return self.nonsmooth.domain

    def initial_point(self):
        if self.x0 is not None:
            return np.asarray(self.x0, dtype=float).copy()
        return self.nonsmooth.prox(np.zeros(self.dim), 1.0)


@dataclass
class GameSpec:
    players: list
    agg_dim: int
    meta: Optional[dict] = None
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.offsets = np.concatenate([[0], np.cumsum([p.dim for p in self.players])]).astype(int)

    @property
    def n_players(self):
        return len(self.players)

    @property
    def total_dim(self):
        return int(self.offsets[-1])

    def split(self, x):
        """Flat joint strategy -> list of blocks (lists are passed through)."""
        if isinstance(x, (list, tuple)):
            blocks = [np.asarray(b, dtype=float) for b in x]
        else:
            x = np.asarray(x, dtype=float)
            if x.ndim != 1 or x.size != self.total_dim:
                raise ConfigurationError(f"joint strategy has size {x.size}, expected {self.total_dim}")
            blocks = [x[self.offsets[i]:self.offsets[i + 1]] for i in range(self.n_players)]
        if len(blocks) != self.n_players:
            raise ConfigurationError(f"got {len(blocks)} strategy blocks for {self.n_players} players")
        for i, (b, p) in enumerate(zip(blocks, self.players)):
            if b.shape != (p.dim,):
                raise ConfigurationError(f"player {i} block has shape {b.shape}, expected ({p.dim},)")
        return blocks

    def join(self, blocks):
        return np.concatenate([np.asarray(b, dtype=float).ravel() for b in blocks])

    def feasible_sets(self):
        sets = [p.feasible_set for p in self.players]
        if any(s is None for s in sets):
            return None
        return sets

    def project(self, x):
        """Projection onto the product of the players' domains (indicator terms)."""
        blocks = self.split(x)
        out = []
        for i, (b, p) in enumerate(zip(blocks, self.players)):
            if not isinstance(p.nonsmooth, Indicator):
                raise UnsupportedOperationError(f"player {i} term is not an indicator; no projection")
            out.append(p.nonsmooth.set.project(b))
        return self.join(out)

    def initial_point(self):
        return self.join([p.initial_point() for p in self.players])

    def affine_phi(self):
        """``(P, c)`` with ``phi(x) = P x + c`` when every player is linear, else ``None``."""
        if any(p.linear is None for p in self.players):
            return None
        n = self.total_dim
        P = np.zeros((n, n))
        c = np.zeros(n)
        o = self.offsets
        for i, pi in enumerate(self.players):
            li = pi.linear
            P[o[i]:o[i + 1], o[i]:o[i + 1]] += li.P
            c[o[i]:o[i + 1]] = li.c
            for j, pj in enumerate(self.players):
                P[o[i]:o[i + 1], o[j]:o[j + 1]] += li.C @ pj.linear.A
        return P, c


def affine_player(A, P, C, c, nonsmooth, noise_std=0.0, x0=None):
    """Player with ``h(x) = A x``, ``F(x, z) = P x + C z + c`` and Gaussian gradient noise."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float))
    dim = P.shape[0]
    if A.shape[1] != dim or C.shape != (dim, A.shape[0]) or c.shape != (dim,):
        raise ConfigurationError("affine player matrices have inconsistent shapes")
    noise_std = float(noise_std)
    noise = NoiseModel("gaussian", noise_std * np.eye(dim)) if noise_std > 0 else None

    def h(x):
        return A @ x

    def mean_grad(x, z):
        return P @ x + C @ z + c

    def grad_oracle(x, z, rng):
        g = P @ x + C @ z + c
        if noise is not None:
            g = g + noise.draw(rng)
        return g

    meta = {"family": "affine", "A": A.tolist(), "P": P.tolist(), "C": C.tolist(), "c": c.tolist(),
            "noise_std": noise_std, "nonsmooth": nonsmooth.to_dict(),
            "x0": None if x0 is None else np.asarray(x0, dtype=float).tolist()}
    return PlayerSpec(
        dim=dim, h=h, nonsmooth=nonsmooth, mean_grad=mean_grad, grad_oracle=grad_oracle,
        jac_h=lambda x: A, noise_bound=noise_std * np.sqrt(dim), lip_h=float(np.linalg.norm(A, 2)),
        x0=None if x0 is None else np.asarray(x0, dtype=float), linear=LinearStructure(A, P, C, c),
        noise=noise, meta=meta,
    )


def game_to_dict(game):
    if game.meta is not None:
        return dict(game.meta)
    if any(p.meta is None for p in game.players):
        raise UnsupportedOperationError("game has programmatic players; only recipes are serializable")
    return {"family": "players", "agg_dim": game.agg_dim, "players": [p.meta for p in game.players]}


def game_from_dict(spec):
    family = spec.get("family")
    if family == "players":
        players = []
        for ps in spec["players"]:
            if ps.get("family") != "affine":
                raise ConfigurationError(f"unknown player family {ps.get('family')!r}")
            players.append(affine_player(ps["A"], ps["P"], ps["C"], ps["c"],
                                         nonsmooth_from_dict(ps["nonsmooth"]),
                                         noise_std=ps.get("noise_std", 0.0), x0=ps.get("x0")))
        return GameSpec(players, int(spec["agg_dim"]))
    if family in ("cournot", "hier_cournot"):
        from . import cournot
        return cournot.game_from_dict(spec)
    raise ConfigurationError(f"unknown game family {family!r}")


# ---------------------------------------------------------------------------
# Operations


def aggregate(game, x):
    """``sigma(x) = sum_j h_j(x_j)``."""
    blocks = game.split(x)
    total = np.zeros(game.agg_dim)
    for i, (b, p) in enumerate(zip(blocks, game.players)):
        hv = np.atleast_1d(np.asarray(p.h(b), dtype=float))
        if hv.shape != (game.agg_dim,):
            raise ConfigurationError(f"h_{i} returned shape {hv.shape}, expected ({game.agg_dim},)")
        total = total + hv
    return total


def phi(game, x):
    """Concatenated gradient map ``phi_i(x) = F_i(x_i, sigma(x))``."""
    blocks = game.split(x)
    for i, p in enumerate(game.players):
        if p.mean_grad is None:
            raise UnsupportedOperationError(f"player {i} has no mean gradient map")
    sigma = aggregate(game, blocks)
    return np.concatenate([np.asarray(p.mean_grad(b, sigma), dtype=float)
                           for b, p in zip(blocks, game.players)])


def prox_apply(term, alpha, x):
    if not alpha > 0:
        raise ConfigurationError("prox step alpha must be positive")
    return term.prox(np.asarray(x, dtype=float), alpha)


def joint_prox(game, x, alpha):
    blocks = game.split(x)
    return game.join([prox_apply(p.nonsmooth, alpha, b) for b, p in zip(blocks, game.players)])


def fixed_point_residual(game, x, alpha=1.0):
    """``||x - prox_{alpha r}(x - alpha phi(x))||``; zero exactly at equilibria."""
    x = game.join(game.split(x))
    return float(np.linalg.norm(x - joint_prox(game, x - alpha * phi(game, x), alpha)))


@dataclass
class MonotoneReport:
    n_pairs: int
    min_inner: float
    min_strong_ratio: float
    max_lipschitz_ratio: float
    violated: bool

    def __bool__(self):
        return not self.violated


def sample_joint(game, rng, n, sampler=None):
    if sampler is not None:
        return np.array([sampler(rng) for _ in range(n)])
    sets = game.feasible_sets()
    if sets is None or any(s.bounds() is None for s in sets):
        raise ConfigurationError("monotonicity check needs bounded strategy sets or a sampler")
    cols = [s.sample(rng, n) for s in sets]
    return np.hstack(cols)


def check_monotone(game, n_pairs=1000, rng=None, tol=1e-8, sampler=None):
    """Sample feasible pairs and test ``(phi(x) - phi(x'))^T (x - x') >= 0``."""
    rng = np.random.default_rng(rng)
    xs = sample_joint(game, rng, n_pairs, sampler)
    ys = sample_joint(game, rng, n_pairs, sampler)
    min_inner = np.inf
    min_ratio = np.inf
    max_lip = 0.0
    violated = False
    for x, y in zip(xs, ys):
        dx = x - y
        ndx = np.linalg.norm(dx)
        if ndx == 0.0:
            continue
        dphi = phi(game, x) - phi(game, y)
        inner = float(dphi @ dx)
        min_inner = min(min_inner, inner)
        min_ratio = min(min_ratio, inner / ndx**2)
        max_lip = max(max_lip, float(np.linalg.norm(dphi) / ndx))
        if inner < -tol * ndx * max(1.0, np.linalg.norm(dphi)):
            violated = True
    return MonotoneReport(n_pairs, float(min_inner), float(min_ratio), max_lip, violated)


def product_grid(lo, hi, n_per_axis):
    axes = [np.linspace(a, b, n_per_axis) for a, b in zip(lo, hi)]
    return np.array(list(itertools.product(*axes)))
