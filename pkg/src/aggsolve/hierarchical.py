"""Hierarchical games with private lower-level problems.

Each player's cost carries an extra nonsmooth term ``d_i(x_i, y_i(x_i))`` where
``y_i(x_i)`` solves a strongly monotone lower-level VI. The term is handled by
convolution smoothing over a ball of radius ``mu`` and a two-point
sphere-sampling gradient estimator; the lower level is solved inexactly by
projected stochastic approximation with geometrically growing mini-batches.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import game as gm
from . import rng as rngmod
from .errors import ConfigurationError, NumericError, UnsupportedOperationError
from .schedules import validate_hierarchical
from .tikhonov import SmoothingPack, _run

SAMPLE_CHUNK = 1 << 18


# ---------------------------------------------------------------------------
# Sampling


def sample_sphere(rng, dim, n=None):
    """Uniform on the unit sphere by normalizing Gaussians."""
    shape = (dim,) if n is None else (n, dim)
    g = rng.standard_normal(shape)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def sample_ball(rng, dim, n=None):
    s = sample_sphere(rng, dim, n)
    r = rng.random(() if n is None else (n, 1)) ** (1.0 / dim)
    return s * r


# ---------------------------------------------------------------------------
# Lower level


@dataclass
class LowerVI:
    """Strongly monotone VI ``find y in Y(x): (y' - y)^T H(x, y) >= 0``.

    ``set`` is a :class:`~aggsolve.game.ConvexSet` or a callable ``x -> ConvexSet``.
    ``oracle(x, y, rng)`` returns one noisy sample of ``H(x, y)``; ``oracle_batch(x, y, M, rng)``,
    when present, returns the mean of ``M`` samples in one call.
    """

    dim: int
    set: object
    mu_H: float
    L_H: float
    mean_map: Optional[Callable] = None
    oracle: Optional[Callable] = None
    oracle_batch: Optional[Callable] = None
    gamma: Optional[float] = None
    rho: Optional[float] = None
    y0: Optional[np.ndarray] = None
    R0_sq: Optional[float] = None

    def __post_init__(self):
        if not (self.mu_H > 0 and self.L_H >= self.mu_H):
            raise ConfigurationError("need 0 < mu_H <= L_H")
        if self.mean_map is None and self.oracle is None and self.oracle_batch is None:
            raise ConfigurationError("lower-level VI needs a mean map or an oracle")

    def set_at(self, x):
        return self.set(x) if callable(self.set) else self.set

    def step(self):
        gamma = self.gamma if self.gamma is not None else self.mu_H / self.L_H**2
        if not 0 < gamma < 2 * self.mu_H / self.L_H**2:
            raise ConfigurationError(
                f"steplength {gamma} outside (0, 2 mu_H / L_H^2) = (0, {2 * self.mu_H / self.L_H**2})")
        return gamma

    def contraction(self, gamma=None):
        gamma = self.step() if gamma is None else gamma
        return 1.0 - 2.0 * gamma * self.mu_H + gamma**2 * self.L_H**2

    def batch_ratio(self):
        q = self.contraction()
        rho = self.rho if self.rho is not None else 0.5 * (1.0 + q)
        if not 0 < rho < 1:
            raise ConfigurationError(f"batch ratio rho={rho} must lie in (0, 1)")
        if rho == q:
            raise ConfigurationError(f"batch ratio rho equals the contraction factor q={q}")
        return rho

    def mean_sample(self, x, y, M, rng):
        if self.oracle_batch is not None:
            return self.oracle_batch(x, y, M, rng)
        if self.oracle is None:
            return self.mean_map(x, y)
        acc = np.zeros(self.dim)
        for _ in range(M):
            acc += self.oracle(x, y, rng)
        return acc / M

    def natural_residual(self, x, y):
        if self.mean_map is None:
            raise UnsupportedOperationError("natural residual needs the mean map")
        Y = self.set_at(x)
        return float(np.linalg.norm(y - Y.project(y - self.mean_map(x, y))))


def affine_lower_vi(Hmat, t_fn, set_or_fn, noise_std=0.0, gamma=None, rho=None):
    """``H(x, y) = Hmat y - t(x)`` with optional Gaussian sampling noise."""
    Hmat = np.atleast_2d(np.asarray(Hmat, dtype=float))
    dim = Hmat.shape[0]
    sym = 0.5 * (Hmat + Hmat.T)
    mu_H = float(np.linalg.eigvalsh(sym).min())
    if mu_H <= 0:
        raise ConfigurationError("lower-level matrix is not positive definite")
    L_H = float(np.linalg.norm(Hmat, 2))
    noise_std = float(noise_std)

    def mean_map(x, y):
        return Hmat @ y - t_fn(x)

    def oracle(x, y, rng):
        out = Hmat @ y - t_fn(x)
        if noise_std > 0:
            out = out + noise_std * rng.standard_normal(dim)
        return out

    def oracle_batch(x, y, M, rng):
        out = Hmat @ y - t_fn(x)
        if noise_std > 0:
            acc = np.zeros(dim)
            left = M
            while left > 0:
                n = min(left, SAMPLE_CHUNK)
                acc += rng.standard_normal((n, dim)).sum(axis=0)
                left -= n
            out = out + noise_std * acc / M
        return out

    return LowerVI(dim, set_or_fn, mu_H, L_H, mean_map, oracle, oracle_batch, gamma, rho)


@dataclass
class LowerSolveInfo:
    iterations: int
    total_samples: int
    q: float
    rho: float
    R0_sq: float
    path: Optional[np.ndarray] = None


def iterations_for(eps, R0_sq, rate):
    """``J(eps) = ceil(ln(eps / R0^2) / ln rate)``, at least zero."""
    if eps >= R0_sq:
        return 0
    return max(0, math.ceil(math.log(eps / R0_sq) / math.log(rate)))


def _initial_radius(vi, x, Y, y0):
    if vi.R0_sq is not None:
        return vi.R0_sq
    diam = Y.diameter()
    if np.isfinite(diam):
        return max(diam**2, 1e-300)
    # Error bound for strongly monotone VIs through the natural residual.
    if vi.mean_map is None:
        raise ConfigurationError("unbounded lower-level set needs a mean map or an explicit R0_sq")
    r = vi.natural_residual(x, y0)
    return max(((1.0 + vi.L_H) / vi.mu_H * r) ** 2, 1e-300)


def solve_lower_vi(vi, x, eps, rng, n_iter=None, return_info=False, return_path=False):
    """Projected mini-batch SA: ``y_{j+1} = Pi_Y[y_j - gamma * mean of M_j samples]``, ``M_j = ceil(rho^-j)``."""
    x = np.asarray(x, dtype=float)
    gamma = vi.step()
    q = vi.contraction(gamma)
    rho = vi.batch_ratio()
    Y = vi.set_at(x)
    y = Y.project(np.zeros(vi.dim) if vi.y0 is None else np.asarray(vi.y0, dtype=float))
    R0_sq = _initial_radius(vi, x, Y, y)
    if n_iter is None:
        if not eps > 0:
            raise ConfigurationError("exact lower-level solves need a closed form (eps must be positive)")
        n_iter = iterations_for(eps, R0_sq, max(rho, q))
    path = [y.copy()] if return_path else None
    total = 0
    for j in range(n_iter):
        M = math.ceil(rho ** (-j) - 1e-12)
        total += M
        y = Y.project(y - gamma * vi.mean_sample(x, y, M, rng))
        if not np.all(np.isfinite(y)):
            raise NumericError("lower-level iterates diverged", {"iteration": j})
        if return_path:
            path.append(y.copy())
    if return_info or return_path:
        info = LowerSolveInfo(n_iter, total, q, rho, R0_sq,
                              None if path is None else np.array(path))
        return y, info
    return y


# ---------------------------------------------------------------------------
# Hierarchical terms


@dataclass
class HierarchicalTerm:
    """``d(x_i, y_i(x_i))`` with Lipschitz data for the smoothing analysis.

    ``subdiff(x)`` returns ``(g0, D)`` describing the subdifferential of
    ``x -> d(x, y(x))`` as the zonotope ``{g0 + D theta : theta in [0,1]^T}``.
    """

    dim: int
    d: Callable
    L0: float
    Ltilde0: float = 0.0
    mu0: float = 1.0
    lower_vi: Optional[LowerVI] = None
    closed_form_y: Optional[Callable] = None
    subdiff: Optional[Callable] = None
    batch_value: Optional[Callable] = None
    is_zero: bool = False
    max_affine: Optional[tuple] = None

    def __post_init__(self):
        if self.closed_form_y is None and self.lower_vi is None:
            raise ConfigurationError("hierarchical term needs a closed-form follower or a lower-level VI")

    @property
    def has_subdifferential(self):
        return self.subdiff is not None

    def y(self, x, eps=0.0, rng=None):
        if self.closed_form_y is not None:
            return self.closed_form_y(x)
        return solve_lower_vi(self.lower_vi, x, eps, rng)

    def value(self, x, eps=0.0, rng=None):
        x = np.asarray(x, dtype=float)
        return float(self.d(x, self.y(x, eps, rng)))

    def subdifferential(self, x):
        x = np.asarray(x, dtype=float)
        if self.subdiff is not None:
            g0, D = self.subdiff(x)
            return np.asarray(g0, dtype=float), np.asarray(D, dtype=float).reshape(self.dim, -1)
        step = 1e-7 * (1.0 + np.linalg.norm(x))
        g = np.array([(self.value(x + step * e) - self.value(x - step * e)) / (2 * step)
                      for e in np.eye(self.dim)])
        return g, np.zeros((self.dim, 0))


def zero_term(dim):
    return HierarchicalTerm(dim, lambda x, y: 0.0, L0=0.0, closed_form_y=lambda x: None,
                            subdiff=lambda x: (np.zeros(dim), np.zeros((dim, 0))),
                            batch_value=lambda X: np.zeros(len(X)), is_zero=True)


def max_affine_term(L, l0, U, u0, z, mu0=1.0, tie_tol=1e-12, lower_noise_std=0.0):
    """``d(x) = z^T y(x)`` with ``y(x) = max(L x + l0, U x + u0)`` (componentwise, ``z >= 0``).

    ``y(x)`` is the solution of the VI with map ``y - (U x + u0)`` over
    ``{y >= L x + l0}``, which is attached as the lower level.
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    l0 = np.broadcast_to(np.asarray(l0, dtype=float), (L.shape[0],)).copy()
    u0 = np.broadcast_to(np.asarray(u0, dtype=float), (U.shape[0],)).copy()
    z = np.broadcast_to(np.asarray(z, dtype=float), (L.shape[0],)).copy()
    if L.shape != U.shape:
        raise ConfigurationError("L and U must have equal shapes")
    if np.any(z < 0):
        raise ConfigurationError("weights z must be nonnegative for convexity")
    n_y, dim = L.shape

    def closed(x):
        return np.maximum(L @ x + l0, U @ x + u0)

    def d(x, y):
        return float(z @ y)

    def batch_value(X):
        return np.maximum(X @ L.T + l0, X @ U.T + u0) @ z

    def subdiff(x):
        lo = L @ x + l0
        up = U @ x + u0
        gap_ = lo - up
        tol = tie_tol * (1.0 + np.abs(lo) + np.abs(up))
        g0 = np.zeros(dim)
        cols = []
        for j in range(n_y):
            a = z[j] * L[j]
            b = z[j] * U[j]
            if gap_[j] > tol[j]:
                g0 += a
            elif gap_[j] < -tol[j]:
                g0 += b
            else:
                g0 += b
                if np.any(a != b):
                    cols.append(a - b)
        D = np.column_stack(cols) if cols else np.zeros((dim, 0))
        return g0, D

    row = np.maximum(np.linalg.norm(L, axis=1), np.linalg.norm(U, axis=1))
    L0 = float(np.linalg.norm(z * row, 1))
    lower = affine_lower_vi(np.eye(n_y), lambda x: U @ x + u0,
                            lambda x: gm.Box(L @ x + l0, np.inf, dim=n_y), noise_std=lower_noise_std)
    return HierarchicalTerm(dim, d, L0=L0, Ltilde0=float(np.linalg.norm(z)), mu0=mu0,
                            lower_vi=lower, closed_form_y=closed, subdiff=subdiff, batch_value=batch_value,
                            max_affine=(L, l0, U, u0, z))


def abs_term(center=0.0, weight=1.0, mu0=1.0):
    """``weight * |x - center|`` in one dimension."""
    return max_affine_term([[1.0]], [-center], [[-1.0]], [center], [weight], mu0=mu0)


def without_closed_form(term):
    """Copy of ``term`` that must go through its lower-level solver."""
    return HierarchicalTerm(term.dim, term.d, term.L0, term.Ltilde0, term.mu0, term.lower_vi,
                            None, term.subdiff, None, term.is_zero)


# ---------------------------------------------------------------------------
# Smoothing and the gradient estimator


@dataclass
class SmoothedValue:
    mean: float
    stderr: float
    n: int


def _check_mu(term, mu):
    if not 0 < mu <= term.mu0:
        raise ConfigurationError(f"smoothing radius {mu} outside (0, mu0={term.mu0}]")


def smoothed_value(term, x, mu, n_mc, rng, eps=0.0):
    """Monte-Carlo estimate of ``d_mu(x) = E_u[d(x + mu u)]``, ``u`` uniform in the unit ball."""
    _check_mu(term, mu)
    x = np.asarray(x, dtype=float)
    U = sample_ball(rng, term.dim, n_mc)
    pts = x + mu * U
    if term.batch_value is not None:
        vals = np.asarray(term.batch_value(pts), dtype=float)
    else:
        vals = np.array([term.value(p, eps, rng) for p in pts])
    return SmoothedValue(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_mc)), n_mc)


def grad_estimator(term, x, mu, eps, rng, lower_rng=None):
    """``(m/mu) (d(x + mu s, y_eps(x + mu s)) - d(x, y_eps(x))) s / ||s||`` with ``s`` on the unit sphere.

    With a closed-form follower ``eps`` is treated as zero; otherwise two fresh
    lower-level solves are made.
    """
    _check_mu(term, mu)
    x = np.asarray(x, dtype=float)
    s = sample_sphere(rng, term.dim)
    lower_rng = rng if lower_rng is None else lower_rng
    xp = x + mu * s
    if term.closed_form_y is not None:
        diff = term.d(xp, term.closed_form_y(xp)) - term.d(x, term.closed_form_y(x))
    else:
        yp = solve_lower_vi(term.lower_vi, xp, eps, lower_rng)
        y0 = solve_lower_vi(term.lower_vi, x, eps, lower_rng)
        diff = term.d(xp, yp) - term.d(x, y0)
    return (term.dim / mu) * diff * s


def grad_estimator_batch(term, x, mu, n, rng):
    """``n`` independent estimates at once (closed-form followers with a batch evaluator)."""
    _check_mu(term, mu)
    if term.closed_form_y is None or term.batch_value is None:
        return np.array([grad_estimator(term, x, mu, 0.0, rng) for _ in range(n)])
    x = np.asarray(x, dtype=float)
    S = sample_sphere(rng, term.dim, n)
    diff = term.batch_value(x + mu * S) - term.batch_value(x[None, :])[0]
    return (term.dim / mu) * diff[:, None] * S


def first_moment_bound(dim, L0, Ltilde0, eps, mu):
    return 2.0 * dim * Ltilde0 * np.sqrt(eps) / mu + dim * L0


def second_moment_bound(dim, L0, Ltilde0, eps, mu):
    return 3.0 * dim**2 * (2.0 * Ltilde0**2 * eps / mu**2 + L0**2)


# ---------------------------------------------------------------------------
# Algorithm 2


def run_algorithm2(game, hier, sched, params, cfg, waive_validation=False):
    """Smoothed, regularized distributed scheme for hierarchical games.

    ``hier`` holds one :class:`HierarchicalTerm` (or ``None``) per player. Each
    player adds the smoothed-gradient estimate to its sampled gradient before the
    projected Tikhonov step; consensus and averaging are unchanged.
    """
    if len(hier) != game.n_players:
        raise ConfigurationError("need one hierarchical term (or None) per player")
    for i, p in enumerate(game.players):
        if not isinstance(p.nonsmooth, gm.Indicator):
            raise ConfigurationError(f"player {i} must use an indicator term")
        if hier[i] is not None and hier[i].dim != p.dim:
            raise ConfigurationError(f"term {i} has dimension {hier[i].dim}, player has {p.dim}")
    if params.mu is None:
        raise ConfigurationError("hierarchical runs need a smoothing schedule mu")
    if params.eps is None and any(t is not None and t.closed_form_y is None for t in hier):
        raise ConfigurationError("terms without a closed form need an inexactness schedule eps")
    if not waive_validation:
        rep = validate_hierarchical(params)
        if not rep.ok:
            raise ConfigurationError("hierarchical schedule check failed: " + "; ".join(rep.violations))
    N = game.n_players
    smooth_rngs = rngmod.player_streams(cfg.seed, N, rngmod.SMOOTHING)
    lower_rngs = rngmod.player_streams(cfg.seed, N, rngmod.LOWER_LEVEL)

    def extra(i, k, xi):
        term = hier[i]
        if term is None or term.is_zero:
            return None
        return grad_estimator(term, xi, params.mu_at(k), params.eps_at(k), smooth_rngs[i], lower_rngs[i])

    if all(t is None or t.is_zero for t in hier):
        # nothing to add: identical to the plain scheme on either engine
        return _run(game, sched, params, cfg, hier=hier, algorithm="2")
    smoothing = _smoothing_pack(game, hier, params, smooth_rngs)
    return _run(game, sched, params, cfg, extra=extra, hier=hier, algorithm="2", smoothing=smoothing)


def _smoothing_pack(game, hier, params, smooth_rngs):
    """Flatten closed-form max-affine terms for the compiled loop; ``None`` if any term is other."""
    N = game.n_players
    o = game.offsets
    active = []
    Ls, Us, l0s, u0s, zs, rows = [], [], [], [], [], []
    for i, term in enumerate(hier):
        if term is None or term.is_zero:
            rows.append(0)
            continue
        if term.max_affine is None or term.closed_form_y is None:
            return None
        L, l0, U, u0, z = term.max_affine
        active.append(i)
        Ls.append(L.ravel())
        Us.append(U.ravel())
        l0s.append(l0)
        u0s.append(u0)
        zs.append(z)
        rows.append(L.shape[0])
    if not active:
        return None
    sizes = [rows[i] * game.players[i].dim for i in range(N)]

    def directions(n, start):
        S = np.zeros((n, game.total_dim))
        for i in active:
            S[:, o[i]:o[i + 1]] = sample_sphere(smooth_rngs[i], game.players[i].dim, n)
        return S

    def radii(n, start):
        return params.mu.values(n, start=start)

    return SmoothingPack(
        Yofs=np.concatenate([[0], np.cumsum(rows)]).astype(np.int64),
        HMofs=np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64),
        HLf=np.ascontiguousarray(np.concatenate(Ls)), HUf=np.ascontiguousarray(np.concatenate(Us)),
        Hl0=np.ascontiguousarray(np.concatenate(l0s)), Hu0=np.ascontiguousarray(np.concatenate(u0s)),
        Hz=np.ascontiguousarray(np.concatenate(zs)), directions=directions, radii=radii)


# ---------------------------------------------------------------------------
# Smoothed equilibrium proximity


@dataclass
class ProximityReport:
    distance: float
    bound: float
    x_star: np.ndarray
    x_star_mu: np.ndarray
    ok: bool


def _bisect(fn_lo, fn_hi, lo, hi, tol=1e-13, max_iter=200):
    """Root of a monotone set-valued map given lower/upper envelopes; clipped to ``[lo, hi]``."""
    if fn_lo(lo) >= 0:
        return lo
    if fn_hi(hi) <= 0:
        return hi
    a, b = lo, hi
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        if fn_lo(mid) > 0:
            b = mid
        elif fn_hi(mid) < 0:
            a = mid
        else:
            return mid
        if b - a < tol:
            break
    return 0.5 * (a + b)


def smoothed_ne_gap_bound_check(game, hier, mu, delta, x_star=None, x_star_mu=None,
                                n_pairs=500, rng=None, solver_tol=1e-9):
    """Check ``||x*_mu - x*|| <= sqrt(mu N L0 / delta)``.

    For one scalar player both equilibria are computed by bisection (the smoothed
    derivative is exact in one dimension); otherwise they must be supplied.
    """
    rep = gm.check_monotone(game, n_pairs=n_pairs, rng=rng)
    if rep.min_strong_ratio < delta - 1e-9:
        raise UnsupportedOperationError(
            f"sampled strong-monotonicity modulus {rep.min_strong_ratio:.3g} is below delta={delta}")
    terms = [t for t in hier if t is not None]
    L0 = max((t.L0 for t in terms), default=0.0)
    for t in terms:
        _check_mu(t, mu)
    N = game.n_players
    if x_star is None or x_star_mu is None:
        if N != 1 or game.total_dim != 1:
            raise UnsupportedOperationError("supply x_star and x_star_mu for instances beyond one scalar player")
        lo, hi = game.players[0].feasible_set.bounds()
        lo, hi = float(lo[0]), float(hi[0])
        term = hier[0]

        def phi1(v):
            return float(gm.phi(game, np.array([v]))[0])

        def sub_lo(v):
            if term is None:
                return 0.0
            g0, D = term.subdifferential(np.array([v]))
            return float(g0[0] + np.minimum(D, 0).sum())

        def sub_hi(v):
            if term is None:
                return 0.0
            g0, D = term.subdifferential(np.array([v]))
            return float(g0[0] + np.maximum(D, 0).sum())

        def smooth_grad(v):
            if term is None:
                return 0.0
            return (term.value(np.array([v + mu])) - term.value(np.array([v - mu]))) / (2 * mu)

        xs = _bisect(lambda v: phi1(v) + sub_lo(v), lambda v: phi1(v) + sub_hi(v), lo, hi)
        xm = _bisect(lambda v: phi1(v) + smooth_grad(v), lambda v: phi1(v) + smooth_grad(v), lo, hi)
        x_star, x_star_mu = np.array([xs]), np.array([xm])
    dist = float(np.linalg.norm(np.asarray(x_star_mu) - np.asarray(x_star)))
    bound = float(np.sqrt(mu * N * L0 / delta))
    return ProximityReport(dist, bound, np.asarray(x_star), np.asarray(x_star_mu), dist <= bound + solver_tol)
