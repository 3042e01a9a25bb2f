"""Time-varying communication graphs and their mixing behaviour."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.sparse import csgraph

from .errors import ConfigurationError, ValidationError

DS_TOL = 1e-12


def metropolis_weights(adj):
    """Metropolis weights ``W_ij = 1/max(|N_i|, |N_j|)``; neighbourhoods include self."""
    adj = np.asarray(adj, dtype=bool)
    adj = adj | adj.T
    np.fill_diagonal(adj, False)
    size = adj.sum(axis=1) + 1
    W = np.where(adj, 1.0 / np.maximum.outer(size, size), 0.0)
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return W


def ring_adjacency(n):
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        adj[i, (i + 1) % n] = adj[(i + 1) % n, i] = True
    np.fill_diagonal(adj, False)
    return adj


def erdos_renyi_adjacency(n, p, rng):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return upper | upper.T


def is_strongly_connected(adj):
    adj = np.asarray(adj) != 0
    if adj.shape[0] <= 1:
        return True
    n_comp, _ = csgraph.connected_components(adj.astype(np.int8), directed=True, connection="strong")
    return n_comp == 1


def check_doubly_stochastic(W, tol=DS_TOL):
    """Raise :class:`ValidationError` naming the first bad row or column."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValidationError(f"weight matrix must be square, got shape {W.shape}")
    if np.any(W < 0):
        i, j = np.argwhere(W < 0)[0]
        raise ValidationError(f"negative weight at ({i}, {j})")
    rows = np.abs(W.sum(axis=1) - 1.0)
    if np.any(rows > tol):
        i = int(np.argmax(rows))
        raise ValidationError(f"row {i} sums to {W[i].sum():.15g}, not 1")
    cols = np.abs(W.sum(axis=0) - 1.0)
    if np.any(cols > tol):
        j = int(np.argmax(cols))
        raise ValidationError(f"column {j} sums to {W[:, j].sum():.15g}, not 1")


@dataclass
class GraphSchedule:
    """Sequence of doubly stochastic weight matrices ``W_k``.

    Build instances with :meth:`static`, :meth:`cyclic`, :meth:`erdos_renyi`
    or :meth:`custom`.
    """

    n: int
    kind: str
    matrices: list = field(default_factory=list)
    p: Optional[float] = None
    seed: Optional[int] = None
    reweave_period: Optional[int] = None
    fn: Optional[Callable] = None
    varsigma: Optional[float] = None
    period: int = 1
    max_retries: int = 100
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def static(cls, W, varsigma=None, period=1):
        W = np.asarray(W, dtype=float)
        check_doubly_stochastic(W)
        return cls(W.shape[0], "static", [W], varsigma=varsigma, period=period)

    @classmethod
    def cyclic(cls, mats, varsigma=None, period=None):
        mats = [np.asarray(W, dtype=float) for W in mats]
        if not mats:
            raise ConfigurationError("cyclic schedule needs at least one matrix")
        for W in mats:
            check_doubly_stochastic(W)
        return cls(mats[0].shape[0], "cyclic", mats, varsigma=varsigma,
                   period=len(mats) if period is None else period)

    @classmethod
    def erdos_renyi(cls, n, p, seed, reweave_period=None, max_retries=100):
        if not 0.0 < p <= 1.0:
            raise ConfigurationError("edge probability must lie in (0, 1]")
        if reweave_period is not None and reweave_period < 1:
            raise ConfigurationError("reweave period must be a positive integer")
        sched = cls(int(n), "erdos_renyi", p=float(p), seed=int(seed),
                    reweave_period=reweave_period, period=1, max_retries=max_retries)
        sched.weights_at(0)
        return sched

    @classmethod
    def custom(cls, n, fn, varsigma=None, period=1):
        return cls(int(n), "custom", fn=fn, varsigma=varsigma, period=period)

    def _er_matrix(self, epoch):
        if epoch not in self._cache:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, epoch]))
            for _ in range(self.max_retries):
                adj = erdos_renyi_adjacency(self.n, self.p, rng)
                if is_strongly_connected(adj | np.eye(self.n, dtype=bool)):
                    self._cache[epoch] = metropolis_weights(adj)
                    break
            else:
                raise ValidationError(
                    f"no connected Erdos-Renyi graph (n={self.n}, p={self.p}) "
                    f"after {self.max_retries} draws")
            if len(self._cache) > 4096:
                self._cache.pop(next(iter(self._cache)))
        return self._cache[epoch]

    def weights_at(self, k):
        if k < 0:
            raise ConfigurationError("iteration index must be nonnegative")
        if self.kind == "static":
            return self.matrices[0]
        if self.kind == "cyclic":
            return self.matrices[k % len(self.matrices)]
        if self.kind == "erdos_renyi":
            epoch = 0 if self.reweave_period is None else k // self.reweave_period
            return self._er_matrix(epoch)
        W = np.asarray(self.fn(k), dtype=float)
        if W.shape != (self.n, self.n):
            raise ValidationError(f"custom generator returned shape {W.shape} at k={k}")
        check_doubly_stochastic(W)
        return W

    @property
    def is_static(self):
        return self.kind == "static" or (self.kind == "erdos_renyi" and self.reweave_period is None) \
            or (self.kind == "cyclic" and len(self.matrices) == 1)

    def to_dict(self):
        if self.kind == "erdos_renyi":
            return {"kind": "erdos_renyi", "n": self.n, "p": self.p, "seed": self.seed,
                    "reweave_period": self.reweave_period}
        if self.kind in ("static", "cyclic"):
            return {"kind": self.kind, "matrices": [W.tolist() for W in self.matrices],
                    "varsigma": self.varsigma, "period": self.period}
        raise ConfigurationError("custom schedules are not serializable")

    @classmethod
    def from_dict(cls, spec):
        try:
            return cls._from_dict(spec)
        except KeyError as exc:
            raise ConfigurationError(f"graph block missing key {exc.args[0]!r}") from exc

    @classmethod
    def _from_dict(cls, spec):
        kind = spec.get("kind")
        if kind == "erdos_renyi":
            return cls.erdos_renyi(spec["n"], spec["p"], spec.get("seed", 0), spec.get("reweave_period"))
        if kind == "static":
            return cls.static(spec["matrices"][0], spec.get("varsigma"), spec.get("period", 1))
        if kind == "cyclic":
            return cls.cyclic(spec["matrices"], spec.get("varsigma"), spec.get("period"))
        if kind == "ring":
            return cls.static(metropolis_weights(ring_adjacency(spec["n"])))
        if kind == "complete":
            n = spec["n"]
            return cls.static(np.full((n, n), 1.0 / n))
        raise ConfigurationError(f"unknown graph kind {kind!r}")


def weights_at(sched, k):
    return sched.weights_at(k)


@dataclass
class ScheduleDiagnostics:
    ok: bool
    horizon: int
    varsigma_empirical: float
    violation: Optional[str] = None
    violation_k: Optional[int] = None

    def __bool__(self):
        return self.ok


def _min_positive(W):
    pos = W[W > 0]
    return float(pos.min()) if pos.size else np.inf


def validate_schedule(sched, horizon):
    """Check double stochasticity, the weight floor and windowed connectivity on ``[0, horizon]``."""
    P = sched.period
    if horizon < P:
        raise ConfigurationError(f"horizon {horizon} is shorter than the connectivity window {P}")
    # Periodic schedules repeat, so one pass over a window plus a period suffices.
    last = horizon
    if sched.is_static:
        last = min(horizon, P)
    elif sched.kind == "cyclic":
        last = min(horizon, len(sched.matrices) + P)
    mats = []
    floor = np.inf
    for k in range(last + 1):
        try:
            W = sched.weights_at(k)
            check_doubly_stochastic(W)
        except ValidationError as exc:
            return ScheduleDiagnostics(False, horizon, floor, str(exc), k)
        if np.any(np.diag(W) <= 0):
            i = int(np.argmin(np.diag(W)))
            return ScheduleDiagnostics(False, horizon, floor, f"diagonal entry {i} is not positive", k)
        floor = min(floor, _min_positive(W))
        if sched.varsigma is not None and _min_positive(W) < sched.varsigma - 1e-15:
            return ScheduleDiagnostics(False, horizon, floor,
                                       f"positive weight {_min_positive(W):.3g} below declared floor "
                                       f"{sched.varsigma:.3g}", k)
        mats.append(W > 0)
    for s in range(0, last - P + 2):
        union = np.zeros((sched.n, sched.n), dtype=bool)
        for W in mats[s:s + P]:
            union |= W
        if not is_strongly_connected(union):
            return ScheduleDiagnostics(False, horizon, floor,
                                       f"union graph over steps {s}..{s + P - 1} is not strongly connected", s)
    return ScheduleDiagnostics(True, horizon, floor)


@dataclass
class MixingReport:
    theta: float
    beta: float
    varsigma: float
    period: int
    empirical_max_dev: np.ndarray
    truncation_lag: Optional[int] = None

    def bound(self, lags=None):
        lags = np.arange(len(self.empirical_max_dev)) if lags is None else np.asarray(lags)
        return self.theta * self.beta ** lags

    @property
    def bound_holds(self):
        dev = self.empirical_max_dev
        ok = np.isfinite(dev)
        return bool(np.all(dev[ok] <= self.bound()[ok] * (1 + 1e-12) + 1e-15))

    def fitted_rate(self, floor=1e-13):
        """Least-squares geometric decay rate of the deviation, using entries above ``floor``."""
        dev = self.empirical_max_dev
        lags = np.arange(dev.size)
        keep = np.isfinite(dev) & (dev > floor)
        if keep.sum() < 2:
            return 0.0
        slope = np.polyfit(lags[keep], np.log(dev[keep]), 1)[0]
        return float(np.exp(slope))


def mixing_constants(varsigma, n, period):
    base = 1.0 - varsigma / (4.0 * n**2)
    return base ** -2, base ** (1.0 / period)


def mixing_diagnostics(sched, k_max, starts=(0,)):
    """Products ``Phi(s + l, s) = W_{s+l} ... W_s`` against the geometric bound.

    The weight floor is measured from the emitted matrices.
    """
    n = sched.n
    dev = np.zeros(k_max + 1)
    floor = np.inf
    truncation = None
    for s in starts:
        Phi = np.eye(n)
        for lag in range(k_max + 1):
            W = sched.weights_at(s + lag)
            floor = min(floor, _min_positive(W))
            Phi = W @ Phi
            if not np.all(np.isfinite(Phi)):
                truncation = lag if truncation is None else min(truncation, lag)
                dev[lag:] = np.nan
                break
            if lag % 100 == 0:
                check_doubly_stochastic(Phi, tol=1e-9)
            dev[lag] = max(dev[lag], float(np.max(np.abs(Phi - 1.0 / n))))
    theta, beta = mixing_constants(floor, n, sched.period)
    return MixingReport(theta, beta, floor, sched.period, dev, truncation)
