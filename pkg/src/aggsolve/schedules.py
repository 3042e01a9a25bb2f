"""Steplength, regularization, smoothing and inexactness sequences."""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, UnsupportedOperationError

EXPONENT_TOL = 1e-12


@dataclass(frozen=True)
class PowerSchedule:
    """``coef * (k + offset) ** (-exponent)``."""

    offset: float
    exponent: float
    coef: float = 1.0

    def __post_init__(self):
        if not self.offset > 0:
            raise ConfigurationError("power schedule offset must be positive")
        if self.exponent < 0:
            raise ConfigurationError("power schedule exponent must be nonnegative")
        if not self.coef > 0:
            raise ConfigurationError("power schedule coefficient must be positive")

    def value(self, k):
        return self.coef * (k + self.offset) ** (-self.exponent)

    __call__ = value

    def values(self, K, start=0):
        return self.coef * (np.arange(start, start + K, dtype=float) + self.offset) ** (-self.exponent)


def parse_offsets(spec, n, rng):
    """Offsets from a list, a scalar, or a string such as ``"uniform(4,5)"``."""
    if isinstance(spec, str):
        m = re.fullmatch(r"\s*uniform\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\)\s*", spec)
        if not m:
            raise ConfigurationError(f"cannot parse offset spec {spec!r}")
        lo, hi = float(m.group(1)), float(m.group(2))
        if rng is None:
            raise ConfigurationError("random offsets need an rng")
        return rng.uniform(lo, hi, size=n)
    arr = np.atleast_1d(np.asarray(spec, dtype=float))
    if arr.size == 1:
        return np.full(n, float(arr[0]))
    if arr.size != n:
        raise ConfigurationError(f"expected {n} offsets, got {arr.size}")
    return arr


@dataclass
class ParamSchedules:
    """Per-player ``alpha_{i,k}``, ``eta_{i,k}`` plus optional ``mu_k`` and ``eps_k``.

    ``regularized=False`` gives the unregularized baseline (``eta == 0``).
    """

    alpha: list
    eta: list
    mu: Optional[PowerSchedule] = None
    eps: Optional[PowerSchedule] = None
    regularized: bool = True
    _alpha_off: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.alpha) != len(self.eta):
            raise ConfigurationError("alpha and eta must have one schedule per player")
        self._alpha_off = np.array([s.offset for s in self.alpha])
        self._alpha_exp = np.array([s.exponent for s in self.alpha])
        self._alpha_coef = np.array([s.coef for s in self.alpha])
        self._eta_off = np.array([s.offset for s in self.eta])
        self._eta_exp = np.array([s.exponent for s in self.eta])
        self._eta_coef = np.array([s.coef for s in self.eta])

    @classmethod
    def power(cls, n, a, b, lam=1.0, delta=1.0, rng=None, regularized=True,
              mu0=None, d=None, eps0=None, c=None):
        lam = parse_offsets(lam, n, rng)
        delta = parse_offsets(delta, n, rng)
        mu = PowerSchedule(1.0, d, mu0) if mu0 is not None and d is not None else None
        eps = PowerSchedule(1.0, c, eps0) if eps0 is not None and c is not None else None
        return cls([PowerSchedule(l, a) for l in lam], [PowerSchedule(dl, b) for dl in delta],
                   mu=mu, eps=eps, regularized=regularized)

    @classmethod
    def from_config(cls, cfg, n, rng=None):
        return cls.power(
            n, cfg["a"], cfg.get("b", 0.0), cfg.get("lambda", 1.0), cfg.get("delta", 1.0), rng,
            regularized=cfg.get("regularized", True), mu0=cfg.get("mu0"), d=cfg.get("d"),
            eps0=cfg.get("eps0"), c=cfg.get("c"),
        )

    def to_config(self):
        out = {"a": self.a, "b": self.b, "lambda": self._alpha_off.tolist(),
               "delta": self._eta_off.tolist(), "regularized": self.regularized}
        if self.mu is not None:
            out.update(mu0=self.mu.coef, d=self.mu.exponent)
        if self.eps is not None:
            out.update(eps0=self.eps.coef, c=self.eps.exponent)
        return out

    @property
    def n_players(self):
        return len(self.alpha)

    @staticmethod
    def _shared(exps, name):
        if np.ptp(exps) > EXPONENT_TOL:
            raise UnsupportedOperationError(f"players use different {name} exponents")
        return float(exps[0])

    @property
    def a(self):
        return self._shared(self._alpha_exp, "steplength")

    @property
    def b(self):
        return self._shared(self._eta_exp, "regularization")

    def alpha_at(self, k):
        return self._alpha_coef * (k + self._alpha_off) ** (-self._alpha_exp)

    def eta_at(self, k):
        if not self.regularized:
            return np.zeros(self.n_players)
        return self._eta_coef * (k + self._eta_off) ** (-self._eta_exp)

    def mu_at(self, k):
        return 0.0 if self.mu is None else self.mu.value(k)

    def eps_at(self, k):
        return 0.0 if self.eps is None else self.eps.value(k)

    def alpha_table(self, K, start=0):
        """``(K, N)`` array of steplengths for iterations ``start .. start+K-1``."""
        k = np.arange(start, start + K, dtype=float)[:, None]
        return self._alpha_coef * (k + self._alpha_off) ** (-self._alpha_exp)

    def eta_table(self, K, start=0):
        if not self.regularized:
            return np.zeros((K, self.n_players))
        k = np.arange(start, start + K, dtype=float)[:, None]
        return self._eta_coef * (k + self._eta_off) ** (-self._eta_exp)

    def alpha_max(self, K):
        return self.alpha_table(K).max(axis=1)

    def alpha_min(self, K):
        return self.alpha_table(K).min(axis=1)

    def eta_max(self, K):
        return self.eta_table(K).max(axis=1)

    def eta_min(self, K):
        return self.eta_table(K).min(axis=1)


@dataclass
class ScheduleReport:
    ok: bool
    violations: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __bool__(self):
        return self.ok


def validate_basic(s):
    """``1/2 < a < 1``, ``a > b > 0`` and ``a + b < 1``."""
    a, b = s.a, s.b
    checks = [
        (a > 0.5, f"a={a} must exceed 1/2"),
        (a < 1.0, f"a={a} must be below 1"),
        (a > b, f"a={a} must exceed b={b}"),
        (b > 0.0, f"b={b} must be positive"),
        (a + b < 1.0, f"a+b={a + b} must be below 1"),
    ]
    bad = [msg for ok, msg in checks if not ok]
    return ScheduleReport(not bad, bad, {"a": a, "b": b})


def validate_corollary1(s):
    """Pairing ``a = 1/2 + tau``, ``b = 1/2 - 2 tau`` with ``0 < tau < 1/4``."""
    a, b = s.a, s.b
    tau_a = a - 0.5
    tau_b = (0.5 - b) / 2.0
    bad = []
    if abs(tau_a - tau_b) > EXPONENT_TOL:
        bad.append(f"a implies tau={tau_a:.6g} but b implies tau={tau_b:.6g}")
    if not 0.0 < tau_a < 0.25:
        bad.append(f"tau={tau_a:.6g} outside (0, 1/4)")
    rate = None if bad else -(0.5 - 2 * tau_a)
    return ScheduleReport(not bad, bad, {"tau": tau_a if not bad else None,
                                         "tau_from_a": tau_a, "tau_from_b": tau_b,
                                         "rate_exponent": rate})


def hierarchical_case(a, c, d):
    """Rate case (1-4) selected by the signs of ``1-(a+d)`` and ``1+2d-c``; ``None`` on a boundary."""
    s1 = 1.0 - (a + d)
    s2 = 1.0 + 2.0 * d - c
    if s1 == 0.0 or s2 == 0.0:
        return None
    return {(False, False): 1, (True, False): 2, (False, True): 3, (True, True): 4}[(s1 > 0, s2 > 0)]


def validate_hierarchical(s):
    if s.mu is None:
        raise ConfigurationError("hierarchical validation needs a smoothing schedule")
    a = s.a
    # No eps schedule means exact lower-level solves, i.e. c = infinity.
    c = np.inf if s.eps is None else s.eps.exponent
    d = s.mu.exponent
    bad = []
    if not c > a + 2 * d:
        bad.append(f"c={c} must exceed a+2d={a + 2 * d}")
    if not d > 0:
        bad.append(f"d={d} must be positive")
    case = hierarchical_case(a, c, d)
    b = s.b
    terms = [a - 1.0, -b]
    if case in (2, 4):
        terms.append(-d)
    if case in (3, 4):
        terms.append(a + 2 * d - c)
    return ScheduleReport(not bad, bad, {"case": case, "rate_exponent": max(terms),
                                         "a": a, "b": b, "c": c, "d": d})


def hierarchical_exponents(tau, tau_prime):
    """``(a, b, c, d)`` for the hierarchical pairing; decaying ``eps`` and ``mu`` are assumed."""
    if not 0 < tau_prime < tau < 0.25:
        raise ConfigurationError("need 0 < tau' < tau < 1/4")
    return 0.5 + tau, 0.5 - 2 * tau, 2 - 2 * tau_prime - tau, 0.5 - tau_prime


def partial_sum_bounds(offset, exponent, K):
    """Integral bounds on ``sum_{k<K} (k+offset)^{-exponent}`` for ``exponent != 1``."""
    e = 1.0 - exponent
    lower = ((K + offset) ** e - offset**e) / e
    upper = offset ** (-exponent) + ((K - 1 + offset) ** e - offset**e) / e
    return lower, upper


def empirical_check(alpha, eta, K=100_000):
    """Finite-horizon sanity checks of the admissibility ratios for arbitrary sequences.

    ``alpha`` and ``eta`` are ``(K, N)`` arrays (or callables of ``k``). Asymptotic
    conditions cannot be certified this way, so a warning is always emitted.
    """
    if callable(alpha):
        alpha = np.array([np.atleast_1d(alpha(k)) for k in range(K)])
    if callable(eta):
        eta = np.array([np.atleast_1d(eta(k)) for k in range(K)])
    alpha = np.asarray(alpha, dtype=float).reshape(len(alpha), -1)
    eta = np.asarray(eta, dtype=float).reshape(len(eta), -1)
    warnings.warn("empirical schedule checks cover a finite horizon only", stacklevel=2)
    amax, amin = alpha.max(1), alpha.min(1)
    emax, emin = eta.max(1), eta.min(1)
    half = len(alpha) // 2
    info = {
        "decreasing": bool(np.all(np.diff(alpha, axis=0) <= 0) and np.all(np.diff(eta, axis=0) <= 0)),
        "sum_alpha_eta": float(np.sum(amin * emin)),
        "sum_alpha_sq": float(np.sum(amax**2)),
        "sum_alpha_sq_tail_share": float(np.sum(amax[half:] ** 2) / np.sum(amax**2)),
        "alpha_sq_over_eta_last": float(amax[-1] ** 2 / max(emin[-1], 1e-300) / amin[-1]),
        "alpha_spread_last": float((amax[-1] - amin[-1]) / amin[-1]),
        "eta_ratio_last": float((emax[-1] - emin[-1]) / max(emin[-1], 1e-300)),
    }
    bad = []
    if not info["decreasing"]:
        bad.append("sequences are not monotonically nonincreasing")
    return ScheduleReport(not bad, bad, info)
