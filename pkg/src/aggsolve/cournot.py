"""Networked Nash-Cournot instances and their private hierarchical extension.

Firm ``i`` produces ``g_i`` and sells ``s_i`` in the ``m_i`` markets it serves;
``A_i`` maps its sales into the ``m`` markets. Prices are ``d - B A s`` plus
noise, production costs are linear with noisy slope ``kappa_i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import game as gm
from . import hierarchical as hr
from .errors import ConfigurationError, ValidationError
from .network import GraphSchedule

PAPER_HINV = np.array([[2.0, 1.0, -0.5], [1.0, 1.5, 0.0], [-0.5, 0.0, 2.0]])

DEFAULT_RANGES = {
    "cbar": (5.0, 6.0),
    "kappa": (0.5, 0.6),
    "cap": (2.0, 2.5),
    "d": (20.0, 25.0),
    "b": (1.0, 1.5),
}

PRESETS = {
    "paper-5.2": {"N": 20, "m": 10, "m_i": 3, "p": 0.2, "hier": False},
    "paper-5.3": {"N": 20, "m": 10, "m_i": 3, "p": 0.2, "hier": True},
    "desk-small": {"N": 5, "m": 3, "m_i": 2, "p": 0.5, "hier": False},
    "desk-hier": {"N": 5, "m": 3, "m_i": 3, "p": 0.5, "hier": True},
}


@dataclass
class CournotInstance:
    N: int
    m: int
    markets: list
    d: np.ndarray
    b: np.ndarray
    cbar: np.ndarray
    kappa: list
    cap: list
    noise_frac: float = 0.1
    seed: Optional[int] = None

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.cbar = np.asarray(self.cbar, dtype=float)
        self.markets = [np.asarray(mk, dtype=int) for mk in self.markets]
        self.kappa = [np.asarray(k, dtype=float) for k in self.kappa]
        self.cap = [np.asarray(c, dtype=float) for c in self.cap]
        if self.d.shape != (self.m,) or self.b.shape != (self.m,):
            raise ConfigurationError("d and b must have one entry per market")
        if np.any(self.d <= 0) or np.any(self.b <= 0):
            raise ConfigurationError("price intercepts and slopes must be positive")
        if len(self.markets) != self.N:
            raise ConfigurationError("need one market list per firm")
        for i, mk in enumerate(self.markets):
            if len(set(mk.tolist())) != mk.size or np.any(mk < 0) or np.any(mk >= self.m):
                raise ConfigurationError(f"firm {i} market list is invalid")
            if self.kappa[i].shape != mk.shape or self.cap[i].shape != mk.shape:
                raise ConfigurationError(f"firm {i} cost/capacity vectors do not match its markets")
            if np.any(self.cap[i] <= 0):
                raise ConfigurationError("capacities must be positive")
        if self.noise_frac < 0:
            raise ConfigurationError("noise fraction must be nonnegative")

    @property
    def m_i(self):
        return [mk.size for mk in self.markets]

    @property
    def B(self):
        return np.diag(self.b)

    def A(self, i):
        """Participation matrix ``A_i``; each column has a single unit entry."""
        mk = self.markets[i]
        out = np.zeros((self.m, mk.size))
        out[mk, np.arange(mk.size)] = 1.0
        return out

    def monotonicity_matrix(self):
        """``Q + S^T S``, whose PSD-ness makes the gradient map monotone."""
        As = [self.A(i) for i in range(self.N)]
        B = self.B
        Q = _block_diag([a.T @ B @ a for a in As])
        S = np.hstack([np.sqrt(B) @ a for a in As])
        return Q + S.T @ S

    def to_dict(self):
        return {
            "N": self.N, "m": self.m, "markets": [mk.tolist() for mk in self.markets],
            "d": self.d.tolist(), "b": self.b.tolist(), "cbar": self.cbar.tolist(),
            "kappa": [k.tolist() for k in self.kappa], "cap": [c.tolist() for c in self.cap],
            "noise_frac": self.noise_frac, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["N"], d["m"], d["markets"], d["d"], d["b"], d["cbar"], d["kappa"], d["cap"],
                   d.get("noise_frac", 0.1), d.get("seed"))


def _block_diag(blocks):
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    o = 0
    for b in blocks:
        k = b.shape[0]
        out[o:o + k, o:o + k] = b
        o += k
    return out


def generate_instance(N, m, m_i, seed, ranges=None, noise_frac=0.1):
    """Random instance; each firm serves ``m_i`` distinct markets drawn without replacement."""
    if m_i > m:
        raise ConfigurationError(f"m_i={m_i} exceeds the number of markets m={m}")
    r = dict(DEFAULT_RANGES)
    r.update(ranges or {})
    rng = np.random.default_rng(seed)
    cbar = rng.uniform(*r["cbar"], size=N)
    kappa = [rng.uniform(*r["kappa"], size=m_i) for _ in range(N)]
    cap = [rng.uniform(*r["cap"], size=m_i) for _ in range(N)]
    d = rng.uniform(*r["d"], size=m)
    b = rng.uniform(*r["b"], size=m)
    markets = [np.sort(rng.choice(m, size=m_i, replace=False)) for _ in range(N)]
    return CournotInstance(N, m, markets, d, b, cbar, kappa, cap, noise_frac, seed)


def cournot_player(inst, i):
    A = inst.A(i)
    B = inst.B
    mi = A.shape[1]
    n = 2 * mi
    Ah = np.hstack([np.zeros((inst.m, mi)), A])
    P = np.zeros((n, n))
    P[mi:, mi:] = A.T @ B @ A
    C = np.vstack([np.zeros((mi, inst.m)), A.T @ B])
    c = np.concatenate([inst.kappa[i], -A.T @ inst.d])
    frac = inst.noise_frac
    Lm = np.zeros((n, mi + inst.m))
    Lm[:mi, :mi] = np.diag(frac * inst.kappa[i])
    Lm[mi:, mi:] = -A.T @ np.diag(frac * inst.d)
    noise = gm.NoiseModel("uniform", Lm)

    def h(x):
        return Ah @ x

    def mean_grad(x, z):
        return P @ x + C @ z + c

    def grad_oracle(x, z, rng):
        return P @ x + C @ z + c + noise.draw(rng)

    return gm.PlayerSpec(
        dim=n, h=h, nonsmooth=gm.Indicator(gm.BalancedCapacitySet(mi, inst.cap[i])),
        mean_grad=mean_grad, grad_oracle=grad_oracle, jac_h=lambda x: Ah,
        noise_bound=noise.rms, lip_h=1.0, linear=gm.LinearStructure(Ah, P, C, c), noise=noise,
    )


def to_game(inst):
    players = [cournot_player(inst, i) for i in range(inst.N)]
    return gm.GameSpec(players, inst.m, meta={"family": "cournot", "instance": inst.to_dict()})


def profit_costs(inst, x):
    """Each firm's expected cost ``cbar + kappa^T g - d^T A s + s^T A^T B (A s)``."""
    game_blocks = np.split(np.asarray(x, dtype=float), np.cumsum([2 * k for k in inst.m_i])[:-1])
    sales = sum(inst.A(i) @ blk[inst.m_i[i]:] for i, blk in enumerate(game_blocks))
    out = []
    for i, blk in enumerate(game_blocks):
        mi = inst.m_i[i]
        g, s = blk[:mi], blk[mi:]
        A = inst.A(i)
        out.append(inst.cbar[i] + inst.kappa[i] @ g - inst.d @ (A @ s) + s @ A.T @ inst.B @ sales)
    return np.array(out)


# ---------------------------------------------------------------------------
# Hierarchical extension


@dataclass
class HierCournotInstance:
    """Adds ``D_i(x_i) = z_i^T max(l_i(x_i), H_i^{-1} t_i(x_i))`` with ``l_i = lt_i g_i``, ``t_i = tt_i g_i``.

    ``lt`` and ``tt`` hold either scalars or ``m_i x m_i`` matrices per firm.
    """

    base: CournotInstance
    z: list
    Hinv: list
    lt: list
    tt: list
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.z = [np.asarray(v, dtype=float) for v in self.z]
        self.Hinv = [np.asarray(h, dtype=float) for h in self.Hinv]
        self.lt = [np.asarray(v, dtype=float) for v in self.lt]
        self.tt = [np.asarray(v, dtype=float) for v in self.tt]
        for i, mi in enumerate(self.base.m_i):
            Hi = self.Hinv[i]
            if Hi.shape != (mi, mi):
                raise ConfigurationError(f"H_{i}^-1 must be {mi}x{mi}")
            if not np.allclose(Hi, Hi.T, atol=1e-12):
                self.flags.append(f"H_{i}^-1 is not symmetric; symmetrized")
                self.Hinv[i] = 0.5 * (Hi + Hi.T)
            try:
                np.linalg.cholesky(self.Hinv[i])
            except np.linalg.LinAlgError:
                raise ValidationError(f"H_{i}^-1 is not positive definite") from None
            if self.z[i].shape != (mi,) or np.any(self.z[i] < 0):
                raise ConfigurationError(f"z_{i} must be a nonnegative {mi}-vector")

    def _mat(self, v, mi):
        return v * np.eye(mi) if v.ndim == 0 else v

    def l_matrix(self, i):
        """``l_i(x_i) = L x_i`` in full ``(g, s)`` coordinates."""
        mi = self.base.m_i[i]
        return np.hstack([self._mat(self.lt[i], mi), np.zeros((mi, mi))])

    def w_matrix(self, i):
        """``H_i^{-1} t_i(x_i) = W x_i`` in full coordinates."""
        mi = self.base.m_i[i]
        return np.hstack([self.Hinv[i] @ self._mat(self.tt[i], mi), np.zeros((mi, mi))])

    def to_dict(self):
        return {"base": self.base.to_dict(), "z": [v.tolist() for v in self.z],
                "Hinv": [h.tolist() for h in self.Hinv], "lt": [v.tolist() for v in self.lt],
                "tt": [v.tolist() for v in self.tt]}

    @classmethod
    def from_dict(cls, d):
        return cls(CournotInstance.from_dict(d["base"]), d["z"], d["Hinv"], d["lt"], d["tt"])


def generate_hier_instance(base, seed, Hinv=None, z=None, coeff="scalar"):
    """Hierarchical extension with ``lt, tt ~ U[0, 1]`` (scalars, or matrices if ``coeff="matrix"``)."""
    rng = np.random.default_rng(seed)
    zs, Hs, lts, tts = [], [], [], []
    for mi in base.m_i:
        Hs.append(PAPER_HINV if Hinv is None and mi == 3 else
                  (_random_pd(rng, mi) if Hinv is None else np.asarray(Hinv)))
        zs.append(np.ones(mi) if z is None else np.asarray(z, dtype=float))
        if coeff == "scalar":
            lts.append(rng.uniform(0, 1))
            tts.append(rng.uniform(0, 1))
        elif coeff == "matrix":
            lts.append(rng.uniform(0, 1, (mi, mi)))
            tts.append(rng.uniform(0, 1, (mi, mi)))
        else:
            raise ConfigurationError(f"unknown coefficient kind {coeff!r}")
    return HierCournotInstance(base, zs, Hs, lts, tts)


def _random_pd(rng, n):
    G = rng.standard_normal((n, n))
    return G @ G.T + n * np.eye(n)


def lower_level_closed_form(hinst, i, x_i):
    """``y_i(x_i) = max(l_i(x_i), H_i^{-1} t_i(x_i))``."""
    x_i = np.asarray(x_i, dtype=float)
    return np.maximum(hinst.l_matrix(i) @ x_i, hinst.w_matrix(i) @ x_i)


def hier_terms(hinst, mu0=1.0):
    return [hr.max_affine_term(hinst.l_matrix(i), 0.0, hinst.w_matrix(i), 0.0, hinst.z[i], mu0=mu0)
            for i in range(hinst.base.N)]


def literal_lower_vi(H, t_fn, l_fn, noise_std=0.0, gamma=None, rho=None):
    """Lower level written with ``H`` itself: ``H y - t(x)`` over ``{y >= l(x)}``.

    Its solution equals ``max(l, H^{-1} t)`` only when ``H`` is diagonal.
    """
    H = np.asarray(H, dtype=float)
    n = H.shape[0]
    return hr.affine_lower_vi(H, t_fn, lambda x: gm.Box(l_fn(x), np.inf, dim=n),
                              noise_std=noise_std, gamma=gamma, rho=rho)


def hier_to_game(hinst):
    game = to_game(hinst.base)
    game.meta = {"family": "hier_cournot", "instance": hinst.to_dict()}
    return game


# ---------------------------------------------------------------------------
# Presets and serialization


def preset(name, seed=0):
    """``(game, graph, hier_terms_or_None, instance)`` for a named preset."""
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    p = PRESETS[name]
    inst = generate_instance(p["N"], p["m"], p["m_i"], seed)
    graph = GraphSchedule.erdos_renyi(p["N"], p["p"], seed)
    if p["hier"]:
        hinst = generate_hier_instance(inst, seed + 1)
        return hier_to_game(hinst), graph, hier_terms(hinst), hinst
    return to_game(inst), graph, None, inst


def game_from_dict(spec):
    family = spec.get("family")
    if family == "cournot":
        return to_game(CournotInstance.from_dict(spec["instance"]))
    if family == "hier_cournot":
        return hier_to_game(HierCournotInstance.from_dict(spec["instance"]))
    raise ConfigurationError(f"not a Cournot family: {family!r}")


def hier_terms_from_dict(spec):
    if spec.get("family") != "hier_cournot":
        return None
    return hier_terms(HierCournotInstance.from_dict(spec["instance"]))
