import numpy as np
import pytest

from aggsolve import cournot as cn
from aggsolve import game as gm
from aggsolve import hierarchical as hr
from aggsolve.errors import ConfigurationError, ValidationError


def test_paper_defaults_shapes():
    inst = cn.generate_instance(20, 10, 3, seed=0)
    assert inst.m_i == [3] * 20
    for i in range(20):
        A = inst.A(i)
        assert A.shape == (10, 3)
        np.testing.assert_array_equal(A.sum(axis=0), np.ones(3))
        assert set(np.unique(A)) <= {0.0, 1.0}
    assert np.all((inst.d >= 20) & (inst.d <= 25)) and np.all((inst.b >= 1) & (inst.b <= 1.5))
    assert np.all((inst.cbar >= 5) & (inst.cbar <= 6))
    for k, c in zip(inst.kappa, inst.cap):
        assert np.all((k >= 0.5) & (k <= 0.6)) and np.all((c >= 2) & (c <= 2.5))
    with pytest.raises(ConfigurationError):
        cn.generate_instance(3, 2, 3, seed=0)


def test_reproducible_per_seed():
    a, b, c = (cn.generate_instance(5, 3, 2, s) for s in (4, 4, 5))
    assert a.to_dict() == b.to_dict()
    assert a.to_dict() != c.to_dict()
    again = cn.CournotInstance.from_dict(a.to_dict())
    assert again.to_dict() == a.to_dict()


def test_monotone():
    inst = cn.generate_instance(6, 4, 2, seed=1)
    assert np.linalg.eigvalsh(inst.monotonicity_matrix()).min() >= -1e-10
    assert gm.check_monotone(cn.to_game(inst), n_pairs=300, rng=0)


def test_gradient_block_formula():
    inst = cn.generate_instance(4, 5, 3, seed=2)
    rng = np.random.default_rng(0)
    for i in range(4):
        p = cn.cournot_player(inst, i)
        x = rng.uniform(0, 2, 6)
        z = rng.uniform(0, 5, 5)
        A = inst.A(i)
        s = x[3:]
        expect_s = -A.T @ inst.d + A.T @ inst.B @ A @ s + A.T @ inst.B @ z
        out = p.mean_grad(x, z)
        np.testing.assert_allclose(out[:3], inst.kappa[i])
        np.testing.assert_allclose(out[3:], expect_s)
        np.testing.assert_allclose(p.h(x), A @ s)


def test_gradient_is_partial_of_cost():
    inst = cn.generate_instance(3, 4, 2, seed=5)
    g = cn.to_game(inst)
    x = np.random.default_rng(1).uniform(0, 1, g.total_dim)
    ph = gm.phi(g, x)
    o = g.offsets
    step = 1e-6
    for i in range(3):
        for j in range(o[i], o[i + 1]):
            e = np.zeros_like(x)
            e[j] = step
            fd = (cn.profit_costs(inst, x + e)[i] - cn.profit_costs(inst, x - e)[i]) / (2 * step)
            assert fd == pytest.approx(ph[j], abs=1e-6)


def test_zero_noise_oracle_equals_mean():
    inst = cn.generate_instance(3, 3, 2, seed=3, noise_frac=0.0)
    p = cn.cournot_player(inst, 0)
    x, z = np.ones(4), np.ones(3)
    np.testing.assert_array_equal(p.grad_oracle(x, z, np.random.default_rng(0)), p.mean_grad(x, z))


def test_noise_ranges():
    inst = cn.generate_instance(2, 3, 2, seed=3)
    p = cn.cournot_player(inst, 0)
    x, z = np.ones(4), np.ones(3)
    rng = np.random.default_rng(0)
    dev = np.array([p.grad_oracle(x, z, rng) - p.mean_grad(x, z) for _ in range(2000)])
    assert np.all(np.abs(dev[:, :2]) <= 0.1 * inst.kappa[0] + 1e-12)
    A = inst.A(0)
    assert np.all(np.abs(dev[:, 2:]) <= 0.1 * (A.T @ inst.d) + 1e-12)
    se = np.concatenate([0.1 * inst.kappa[0], 0.1 * (A.T @ inst.d)]) / np.sqrt(3 * len(dev))
    assert np.all(np.abs(dev.mean(axis=0)) <= 4 * se)


def test_feasible_projection():
    g = cn.preset("desk-small")[0]
    rng = np.random.default_rng(0)
    for _ in range(50):
        y = g.project(rng.normal(scale=3, size=g.total_dim))
        for p, b in zip(g.players, g.split(y)):
            S = p.nonsmooth.set
            assert S.contains(b, tol=1e-8)
            np.testing.assert_allclose(S.project(b), b, atol=1e-12)


def test_monopoly_matches_scalar_bisection():
    inst = cn.generate_instance(1, 1, 1, seed=7, ranges={"d": (2.0, 3.0)})
    g = cn.to_game(inst)
    x = g.initial_point()
    for _ in range(20_000):
        x = g.project(x - 0.05 * gm.phi(g, x))
    k, d, b, cap = inst.kappa[0][0], inst.d[0], inst.b[0], inst.cap[0][0]

    # profit derivative along g = s
    def slope(s):
        return k - d + 2 * b * s

    lo, hi = 0.0, cap
    if slope(hi) <= 0:
        root = hi
    else:
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if slope(mid) < 0 else (lo, mid)
        root = 0.5 * (lo + hi)
    assert 0 < root < cap
    np.testing.assert_allclose(x, [root, root], atol=1e-8)


def test_presets():
    g, graph, hier, inst = cn.preset("paper-5.2")
    assert g.n_players == 20 and g.agg_dim == 10 and hier is None and graph.n == 20
    g, graph, hier, hinst = cn.preset("paper-5.3")
    assert len(hier) == 20
    for H in hinst.Hinv:
        np.testing.assert_array_equal(H, cn.PAPER_HINV)
    np.linalg.cholesky(cn.PAPER_HINV)
    for name in cn.PRESETS:
        assert cn.preset(name, seed=1)[0].n_players == cn.PRESETS[name]["N"]
    with pytest.raises(ConfigurationError):
        cn.preset("nope")


def test_hier_instance_checks():
    base = cn.generate_instance(2, 3, 2, seed=0)
    ok = cn.generate_hier_instance(base, 1)
    assert all(np.all(np.linalg.eigvalsh(H) > 0) for H in ok.Hinv)
    skew = cn.HierCournotInstance(base, ok.z, [np.array([[2.0, 0.2], [0.0, 1.0]])] * 2, ok.lt, ok.tt)
    assert skew.flags and np.allclose(skew.Hinv[0], skew.Hinv[0].T)
    with pytest.raises(ValidationError):
        cn.HierCournotInstance(base, ok.z, [np.array([[1.0, 2.0], [2.0, 1.0]])] * 2, ok.lt, ok.tt)
    with pytest.raises(ConfigurationError):
        cn.HierCournotInstance(base, [np.array([1.0, -1.0])] * 2, ok.Hinv, ok.lt, ok.tt)
    again = cn.HierCournotInstance.from_dict(ok.to_dict())
    assert again.to_dict() == ok.to_dict()


def test_closed_form_examples():
    # very negative lower bound: the unconstrained optimum H^{-1} t
    Hinv = np.array([[1.0, 0.2], [0.2, 0.5]])
    t = np.array([[0.3, 0.1], [0.0, 0.4]])
    term = hr.max_affine_term(np.zeros((2, 2)), [-1e9, -1e9], Hinv @ t, [0.0, 0.0], [1.0, 1.0])
    x = np.array([0.5, -1.0])
    np.testing.assert_allclose(term.closed_form_y(x), Hinv @ t @ x)
    # t = 0, l(x) = x
    term = hr.max_affine_term(np.eye(2), [0.0, 0.0], np.zeros((2, 2)), [0.0, 0.0], [1.0, 1.0])
    np.testing.assert_array_equal(term.closed_form_y(x), [0.5, 0.0])


def test_closed_form_matches_lower_level_solver():
    rng = np.random.default_rng(11)
    for _ in range(10):
        n = 3
        h = rng.uniform(0.5, 2.0, n)
        Tm = rng.uniform(-1, 1, (n, n))
        Lm = rng.uniform(-1, 1, (n, n))
        x = rng.uniform(-1, 1, n)
        y_closed = np.maximum(Lm @ x, (Tm @ x) / h)
        vi = cn.literal_lower_vi(np.diag(h), lambda v: Tm @ v, lambda v: Lm @ v)
        vi.R0_sq = 100.0
        y_alg = hr.solve_lower_vi(vi, x, 1e-10, np.random.default_rng(0))
        np.testing.assert_allclose(y_alg, y_closed, atol=1e-4)


def test_hier_terms_match_instance_closed_form():
    hinst = cn.preset("desk-hier")[3]
    terms = cn.hier_terms(hinst)
    rng = np.random.default_rng(2)
    for i, term in enumerate(terms):
        x = rng.uniform(0, 2, 2 * hinst.base.m_i[i])
        np.testing.assert_allclose(term.closed_form_y(x), cn.lower_level_closed_form(hinst, i, x))
        y = term.closed_form_y(x)
        assert term.value(x) == pytest.approx(hinst.z[i] @ y)
        # the attached lower level (identity map over {y >= l(x)}) reproduces the closed form
        y_alg = hr.solve_lower_vi(term.lower_vi, x, 1e-12, np.random.default_rng(0))
        np.testing.assert_allclose(y_alg, y, atol=1e-6)


def test_game_dict_round_trip():
    for name in ("desk-small", "desk-hier"):
        g, _, hier, _ = cn.preset(name)
        spec = gm.game_to_dict(g)
        g2 = cn.game_from_dict(spec)
        x = np.random.default_rng(0).uniform(0, 1, g.total_dim)
        np.testing.assert_array_equal(gm.phi(g, x), gm.phi(g2, x))
        h2 = cn.hier_terms_from_dict(spec)
        assert (h2 is None) == (hier is None)
