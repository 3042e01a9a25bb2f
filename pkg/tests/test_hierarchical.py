import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggsolve import game as gm
from aggsolve import hierarchical as hr
from aggsolve import tikhonov as tk
from aggsolve.errors import ConfigurationError, UnsupportedOperationError
from aggsolve.schedules import ParamSchedules, hierarchical_exponents
from toys import complete_graph, coupled_game, scalar_player


def _hier_params(n, seed=0, mu0=1.0):
    a, b, c, d = hierarchical_exponents(0.1, 0.05)
    rng = np.random.default_rng(seed)
    return ParamSchedules.power(n, a, b, "uniform(4,5)", "uniform(2,3)", rng=rng, mu0=mu0, d=d, eps0=1.0, c=c)


def _quadratic_abs(lo=-2.0, hi=2.0, center=0.0):
    """``f(x) = x^2 / 2`` plus ``|x - center|`` on ``[lo, hi]``."""
    return gm.GameSpec([scalar_player(1.0, 0.0, lo=lo, hi=hi)], 1), [hr.abs_term(center)]


def test_sphere_and_ball_samplers():
    rng = np.random.default_rng(0)
    S = hr.sample_sphere(rng, 3, 20_000)
    np.testing.assert_allclose(np.linalg.norm(S, axis=1), 1.0)
    assert np.abs(S.mean(axis=0)).max() < 0.03
    B = hr.sample_ball(rng, 3, 20_000)
    r = np.linalg.norm(B, axis=1)
    assert r.max() <= 1.0
    # radius of a uniform point in the 3-ball has mean 3/4
    assert r.mean() == pytest.approx(0.75, abs=0.01)
    assert hr.sample_sphere(rng, 2).shape == (2,)


def test_lower_vi_fixed_point_identity():
    vi = hr.affine_lower_vi(np.eye(1), lambda x: x, gm.Box(-10.0, 10.0), gamma=0.5)
    for x in (-3.0, 0.4, 7.5):
        y = hr.solve_lower_vi(vi, np.array([x]), 0.0, None, n_iter=60)
        assert y[0] == pytest.approx(x, abs=1e-14)


def test_lower_vi_parameter_errors():
    with pytest.raises(ConfigurationError):
        hr.affine_lower_vi(np.eye(2), lambda x: x, gm.Box(-1.0, 1.0, dim=2), gamma=2.5).step()
    vi = hr.affine_lower_vi(np.eye(1), lambda x: x, gm.Box(-1.0, 1.0), gamma=0.5)
    q = vi.contraction()
    bad = hr.affine_lower_vi(np.eye(1), lambda x: x, gm.Box(-1.0, 1.0), gamma=0.5, rho=q)
    with pytest.raises(ConfigurationError):
        hr.solve_lower_vi(bad, np.zeros(1), 1e-3, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        hr.solve_lower_vi(vi, np.zeros(1), 0.0, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        hr.affine_lower_vi(-np.eye(1), lambda x: x, gm.Box(-1.0, 1.0))


def test_iteration_count_grows_logarithmically():
    vi = hr.affine_lower_vi(np.array([[2.0, 0.3], [0.3, 1.0]]), lambda x: x, gm.Box(-5.0, 5.0, dim=2))
    rate = max(vi.batch_ratio(), vi.contraction())
    step = math.log(2) / math.log(1 / rate)
    rng = np.random.default_rng(0)
    prev = None
    for eps in (1e-2, 5e-3, 2.5e-3, 1.25e-3):
        _, info = hr.solve_lower_vi(vi, np.zeros(2), eps, rng, return_info=True)
        if prev is not None:
            assert abs((info.iterations - prev) - step) <= 1.0
        prev = info.iterations


def test_lower_vi_noisy_converges_to_closed_form():
    H = np.array([[2.0, 0.5, 0.0], [0.5, 1.5, 0.2], [0.0, 0.2, 1.0]])
    t = np.array([0.3, -0.2, 0.5])
    vi = hr.affine_lower_vi(H, lambda x: t + x, gm.Box(-2.0, 2.0, dim=3), noise_std=0.5)
    x = np.array([0.1, 0.2, -0.1])
    y_true = np.linalg.solve(H, t + x)
    errs = [np.sum((hr.solve_lower_vi(vi, x, 1e-3, np.random.default_rng(s)) - y_true) ** 2)
            for s in range(10)]
    assert np.mean(errs) <= 1e-3


@pytest.mark.parametrize("mu", [0.4, 0.1])
def test_smoothed_abs_at_zero(mu):
    sv = hr.smoothed_value(hr.abs_term(), np.zeros(1), mu, 100_000, np.random.default_rng(1))
    assert abs(sv.mean - mu / 2) <= 3 * sv.stderr


def test_smoothing_affine_is_identity():
    L = np.array([[1.0, -2.0]])
    term = hr.max_affine_term(L, [0.5], L, [0.5], [1.5])
    x = np.array([0.3, 0.7])
    sv = hr.smoothed_value(term, x, 0.5, 50_000, np.random.default_rng(2))
    assert abs(sv.mean - term.value(x)) <= 3 * sv.stderr


@settings(max_examples=20)
@given(st.floats(-1.5, 1.5), st.floats(0.01, 1.0), st.integers(0, 10_000))
def test_smoothing_sandwich(x, mu, seed):
    term = hr.abs_term(0.2, weight=2.0)
    sv = hr.smoothed_value(term, np.array([x]), mu, 4000, np.random.default_rng(seed))
    d = term.value(np.array([x]))
    assert d <= sv.mean + 3 * sv.stderr + 1e-12
    assert sv.mean <= d + mu * term.L0 + 3 * sv.stderr + 1e-12


def test_mu_outside_range_rejected():
    with pytest.raises(ConfigurationError):
        hr.smoothed_value(hr.abs_term(mu0=0.5), np.zeros(1), 0.6, 10, np.random.default_rng(0))


def test_estimator_affine_mean():
    c = np.array([1.0, 2.0, 0.5])
    term = hr.max_affine_term(np.eye(3), np.zeros(3), np.eye(3), np.zeros(3), c)
    G = hr.grad_estimator_batch(term, np.array([0.2, -0.4, 1.0]), 0.3, 100_000, np.random.default_rng(3))
    se = G.std(axis=0, ddof=1) / np.sqrt(len(G))
    assert np.all(np.abs(G.mean(axis=0) - c) <= 3 * se + 1e-12)


def test_estimator_abs_moments():
    term = hr.abs_term()
    mu = 0.2
    G = hr.grad_estimator_batch(term, np.zeros(1), mu, 100_000, np.random.default_rng(4))
    se = G.std(ddof=1) / np.sqrt(G.size)
    assert abs(G.mean()) <= 3 * se
    assert np.mean(np.sum(G**2, axis=1)) <= hr.second_moment_bound(1, term.L0, term.Ltilde0, 0.0, mu)
    assert np.mean(np.linalg.norm(G, axis=1)) <= hr.first_moment_bound(1, term.L0, term.Ltilde0, 0.0, mu)


def test_batch_estimator_matches_single_draws():
    term = hr.abs_term(0.1)
    x = np.array([0.05])
    a = hr.grad_estimator_batch(term, x, 0.2, 5, np.random.default_rng(8))
    rng = np.random.default_rng(8)
    b = np.array([hr.grad_estimator(term, x, 0.2, 0.0, rng) for _ in range(5)])
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_estimator_matches_finite_difference_of_smoothed_value():
    L = np.array([[1.0, 0.0], [0.0, 1.0]])
    U = np.array([[-1.0, 0.0], [0.0, 0.5]])
    term = hr.max_affine_term(L, [0.0, 0.0], U, [0.0, 0.0], [1.0, 1.0])
    x = np.array([0.1, -0.2])
    mu = 0.5
    G = hr.grad_estimator_batch(term, x, mu, 200_000, np.random.default_rng(5))
    est = G.mean(axis=0)
    se = G.std(axis=0, ddof=1) / np.sqrt(len(G))
    h = 1e-3
    fd = np.empty(2)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        # common random numbers make the difference quotient low-variance
        up = hr.smoothed_value(term, x + e, mu, 400_000, np.random.default_rng(6)).mean
        dn = hr.smoothed_value(term, x - e, mu, 400_000, np.random.default_rng(6)).mean
        fd[j] = (up - dn) / (2 * h)
    assert np.all(np.abs(est - fd) <= 4 * se + 5e-3)


def test_estimator_with_inexact_lower_level():
    term = hr.without_closed_form(hr.abs_term())
    rng = np.random.default_rng(7)
    G = np.array([hr.grad_estimator(term, np.array([0.5]), 0.1, 1e-6, rng) for _ in range(200)])
    # away from the kink the smoothed gradient is 1
    assert G.mean() == pytest.approx(1.0, abs=0.05)
    assert np.mean(G**2) <= hr.second_moment_bound(1, term.L0, term.Ltilde0, 1e-6, 0.1)


def test_algorithm2_zero_terms_reproduce_algorithm1():
    g = coupled_game(3, noise_std=0.3)
    params = _hier_params(3)
    for engine in ("generic", "auto"):
        cfg = tk.RunConfig(horizon=400, record_every=40, seed=11, engine=engine)
        a = tk.run_algorithm1(g, complete_graph(3), params, cfg)
        b = hr.run_algorithm2(g, [hr.zero_term(1), None, hr.zero_term(1)], complete_graph(3), params, cfg)
        assert a.equals(b)


@pytest.mark.parametrize("name", ["desk-hier", "toy"])
def test_algorithm2_fast_engine_matches_generic(name):
    from aggsolve.cournot import preset
    if name == "toy":
        g, hier = _quadratic_abs()
        graph = complete_graph(1)
    else:
        g, graph, hier, _ = preset(name)
    params = _hier_params(g.n_players)
    runs = {eng: hr.run_algorithm2(g, hier, graph, params,
                                   tk.RunConfig(horizon=600, record_every=200, seed=3, engine=eng))
            for eng in ("fast", "generic")}
    assert runs["fast"].config["engine"] == "fast"
    np.testing.assert_allclose(runs["fast"].x_final, runs["generic"].x_final, atol=1e-11)
    inexact = [hr.without_closed_form(t) for t in hier]
    with pytest.raises(ConfigurationError):
        hr.run_algorithm2(g, inexact, graph, params, tk.RunConfig(horizon=5, engine="fast"))


def test_algorithm2_input_checks():
    g, hier = _quadratic_abs()
    with pytest.raises(ConfigurationError):
        hr.run_algorithm2(g, hier + hier, complete_graph(1), _hier_params(1), tk.RunConfig(horizon=5))
    no_mu = ParamSchedules.power(1, 0.6, 0.3, 4.0, 2.0)
    with pytest.raises(ConfigurationError):
        hr.run_algorithm2(g, hier, complete_graph(1), no_mu, tk.RunConfig(horizon=5))
    bad = ParamSchedules.power(1, 0.6, 0.3, 4.0, 2.0, mu0=1.0, d=0.0)
    with pytest.raises(ConfigurationError):
        hr.run_algorithm2(g, hier, complete_graph(1), bad, tk.RunConfig(horizon=5))
    l1 = gm.GameSpec([gm.affine_player([[1.0]], [[1.0]], [[0.0]], [0.0], gm.L1(1.0))], 1)
    with pytest.raises(ConfigurationError):
        hr.run_algorithm2(l1, hier, complete_graph(1), _hier_params(1), tk.RunConfig(horizon=5))


def test_algorithm2_parallel_equals_serial():
    g = coupled_game(3, noise_std=0.2)
    hier = [hr.abs_term(0.1 * i) for i in range(3)]
    params = _hier_params(3)
    runs = [hr.run_algorithm2(g, hier, complete_graph(3), params,
                              tk.RunConfig(horizon=200, record_every=50, seed=2, workers=w, engine="generic"))
            for w in (0, 3)]
    assert runs[0].equals(runs[1])


def test_algorithm2_one_player_toy():
    g, hier = _quadratic_abs()
    finals = []
    for r in range(10):
        cfg = tk.RunConfig(horizon=100_000, record_every=100_000, seed=r, x0=np.array([1.5]))
        finals.append(hr.run_algorithm2(g, hier, complete_graph(1), _hier_params(1), cfg).x_final[0])
    assert np.mean(np.abs(finals)) < 5e-2


def test_proximity_examples():
    g, hier = _quadratic_abs(-1.0, 1.0)
    zero = hr.smoothed_ne_gap_bound_check(g, [None], 0.1, 1.0)
    assert zero.distance == 0.0 and zero.ok
    rep = hr.smoothed_ne_gap_bound_check(g, hier, 0.1, 1.0)
    assert rep.bound == pytest.approx(np.sqrt(0.1))
    assert rep.ok and rep.distance < 0.1 * rep.bound
    half = hr.smoothed_ne_gap_bound_check(g, hier, 0.05, 1.0)
    assert half.bound == pytest.approx(rep.bound / np.sqrt(2))
    assert half.ok


def test_proximity_refuses_weakly_monotone():
    g = gm.GameSpec([scalar_player(0.0, 0.0)], 1)
    with pytest.raises(UnsupportedOperationError):
        hr.smoothed_ne_gap_bound_check(g, [hr.abs_term()], 0.1, 1.0)
