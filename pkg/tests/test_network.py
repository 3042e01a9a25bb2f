import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aggsolve import network as nw
from aggsolve.errors import ConfigurationError, ValidationError


def test_static_identity_and_complete():
    I = nw.GraphSchedule.static(np.eye(3))
    for k in (0, 5, 1000):
        np.testing.assert_array_equal(nw.weights_at(I, k), np.eye(3))
    J = nw.GraphSchedule.static(np.full((4, 4), 0.25))
    assert np.all(J.weights_at(7) == 0.25)


def test_metropolis_weights_formula():
    rng = np.random.default_rng(0)
    adj = nw.erdos_renyi_adjacency(8, 0.4, rng)
    W = nw.metropolis_weights(adj)
    nw.check_doubly_stochastic(W)
    deg = adj.sum(axis=1) + 1
    for i in range(8):
        for j in range(8):
            if i != j:
                assert W[i, j] == (1.0 / max(deg[i], deg[j]) if adj[i, j] else 0.0)
        assert W[i, i] == pytest.approx(1.0 - (W[i].sum() - W[i, i]))
        assert W[i, i] > 0


def test_non_doubly_stochastic_names_row_or_column():
    W = np.array([[0.5, 0.5], [0.2, 0.8]])
    with pytest.raises(ValidationError, match="column"):
        nw.GraphSchedule.static(W)
    with pytest.raises(ValidationError, match="row 0"):
        nw.check_doubly_stochastic(np.array([[0.6, 0.5], [0.4, 0.5]]))
    bad = nw.GraphSchedule.custom(2, lambda k: [[1.0, 0.5], [0.0, 0.5]])
    with pytest.raises(ValidationError):
        bad.weights_at(0)


def test_erdos_renyi_deterministic_and_connected():
    a = nw.GraphSchedule.erdos_renyi(20, 0.2, seed=3, reweave_period=10)
    b = nw.GraphSchedule.erdos_renyi(20, 0.2, seed=3, reweave_period=10)
    for k in (0, 9, 10, 55):
        np.testing.assert_array_equal(a.weights_at(k), b.weights_at(k))
        assert nw.is_strongly_connected(a.weights_at(k) > 0)
    assert np.array_equal(a.weights_at(0), a.weights_at(9))
    assert not np.array_equal(a.weights_at(0), a.weights_at(10))


def test_erdos_renyi_gives_up_after_retries():
    with pytest.raises(ValidationError):
        nw.GraphSchedule.erdos_renyi(30, 0.01, seed=0)


def test_validate_schedule_examples():
    # two matchings on 4 nodes whose union is the ring 0-1-2-3-0
    M1 = np.array([[.5, .5, 0, 0], [.5, .5, 0, 0], [0, 0, .5, .5], [0, 0, .5, .5]])
    M2 = np.array([[.5, 0, 0, .5], [0, .5, .5, 0], [0, .5, .5, 0], [.5, 0, 0, .5]])
    assert nw.validate_schedule(nw.GraphSchedule.cyclic([M1, M2], period=2), 20).ok
    rep = nw.validate_schedule(nw.GraphSchedule.cyclic([M1, M2], period=1), 20)
    assert not rep.ok and rep.violation_k == 0
    for P in (1, 3):
        assert not nw.validate_schedule(nw.GraphSchedule.static(np.eye(3), period=P), 10).ok
    er = nw.GraphSchedule.erdos_renyi(20, 0.2, seed=0)
    assert nw.validate_schedule(er, 50).ok


def test_validate_schedule_reports_floor_violation():
    W = nw.metropolis_weights(nw.ring_adjacency(5))
    rep = nw.validate_schedule(nw.GraphSchedule.static(W, varsigma=0.5), 5)
    assert not rep.ok and "floor" in rep.violation
    with pytest.raises(ConfigurationError):
        nw.validate_schedule(nw.GraphSchedule.static(W, period=4), 2)


def test_mixing_constants_two_nodes():
    theta, beta = nw.mixing_constants(0.5, 2, 1)
    assert theta == pytest.approx((31 / 32) ** -2)
    assert beta == pytest.approx(31 / 32)
    rep = nw.mixing_diagnostics(nw.GraphSchedule.static([[0.5, 0.5], [0.5, 0.5]]), 30)
    assert rep.theta == pytest.approx(theta) and rep.beta == pytest.approx(beta)
    assert rep.bound_holds


def test_complete_mixing_zero_after_one_step():
    rep = nw.mixing_diagnostics(nw.GraphSchedule.static(np.full((5, 5), 0.2)), 20)
    assert np.all(rep.empirical_max_dev[0:] <= 1e-15)


def test_ring_decay_rate_below_beta():
    W = nw.metropolis_weights(nw.ring_adjacency(5))
    rep = nw.mixing_diagnostics(nw.GraphSchedule.static(W), 60)
    lam2 = np.sort(np.abs(np.linalg.eigvalsh(W)))[-2]
    assert rep.fitted_rate() <= rep.beta
    assert rep.fitted_rate() == pytest.approx(lam2, rel=0.05)
    assert rep.bound_holds


def test_products_stay_doubly_stochastic():
    sched = nw.GraphSchedule.erdos_renyi(6, 0.5, seed=1, reweave_period=1)
    Phi = np.eye(6)
    for k in range(1, 501):
        Phi = sched.weights_at(k) @ Phi
        if k % 100 == 0:
            nw.check_doubly_stochastic(Phi, tol=1e-9)


@given(st.integers(2, 10), st.floats(0.2, 1.0), st.integers(0, 10_000), st.integers(1, 3))
def test_geometric_bound_property(n, p, seed, reweave):
    sched = nw.GraphSchedule.erdos_renyi(n, p, seed, reweave_period=reweave)
    rep = nw.mixing_diagnostics(sched, 60, starts=(0, 7))
    assert rep.bound_holds


def test_round_trip_dict():
    for sched in (nw.GraphSchedule.erdos_renyi(5, 0.5, 2, 3),
                  nw.GraphSchedule.static(np.full((3, 3), 1 / 3)),
                  nw.GraphSchedule.cyclic([np.eye(2), [[0.5, 0.5], [0.5, 0.5]]])):
        again = nw.GraphSchedule.from_dict(sched.to_dict())
        for k in range(7):
            np.testing.assert_array_equal(again.weights_at(k), sched.weights_at(k))
    ring = nw.GraphSchedule.from_dict({"kind": "ring", "n": 5})
    assert ring.weights_at(0)[0, 1] == pytest.approx(1 / 3)
    with pytest.raises(ConfigurationError):
        nw.GraphSchedule.from_dict({"kind": "erdos_renyi", "n": 4})
