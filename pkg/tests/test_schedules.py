import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aggsolve import schedules as sc
from aggsolve.errors import ConfigurationError, UnsupportedOperationError


def _params(a, b, n=3, **kw):
    return sc.ParamSchedules.power(n, a, b, [4.0, 4.5, 5.0][:n], [2.0, 2.5, 3.0][:n], **kw)


def test_power_schedule_value():
    s = sc.PowerSchedule(offset=4.0, exponent=0.5, coef=2.0)
    assert s.value(5) == pytest.approx(2.0 / 3.0)
    np.testing.assert_allclose(s.values(3, start=5), [2 / 3, 2 / np.sqrt(10), 2 / np.sqrt(11)])
    with pytest.raises(ConfigurationError):
        sc.PowerSchedule(offset=0.0, exponent=0.5)


@given(st.floats(0.1, 10.0), st.floats(0.01, 1.0))
def test_power_schedule_strictly_decreasing_on_log_grid(offset, exponent):
    s = sc.PowerSchedule(offset, exponent)
    ks = np.unique(np.logspace(0, 6, 200).astype(np.int64))
    assert np.all(s.value(ks + 1) < s.value(ks))
    assert np.all(s.value(ks) > 0)


@pytest.mark.parametrize("a,b,ok", [(0.8, 0.05, True), (0.5, 0.3, False), (0.6, 0.5, False),
                                    (0.6, 0.3, True), (0.75, 0.24, True), (0.7, 0.0, False)])
def test_validate_basic(a, b, ok):
    assert sc.validate_basic(_params(a, b)).ok is ok


def test_validate_basic_reports_each_violation():
    rep = sc.validate_basic(_params(0.5, 0.6))
    assert len(rep.violations) == 3


def test_mixed_exponents_unsupported():
    s = _params(0.8, 0.05)
    s._alpha_exp = np.array([0.8, 0.7, 0.8])
    with pytest.raises(UnsupportedOperationError):
        sc.validate_basic(s)


def test_validate_corollary1_examples():
    rep = sc.validate_corollary1(_params(0.6, 0.3))
    assert rep.ok and rep.info["tau"] == pytest.approx(0.1)
    assert not sc.validate_corollary1(_params(0.75, 0.0)).ok
    rep = sc.validate_corollary1(_params(0.75, 0.24))
    assert not rep.ok
    assert rep.info["tau_from_a"] == pytest.approx(0.25) and rep.info["tau_from_b"] == pytest.approx(0.13)
    assert sc.validate_basic(_params(0.75, 0.24)).ok


def test_validate_hierarchical_examples():
    tau, tau_p = 0.1, 0.05
    a, b, c, d = sc.hierarchical_exponents(tau, tau_p)
    assert (a, d) == pytest.approx((0.6, 0.45)) and c == pytest.approx(1.8)
    rep = sc.validate_hierarchical(_params(a, b, mu0=1.0, d=d, eps0=1.0, c=c))
    assert rep.ok and rep.info["case"] == 3
    d = 0.2
    rep = sc.validate_hierarchical(_params(0.6, 0.1, mu0=1.0, d=d, eps0=1.0, c=0.6 + 2 * d))
    assert not rep.ok
    rep = sc.validate_hierarchical(_params(0.6, 0.1, mu0=1.0, d=0.0, eps0=1.0, c=1.5))
    assert not rep.ok


def test_hierarchical_without_eps_means_exact():
    rep = sc.validate_hierarchical(_params(0.6, 0.1, mu0=1.0, d=0.1))
    assert rep.ok and rep.info["c"] == np.inf and rep.info["case"] == 2


@pytest.mark.parametrize("s1,s2,case", [(-1, -1, 1), (1, -1, 2), (-1, 1, 3), (1, 1, 4)])
def test_hierarchical_case_table(s1, s2, case):
    a = 0.6
    d = 1 - a - 0.1 * s1
    c = 1 + 2 * d - 0.1 * s2
    assert sc.hierarchical_case(a, c, d) == case


def test_derived_extremes_consistent():
    s = _params(0.8, 0.05)
    A = s.alpha_table(50)
    np.testing.assert_array_equal(s.alpha_max(50), A.max(axis=1))
    np.testing.assert_array_equal(s.alpha_min(50), A.min(axis=1))
    np.testing.assert_allclose(A[7], s.alpha_at(7))
    np.testing.assert_allclose(s.eta_table(10, start=3)[0], s.eta_at(3))
    assert np.all(s.alpha_table(5, start=10) == s.alpha_table(15)[10:])


def test_unregularized_eta_zero():
    s = _params(0.75, 0.24, regularized=False)
    assert np.all(s.eta_at(4) == 0) and np.all(s.eta_table(5) == 0)


def test_partial_sums_match_integral_bounds():
    K = 1_000_000
    for off, e in ((4.0, 0.8), (4.0, 1.6), (2.0, 0.85)):
        total = np.sum((np.arange(K) + off) ** -e)
        lo, hi = sc.partial_sum_bounds(off, e, K)
        assert lo <= total <= hi
        if e < 1:
            assert total <= (K + off) ** (1 - e) / (1 - e)
            assert abs(total - lo) <= 0.05 * total
    # divergent product sum and convergent square sum for a validated pair
    s = _params(0.8, 0.05)
    amin, emin = s.alpha_min(K), s.eta_min(K)
    prod = np.cumsum(amin * emin)
    # (k+5)^-0.85 lower-bounds the product termwise, and its integral bound diverges
    for k in (10**4, 10**5, K):
        assert prod[k - 1] >= sc.partial_sum_bounds(5.0, 0.85, k)[0]
    sq = np.cumsum(s.alpha_max(K) ** 2)
    tail_cap = 4.0**-1.6 + 4.0**-0.6 / 0.6
    assert sq[-1] <= tail_cap and sq[-1] - sq[K // 2] <= 1e-3


def test_offsets_parsing():
    rng = np.random.default_rng(0)
    lam = sc.parse_offsets("uniform(4,5)", 20, rng)
    assert lam.shape == (20,) and np.all((lam >= 4) & (lam <= 5))
    np.testing.assert_array_equal(sc.parse_offsets(2.0, 3, None), [2.0, 2.0, 2.0])
    with pytest.raises(ConfigurationError):
        sc.parse_offsets("gauss(1,2)", 3, rng)
    with pytest.raises(ConfigurationError):
        sc.parse_offsets([1.0, 2.0], 3, None)


def test_config_round_trip():
    s = _params(0.6, 0.1, mu0=0.5, d=0.2, eps0=0.1, c=1.5)
    again = sc.ParamSchedules.from_config(s.to_config(), 3)
    np.testing.assert_array_equal(again.alpha_table(20), s.alpha_table(20))
    assert again.mu_at(3) == s.mu_at(3) and again.eps_at(3) == s.eps_at(3)


def test_empirical_check_warns():
    s = _params(0.8, 0.05)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        rep = sc.empirical_check(s.alpha_table(1000), s.eta_table(1000), K=1000)
    assert rep.ok and w
