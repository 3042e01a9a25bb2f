import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggsolve import game as gm
from aggsolve import hierarchical as hr
from aggsolve import metrics as mt
from aggsolve.errors import ConfigurationError, UnsupportedOperationError
from toys import coupled_game, identity_game, scalar_player


def _unit_game(lo=0.0, hi=1.0):
    return gm.GameSpec([scalar_player(1.0, 0.0, lo=lo, hi=hi)], 1)


def test_time_average_examples():
    assert mt.time_average([2.5], [0.7]) == 2.5
    assert mt.time_average([1.0, 2.0, 6.0], [0.3, 0.3, 0.3]) == pytest.approx(3.0)
    assert mt.time_average([0.0, 3.0], [1.0, 0.5]) == pytest.approx(1.0)
    ta = mt.TimeAverage(2)
    ta.update([0.0, 1.0], 1.0)
    ta.update([3.0, 1.0], 0.5)
    np.testing.assert_allclose(ta.value, [1.0, 1.0])
    with pytest.raises(ConfigurationError):
        mt.TimeAverage(1).value


def test_consensus_error_examples():
    assert mt.consensus_error(np.ones((4, 3))) == 0.0
    assert mt.consensus_error(np.array([[0.0], [2.0]])) == pytest.approx(np.sqrt(2))
    rng = np.random.default_rng(0)
    V = rng.normal(size=(5, 2))
    assert mt.consensus_error(np.full((5, 5), 0.2) @ V) <= 1e-12


def test_gap_one_dimensional_examples():
    g = _unit_game()
    for method, kw in (("grid", {"n_per_axis": 10_001}), ("multistart", {"rng": 0})):
        assert mt.gap(g, np.array([0.0]), method, **kw).value == pytest.approx(0.0, abs=1e-12)
        assert mt.gap(g, np.array([1.0]), method, **kw).value == pytest.approx(0.25, abs=1e-8)
    r = mt.gap_grid(g, np.array([1.0]), n_per_axis=10_001)
    assert r.value <= 0.25 <= r.upper
    np.testing.assert_allclose(r.argmax, [0.5])


def test_grid_refused_above_cap():
    with pytest.raises(UnsupportedOperationError):
        mt.gap_grid(identity_game(7), np.zeros(7))


def test_gap_zero_at_solution():
    g = coupled_game(3)
    x = np.zeros(3)
    for _ in range(5000):
        x = g.project(x - 0.2 * gm.phi(g, x))
    assert mt.residual_metric(g, x) < 1e-12
    r = mt.gap_grid(g, x, n_per_axis=41)
    assert r.value <= r.tolerance
    assert mt.gap_multistart(g, x, rng=1).value <= 1e-10


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_gap_nonnegative_and_methods_agree(seed):
    rng = np.random.default_rng(seed)
    g = coupled_game(2)
    x = rng.uniform(-2, 2, 2)
    grid = mt.gap_grid(g, x, n_per_axis=201)
    ms = mt.gap_multistart(g, x, rng=seed)
    assert grid.value >= 0 and ms.value >= 0
    assert ms.value <= grid.upper + 1e-9
    assert abs(grid.value - ms.value) <= grid.tolerance


def test_residual_matches_fixed_point_residual():
    rng = np.random.default_rng(4)
    g = coupled_game(3)
    for _ in range(50):
        x = rng.uniform(-3, 3, 3)
        assert mt.residual_metric(g, x) == pytest.approx(gm.fixed_point_residual(g, x, 1.0), abs=1e-14)
    x0 = np.full(3, 1.5)
    assert mt.residual_metric(g, x0, x0=x0) == pytest.approx(1.0)


def _abs_game(lo, hi):
    return gm.GameSpec([scalar_player(1.0, 0.0, lo=lo, hi=hi)], 1), [hr.abs_term()]


def test_gap_hierarchical_examples():
    g, hier = _abs_game(-1.0, 1.0)
    assert mt.gap_hierarchical(g, hier, np.array([0.0])).value == pytest.approx(0.0, abs=1e-12)
    assert mt.gap_hierarchical(g, hier, np.array([1.0]), n_per_axis=2001).value == pytest.approx(1.0, abs=1e-9)
    gz = coupled_game(2)
    x = np.array([0.7, -1.1])
    a = mt.gap_hierarchical(gz, [hr.zero_term(1), None], x, n_per_axis=101)
    b = mt.gap_grid(gz, x, n_per_axis=101)
    assert a.value == pytest.approx(b.value, abs=1e-14)


def test_hierarchical_M_examples():
    g, hier = _abs_game(-2.0, 2.0)
    assert mt.hierarchical_residual_M(g, hier, np.array([0.0])) == pytest.approx(0.0, abs=1e-9)
    assert mt.hierarchical_residual_M(g, hier, np.array([0.5])) == pytest.approx(1.5)
    # smooth term: a single selection, equal to the residual of phi + grad d
    smooth = hr.max_affine_term([[2.0]], [0.0], [[-5.0]], [-10.0], [1.0])
    x = np.array([0.3])
    expect = abs(0.3 - np.clip(0.3 - (0.3 + 2.0), -2, 2))
    assert mt.hierarchical_residual_M(g, [smooth], x) == pytest.approx(expect)


def test_log_slope():
    ks = np.logspace(2, 5, 10)
    assert mt.log_slope(ks, 3 * ks**-0.4) == pytest.approx(-0.4)
    assert np.isnan(mt.log_slope([1.0], [1.0]))


def test_trace_csv_round_trip(tmp_path):
    tr = mt.RunTrace(config={"seed": 3})
    tr.add(0, residual=1.0, gap=0.5)
    tr.add(10, residual=0.1 / 3, gap=np.float64(0.25))
    tr.x_final = np.array([1.0, 2.0])
    path = tr.to_csv(tmp_path / "t.csv")
    back = mt.RunTrace.from_csv(path)
    assert back.equals(tr) and back.config == {"seed": 3}
    assert "np.float64" not in path.read_text()


def test_trace_csv_schema_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("k,residual\n1,2\n")
    with pytest.raises(ConfigurationError, match="not a"):
        mt.RunTrace.from_csv(p)
    p.write_text(f"# {mt.TRACE_SCHEMA}\nk,residual\n1,2,3\n")
    with pytest.raises(ConfigurationError, match="fields"):
        mt.RunTrace.from_csv(p)
    p.write_text(f"# {mt.TRACE_SCHEMA}\nk,residual\n1,abc\n")
    with pytest.raises(ConfigurationError):
        mt.RunTrace.from_csv(p)


def test_trace_missing_column_message():
    tr = mt.RunTrace()
    tr.add(1, residual=1.0)
    with pytest.raises(KeyError, match="available"):
        tr["gap"]
