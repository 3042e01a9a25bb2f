import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import optimize

from aggsolve import kernels
from aggsolve.kernels import _pykernels, available_backends

BACKENDS = available_backends()
finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_backend_flag_matches_module():
    assert kernels.BACKEND in BACKENDS
    assert kernels.project_box is BACKENDS[kernels.BACKEND].project_box


def test_compiled_backend_built():
    assert "cython" in BACKENDS, "compiled kernels missing; run pip install -e . --no-build-isolation"


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_box_ball_soft_threshold_hand_values(name):
    m = BACKENDS[name]
    np.testing.assert_array_equal(m.project_box(np.array([2.0, -3.0, 0.5]), -1.0, 1.0), [1.0, -1.0, 0.5])
    np.testing.assert_allclose(m.project_ball(np.array([3.0, 4.0]), np.zeros(2), 1.0), [0.6, 0.8])
    np.testing.assert_array_equal(m.project_ball(np.array([0.1, 0.2]), np.zeros(2), 1.0), [0.1, 0.2])
    np.testing.assert_allclose(m.soft_threshold(np.array([2.5, -0.3, -4.0]), 1.0), [1.5, 0.0, -3.0])


def _balanced_oracle(x, cap):
    """Projection by a generic constrained solver (independent of the breakpoint method)."""
    n = cap.size
    cons = [{"type": "eq", "fun": lambda y: y[n:].sum() - y[:n].sum()}]
    bounds = [(0, c) for c in cap] + [(0, None)] * n
    res = optimize.minimize(lambda y: 0.5 * np.sum((y - x) ** 2), np.zeros(2 * n),
                            jac=lambda y: y - x, bounds=bounds, constraints=cons,
                            method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    return res.x


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_balanced_projection_matches_generic_qp(name):
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = int(rng.integers(1, 6))
        x = rng.normal(size=2 * n) * 2
        cap = rng.uniform(0.5, 2.5, n)
        np.testing.assert_allclose(BACKENDS[name].project_balanced(x, cap), _balanced_oracle(x, cap),
                                   atol=1e-6)


@given(st.integers(1, 12).flatmap(lambda n: st.tuples(
    arrays(np.float64, 2 * n, elements=finite),
    arrays(np.float64, n, elements=st.floats(0.1, 5.0)))))
def test_balanced_projection_is_a_projection(data):
    x, cap = data
    n = cap.size
    for m in BACKENDS.values():
        p = m.project_balanced(x, cap)
        g, s = p[:n], p[n:]
        assert np.all(g >= -1e-12) and np.all(g <= cap + 1e-12) and np.all(s >= -1e-12)
        assert abs(g.sum() - s.sum()) <= 1e-9 * (1 + np.abs(x).sum())
        # variational characterization against a few feasible points
        rng = np.random.default_rng(0)
        for _ in range(5):
            gy = rng.uniform(0, cap)
            w = rng.dirichlet(np.ones(n))
            y = np.concatenate([gy, w * gy.sum()])
            assert (x - p) @ (y - p) <= 1e-8 * (1 + np.abs(x).sum() ** 2)
        np.testing.assert_allclose(m.project_balanced(p, cap), p, atol=1e-10)


@given(arrays(np.float64, st.integers(1, 20), elements=finite), st.floats(0.0, 10.0))
def test_backends_agree(x, t):
    ref = _pykernels
    for m in BACKENDS.values():
        np.testing.assert_allclose(m.soft_threshold(x, t), ref.soft_threshold(x, t), atol=1e-14)
        np.testing.assert_allclose(m.project_box(x, -1.0, 2.0), ref.project_box(x, -1.0, 2.0))
        np.testing.assert_allclose(m.project_ball(x, np.zeros_like(x), 1.5),
                                   ref.project_ball(x, np.zeros_like(x), 1.5), atol=1e-14)
        if x.size % 2 == 0:
            cap = np.full(x.size // 2, 1.7)
            np.testing.assert_allclose(m.project_balanced(x, cap), ref.project_balanced(x, cap),
                                       atol=1e-11)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_dykstra_simplex(name):
    # probability simplex in 3D: projection of (1, 1, 1) + t * e1 has a closed form
    A = -np.eye(3)
    b = np.zeros(3)
    E = np.ones((1, 3))
    d = np.ones(1)
    y, it, err = BACKENDS[name].dykstra_polyhedron(np.array([2.0, 0.0, 0.0]), A, b, E,
                                                     np.linalg.pinv(E), d, 1e-12, 10_000)
    np.testing.assert_allclose(y, [1.0, 0.0, 0.0], atol=1e-9)
    assert err <= 1e-10
