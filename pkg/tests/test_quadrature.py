import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from homsurf.errors import QuadratureError
from homsurf.quadrature import ChebyshevInterpolant, adaptive_simpson, chebyshev_nodes, periodic_breaks


def test_simpson_smooth_integrals():
    assert adaptive_simpson(np.sin, 0.0, np.pi) == pytest.approx(2.0, abs=1e-10)
    assert adaptive_simpson(np.exp, -1.0, 2.0) == pytest.approx(np.e**2 - np.exp(-1.0), abs=1e-9)


def test_simpson_uses_breaks_for_jumps():
    step = lambda x: np.where(x < 1.0 / 3.0, 1.0, 4.0)
    val = adaptive_simpson(step, 0.0, 1.0, breaks=[1.0 / 3.0])
    assert val == pytest.approx(1.0 / 3.0 + 4.0 * 2.0 / 3.0, abs=1e-12)


def test_simpson_abs_of_sine_has_kink():
    # mean of |sin 2y| over a period is 2/pi
    val = adaptive_simpson(lambda y: np.abs(np.sin(2 * y)), 0.0, np.pi) / np.pi
    assert val == pytest.approx(2.0 / np.pi, abs=1e-10)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=4), st.floats(-2, 0), st.floats(0.1, 2))
def test_simpson_exact_on_cubics(coef, a, w):
    p = np.polynomial.Polynomial(coef)
    b = a + w
    exact = p.integ()(b) - p.integ()(a)
    assert adaptive_simpson(p, a, b) == pytest.approx(exact, abs=1e-10 * (1 + abs(exact)))


def test_simpson_subdivision_limit():
    with pytest.raises(QuadratureError):
        adaptive_simpson(lambda x: np.sign(np.sin(1.0 / np.maximum(x, 1e-300))), 0.0, 1.0, tol=1e-14, max_sub=64)


def test_periodic_breaks_translate():
    out = periodic_breaks([0.25], 1.0, 0.0, 2.0)
    assert np.allclose(out, [0.25, 1.25])


def test_chebyshev_nodes_ascending_endpoints():
    x = chebyshev_nodes(8, -1.0, 3.0)
    assert x.size == 9 and x[0] == -1.0 and x[-1] == 3.0
    assert np.all(np.diff(x) > 0)


def test_chebyshev_interpolant_accuracy_and_nodes():
    f = lambda x: np.exp(np.sin(3 * x))
    I = ChebyshevInterpolant.adaptive(f, 0.0, 2.0, tol=1e-12)
    x = np.linspace(0.0, 2.0, 1001)
    assert np.max(np.abs(I(x) - f(x))) < 1e-10
    # evaluation exactly at a node must not produce inf/inf
    nodes = chebyshev_nodes(I.n, 0.0, 2.0)
    assert np.all(np.isfinite(I(nodes)))


@given(st.floats(0.0, 2.0))
def test_chebyshev_scalar_matches_vector(x):
    I = ChebyshevInterpolant.from_function(np.cos, 0.0, 2.0, 24)
    assert float(I(x)) == pytest.approx(float(I(np.array([x]))[0]), abs=1e-15)
    assert float(I(x)) == pytest.approx(np.cos(x), abs=1e-12)
