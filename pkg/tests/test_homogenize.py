import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from homsurf.errors import ConfigError, SolverError
from homsurf.geometry import Bump, make_oscillation
from homsurf.homogenize import (
    CellCache, PeriodicCoefficient, Profile, cell_solve, graded_edges, homogenized_tensor, laminate_coefficient,
    laminate_diag, laminate_general, piecewise_constant, rho0_derivative, rho0_profile, shift_invariance_data,
    voigt_reuss,
)
from homsurf.quadrature import adaptive_simpson

ONE_FOUR = piecewise_constant([1.0, 4.0], [0.0, 0.5])


def constant_cell(M):
    M = np.asarray(M, dtype=float)
    return PeriodicCoefficient(M.shape[0], lambda x, y: np.broadcast_to(M, y.shape[:-1] + M.shape))


def cell_grid_field(blocks):
    """Coefficient constant on the cells of an m x m grid of 2x2 matrices."""
    m = blocks.shape[0]

    def A(x, y):
        idx = np.floor(np.mod(y, 1.0) * m).astype(int)
        return blocks[idx[..., 0], idx[..., 1]]

    return PeriodicCoefficient(2, A)


def random_spd_blocks(rng, m, lo=0.5, hi=5.0):
    Q = rng.normal(size=(m, m, 2, 2))
    Q, _ = np.linalg.qr(Q)
    w = rng.uniform(lo, hi, size=(m, m, 2))
    return np.einsum("...ij,...j,...kj->...ik", Q, w, Q)


# ----------------------------------------------------------------------------
# closed forms
# ----------------------------------------------------------------------------

def test_laminate_diag_one_four():
    np.testing.assert_allclose(laminate_diag(ONE_FOUR, ONE_FOUR), np.diag([2.5, 1.6]), atol=1e-12)


@given(st.floats(0.1, 10.0))
def test_laminate_diag_constant(c):
    g = lambda s: np.full(np.shape(s), c)
    np.testing.assert_allclose(laminate_diag(g, g), c * np.eye(2), rtol=1e-12)


def test_laminate_diag_bounds_check():
    with pytest.raises(ConfigError):
        laminate_diag(ONE_FOUR, ONE_FOUR, bounds=(1.0, 3.0))


def test_laminate_diag_matches_density_profile():
    # radial_graph: rho0(r) / r is the cell mean of sqrt(f'(y)^2 + 1)
    a = lambda s: np.sqrt(np.sin(2 * np.pi * s) ** 2 + 1.0)
    osc = make_oscillation("sin2")
    H = laminate_diag(a, a)
    assert H[0, 0] == pytest.approx(rho0_profile("radial_graph", 0.7, osc) / 0.7, abs=1e-10)


def test_laminate_general_diagonal_and_constant():
    pc = laminate_coefficient({(0, 0): ONE_FOUR, (1, 1): ONE_FOUR}, axis=0)
    np.testing.assert_allclose(laminate_general(pc), np.diag([1.6, 2.5]), atol=1e-12)
    M = np.array([[2.0, 0.3], [0.3, 1.0]])
    pcM = PeriodicCoefficient(2, constant_cell(M).A_cell, laminate_axis=1)
    np.testing.assert_allclose(laminate_general(pcM), M, atol=1e-12)


def _full_laminate(axis=0):
    a = piecewise_constant([1.0, 3.0, 2.0], [0.0, 0.25, 0.5])
    b = piecewise_constant([2.0, 1.0, 4.0], [0.0, 0.25, 0.5])
    c = piecewise_constant([0.5, -0.4, 0.2], [0.0, 0.25, 0.5])
    return laminate_coefficient({(0, 0): a, (1, 1): b, (0, 1): c}, axis=axis)


@pytest.mark.parametrize("axis", [0, 1])
def test_cell_solve_matches_laminate_general_aligned(axis):
    pc = _full_laminate(axis)
    H = homogenized_tensor(pc, cell_solve(pc, 32, solver="direct"))
    np.testing.assert_allclose(H, laminate_general(pc), atol=1e-10)
    np.testing.assert_allclose(H, H.T, atol=1e-12)


def test_laminate_corrector_is_piecewise_linear_and_phi2_vanishes():
    pc = laminate_coefficient({(0, 0): ONE_FOUR, (1, 1): ONE_FOUR}, axis=0)
    corr = cell_solve(pc, 16)
    phi1, phi2 = corr.phi
    assert np.max(np.abs(phi2)) < 1e-10
    # each column in y2 equals the 1D corrector; slope a_hom/a - 1 on each phase
    col = phi1[:, 0]
    assert np.allclose(phi1, col[:, None], atol=1e-10)
    slopes = np.diff(np.append(col, col[0])) * 16
    np.testing.assert_allclose(slopes[:8], 1.6 / 1.0 - 1.0, atol=1e-9)
    np.testing.assert_allclose(slopes[8:], 1.6 / 4.0 - 1.0, atol=1e-9)
    assert abs(corr.mean()).max() < 1e-12


def test_constant_coefficient_corrector_vanishes():
    M = np.array([[2.0, 0.5], [0.5, 1.5]])
    pc = constant_cell(M)
    corr = cell_solve(pc, 8)
    assert np.max(np.abs(corr.phi)) < 1e-12
    np.testing.assert_allclose(homogenized_tensor(pc, corr), M, atol=1e-12)


def test_one_dimensional_cell_gives_harmonic_mean():
    pc = laminate_coefficient({(0, 0): ONE_FOUR}, dim=1, axis=0)
    H = homogenized_tensor(pc, cell_solve(pc, 8))
    assert H[0, 0] == pytest.approx(1.6, abs=1e-12)


def test_checkerboard_is_isotropic_two():
    def A(x, y):
        q = (np.floor(2 * np.mod(y[..., 0], 1)) + np.floor(2 * np.mod(y[..., 1], 1))) % 2
        a = np.where(q == 0, 1.0, 4.0)
        return a[..., None, None] * np.eye(2)

    pc = PeriodicCoefficient(2, A)
    corr = cell_solve(pc, 64, solver="direct", grading=2.0, grid_breaks=((0.0, 0.5), (0.0, 0.5)))
    H = homogenized_tensor(pc, corr)
    np.testing.assert_allclose(H, 2.0 * np.eye(2), atol=2e-3)
    assert abs(H[0, 0] - H[1, 1]) < 1e-10


def test_cell_solver_errors():
    pc = laminate_coefficient({(0, 0): ONE_FOUR, (1, 1): ONE_FOUR}, axis=0)
    with pytest.raises(ConfigError):
        cell_solve(pc, 2)
    with pytest.raises(SolverError) as info:
        cell_solve(pc, 32, maxiter=2)
    assert info.value.iterations is not None and info.value.residual > 0
    with pytest.raises(ConfigError):
        cell_solve(pc, 8, solver="magic")


@given(st.integers(0, 2**31 - 1))
def test_voigt_reuss_sandwich(seed):
    rng = np.random.default_rng(seed)
    pc = cell_grid_field(random_spd_blocks(rng, 4))
    H = homogenized_tensor(pc, cell_solve(pc, 16, solver="direct"))
    arith, harm = voigt_reuss(pc, n=16)
    xi = rng.normal(size=(8, 2))
    qa = np.einsum("ki,ij,kj->k", xi, arith, xi)
    qh = np.einsum("ki,ij,kj->k", xi, harm, xi)
    qH = np.einsum("ki,ij,kj->k", xi, H, xi)
    assert np.all(qh <= qH * (1 + 1e-10)) and np.all(qH <= qa * (1 + 1e-10))
    np.testing.assert_allclose(H, H.T, atol=1e-10)


@given(st.floats(0.0, 1.0))
def test_shift_leaves_homogenized_tensor_unchanged(r):
    pc = _full_laminate(0)
    shifted = shift_invariance_data(pc, (r, 0.0))
    np.testing.assert_allclose(laminate_general(shifted), laminate_general(pc), atol=1e-9)


def test_shift_zero_is_identity():
    pc = _full_laminate(0)
    assert shift_invariance_data(pc, 0.0) is pc


def test_shift_on_grid_preserves_cell_solution():
    pc = _full_laminate(0)
    H0 = homogenized_tensor(pc, cell_solve(pc, 32))
    Hs = homogenized_tensor(*(lambda q: (q, cell_solve(q, 32)))(shift_invariance_data(pc, (0.25, 0.0))))
    np.testing.assert_allclose(Hs, H0, atol=1e-10)


def test_cell_cache_memoises():
    calls = []

    def factory(x):
        calls.append(x)
        return laminate_coefficient({(0, 0): ONE_FOUR, (1, 1): ONE_FOUR}, axis=0)

    cache = CellCache(factory, (16, 4), solver="direct")
    a = cache(0.3)
    b = cache(0.3 + 1e-15)
    assert a is b and len(cache) == 1 and len(calls) == 1


# ----------------------------------------------------------------------------
# graded grids
# ----------------------------------------------------------------------------

@given(st.integers(8, 64), st.floats(1.0, 3.0))
def test_graded_edges_monotone_and_hit_breaks(n, g):
    e = graded_edges(n, (0.5,), g)
    assert e.size == n + 1 and e[0] == 0.0 and e[-1] == pytest.approx(1.0)
    assert np.all(np.diff(e) > 0)
    assert np.min(np.abs(e - 0.5)) < 1e-14


def test_graded_edges_uniform_default():
    np.testing.assert_allclose(graded_edges(8), np.linspace(0, 1, 9))


# ----------------------------------------------------------------------------
# density profiles
# ----------------------------------------------------------------------------

def test_rho0_star_without_oscillation_is_radius():
    osc = make_oscillation("zero")
    for r in (0.1, 0.5, 1.0):
        assert rho0_profile("star_graph", r, osc) == pytest.approx(r, abs=1e-12)


def test_rho0_star_at_origin_is_two_over_pi():
    val = rho0_profile("star_graph", 0.0, make_oscillation("sin2"))
    assert val == pytest.approx(2.0 / np.pi, abs=1e-10)


def test_rho0_sphere_latitude_formula():
    osc = make_oscillation("sin2")
    const = adaptive_simpson(lambda y: np.sqrt(np.sin(2 * y) ** 2 + 1.0), 0.0, np.pi, 1e-13) / np.pi
    for phi in (0.3, 1.2, 2.5):
        assert rho0_profile("sphere_latitude", phi, osc) == pytest.approx(np.sin(phi) * const, abs=1e-10)


def test_rho0_outside_domain_raises():
    with pytest.raises(ConfigError):
        rho0_profile("sphere_longitude", 4.0, make_oscillation("sin2"))


@pytest.mark.parametrize("name", ["star_graph", "sphere_longitude", "radial_graph", "sphere_latitude"])
def test_profile_interpolant_and_derivative(name):
    osc = make_oscillation("sin2")
    a, b = (0.05, 1.0) if "graph" in name else (0.05 * np.pi, 0.95 * np.pi)
    prof = Profile(name, osc, a, b)
    t = np.linspace(a, b, 7)[1:-1]
    exact = np.array([rho0_profile(name, x, osc) for x in t])
    np.testing.assert_allclose(prof(t), exact, atol=1e-9)
    h = 1e-5
    fd = (prof(t + h) - prof(t - h)) / (2 * h)
    np.testing.assert_allclose(prof.derivative(t), fd, atol=1e-6)
    assert np.all(prof(t) > 0)
    assert prof.embeddability() >= -1e-12


def test_slow_dependent_profile_derivative():
    osc = make_oscillation("sin2_slow")
    d = rho0_derivative("star_graph", 0.5, osc)
    h = 1e-5
    fd = (rho0_profile("star_graph", 0.5 + h, osc) - rho0_profile("star_graph", 0.5 - h, osc)) / (2 * h)
    assert d == pytest.approx(fd, abs=1e-6)


def test_bump_profile_excess_without_cancellation():
    bump = Bump((0.5, 0.5), 0.18, 0.09)
    prof = Profile("local_bumps", make_oscillation("sin2"), 0.0, 0.18, bump=bump)
    t = np.linspace(0.0, 0.18, 37)
    q = prof.per_length(t)
    np.testing.assert_allclose(prof.excess(t), q**2 - 1.0, atol=1e-13)
    assert np.all(prof.excess(t) >= 0)
    # plateau: q equals the radial_graph constant; outside the bump q -> 1
    osc = make_oscillation("sin2")
    assert q[0] == pytest.approx(rho0_profile("radial_graph", 1.0, osc), abs=1e-10)
    assert q[-1] == pytest.approx(1.0, abs=1e-14)
    s = 0.12
    assert prof(s) == pytest.approx(rho0_profile("local_bumps", s, osc, bump), abs=1e-9)
