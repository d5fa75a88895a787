"""Homogenized coefficients: laminate closed forms, periodic cell problems, density profiles."""

from __future__ import annotations

import dataclasses
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, SolverError
from .geometry import Bump, Oscillation
from .quadrature import DEFAULT_TOL, ChebyshevInterpolant, adaptive_simpson, periodic_breaks

# ----------------------------------------------------------------------------
# periodic coefficients
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class PeriodicCoefficient:
    """Cell coefficient ``A(x, y)``, periodic in ``y`` on ``Y = [0, 1)^dim``.

    ``A_cell(x, y)`` takes a macro point ``x`` and cell points ``y`` of shape
    ``(..., dim)`` and returns ``(..., dim, dim)``. ``laminate_axis`` marks a
    field that depends on that component of ``y`` only; ``breaks`` lists its
    discontinuities in ``[0, 1)`` for the quadrature.
    """

    dim: int
    A_cell: Callable
    laminate_axis: int | None = None
    breaks: tuple = ()
    continuity: bool = True
    rho_cell: Callable | None = None

    def __call__(self, x, y):
        return self.A_cell(x, np.asarray(y, dtype=float))

    def sample_1d(self, x, entry):
        """Scalar function ``s -> A(x, s e_axis)[entry]`` for laminates."""
        if self.laminate_axis is None:
            raise ValueError("not a laminate: laminate_axis is unset")
        ax = self.laminate_axis

        def g(s):
            s = np.asarray(s, dtype=float)
            y = np.zeros(s.shape + (self.dim,))
            y[..., ax] = s
            return self.A_cell(x, y)[(...,) + entry]

        g.breaks = self.breaks
        return g


def piecewise_constant(values, breaks):
    """1-periodic step function: ``values[k]`` on ``[breaks[k], breaks[k+1])``.

    ``breaks`` starts at 0 and is increasing in [0, 1).
    """
    values = np.asarray(values, dtype=float)
    edges = np.asarray(breaks, dtype=float)
    if edges[0] != 0.0 or np.any(np.diff(edges) <= 0) or edges[-1] >= 1.0 or len(edges) != len(values):
        raise ValueError("breaks must start at 0, increase, stay below 1 and match values")

    def g(s):
        s = np.mod(np.asarray(s, dtype=float), 1.0)
        return values[np.searchsorted(edges, s, side="right") - 1]

    g.breaks = tuple(edges[1:])
    g.values = values
    return g


def laminate_coefficient(entries: dict, dim: int = 2, axis: int = 0, breaks=()):
    """Laminate ``A(y) `` from scalar 1-periodic samplers per matrix entry.

    ``entries`` maps ``(i, j)`` to a sampler of ``y[axis]``; missing
    off-diagonal entries are zero and symmetric partners are filled in.
    """
    brk = set(breaks)
    for g in entries.values():
        brk.update(getattr(g, "breaks", ()))

    def A(x, y):
        s = y[..., axis]
        out = np.zeros(s.shape + (dim, dim))
        for (i, j), g in entries.items():
            out[..., i, j] = g(s)
            if (j, i) not in entries:
                out[..., j, i] = out[..., i, j]
        return out

    return PeriodicCoefficient(dim, A, laminate_axis=axis, breaks=tuple(sorted(brk)))


def shift_invariance_data(pc: PeriodicCoefficient, r) -> PeriodicCoefficient:
    """Coefficient translated in the cell: ``y -> A(x, y + r)``."""
    r = np.broadcast_to(np.asarray(r, dtype=float), (pc.dim,))
    if not np.any(r):
        return pc
    base = pc.A_cell
    brk = pc.breaks
    if pc.laminate_axis is not None and brk:
        brk = tuple(sorted(np.mod(np.asarray(brk) - r[pc.laminate_axis], 1.0)))
    return dataclasses.replace(pc, A_cell=lambda x, y: base(x, np.asarray(y) + r), breaks=brk)


# ----------------------------------------------------------------------------
# closed-form laminates
# ----------------------------------------------------------------------------

def _mean(g, tol):
    return adaptive_simpson(g, 0.0, 1.0, tol)


def _check_range(g, bounds, label):
    if bounds is None:
        return
    lo, hi = bounds
    s = np.linspace(0.0, 1.0, 4097)[:-1] + 0.5 / 4096
    v = np.asarray(g(s), dtype=float)
    if v.min() < lo or v.max() > hi:
        raise ConfigError(f"sampler {label} takes values in [{v.min():.4g}, {v.max():.4g}], "
                          f"outside [{lo}, {hi}]")


def laminate_diag(a, b, tol=DEFAULT_TOL, bounds=None):
    """``diag(mean(a), 1/mean(1/b))`` for 1-periodic samplers ``a`` and ``b``.

    ``a`` is the diffusivity across the layers' flow direction (arithmetic
    mean), ``b`` the one along it (harmonic mean).
    """
    _check_range(a, bounds, "a")
    _check_range(b, bounds, "b")
    inv_b = lambda s: 1.0 / np.asarray(b(s))
    inv_b.breaks = getattr(b, "breaks", ())
    return np.diag([_mean(a, tol), 1.0 / _mean(inv_b, tol)])


def laminate_general(pc: PeriodicCoefficient, x=None, tol=DEFAULT_TOL):
    """Homogenized matrix of a laminate by the weak-* mean formulas.

    With layer normal ``e_1`` (the laminate axis):
    ``<1/A11>``, ``<A_i1/A11>``, ``<A_1j/A11>`` and ``<A_ij - A_i1 A_1j / A11>``
    are the corresponding combinations of the homogenized matrix.
    """
    if pc.laminate_axis is None:
        raise ValueError("laminate_general needs a coefficient varying along one axis")
    d, ax = pc.dim, pc.laminate_axis
    order = [ax] + [k for k in range(d) if k != ax]

    def entry(i, j):
        return pc.sample_1d(x, (order[i], order[j]))

    a11 = entry(0, 0)

    def mean_of(fn):
        fn.breaks = pc.breaks
        return _mean(fn, tol)

    inv = mean_of(lambda s: 1.0 / a11(s))
    H = np.zeros((d, d))
    H[0, 0] = 1.0 / inv
    for i in range(1, d):
        ai1, a1i = entry(i, 0), entry(0, i)
        H[i, 0] = H[0, 0] * mean_of(lambda s, g=ai1: g(s) / a11(s))
        H[0, i] = H[0, 0] * mean_of(lambda s, g=a1i: g(s) / a11(s))
    for i in range(1, d):
        for j in range(1, d):
            aij, ai1, a1j = entry(i, j), entry(i, 0), entry(0, j)
            schur = mean_of(lambda s, p=aij, q=ai1, r=a1j: p(s) - q(s) * r(s) / a11(s))
            H[i, j] = schur + H[i, 0] * H[0, j] / H[0, 0]
    P = np.eye(d)[order]
    return P.T @ H @ P


def voigt_reuss(pc: PeriodicCoefficient, x=None, n: int = 64):
    """Arithmetic mean ``<A>`` and harmonic mean ``<A^-1>^-1`` by midpoint sampling.

    Exact for coefficients that are constant on the cells of an ``n``-grid.
    """
    s = (np.arange(n) + 0.5) / n
    grids = np.meshgrid(*([s] * pc.dim), indexing="ij")
    y = np.stack(grids, axis=-1).reshape(-1, pc.dim)
    A = pc(x, y)
    arith = A.mean(axis=0)
    harm = np.linalg.inv(np.linalg.inv(A).mean(axis=0))
    return arith, harm


# ----------------------------------------------------------------------------
# periodic cell problem, Q1 / P1 on a uniform grid
# ----------------------------------------------------------------------------


@dataclass
class Corrector:
    """Zero-mean periodic cell solutions, one per unit direction.

    ``phi[j]`` has shape ``shape`` (nodal values on the periodic grid) and
    ``edges[k]`` holds the node coordinates of axis ``k`` including 1.
    """

    phi: np.ndarray
    shape: tuple
    x: object = None
    iterations: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    edges: tuple = ()

    @property
    def n_cell(self):
        return self.shape[0]

    def mean(self):
        return self.phi.reshape(self.phi.shape[0], -1).mean(axis=1)


_GP = 0.5 + np.array([-1.0, 1.0]) / (2.0 * np.sqrt(3.0))


def _q1_reference_gradients():
    """Unit-square shape gradients at the 2x2 Gauss points, shape (4, 2, 4)."""
    B = []
    for xi in _GP:
        for eta in _GP:
            # corners ordered (0,0), (1,0), (1,1), (0,1)
            dxi = np.array([-(1 - eta), (1 - eta), eta, -eta])
            deta = np.array([-(1 - xi), -xi, xi, (1 - xi)])
            B.append(np.stack([dxi, deta]))
    return np.array(B)


def _grid_shape(n_cell, dim):
    shape = (n_cell,) * dim if np.isscalar(n_cell) else tuple(int(k) for k in n_cell)
    if len(shape) != dim or min(shape) < 4:
        raise ConfigError(f"cell grid needs {dim} sizes >= 4, got {shape}")
    return shape


def graded_edges(n: int, breaks=(), grading: float = 1.0):
    """``n + 1`` node coordinates on [0, 1] clustered toward ``breaks``.

    The cell is split at the breakpoints (0 is always one); nodes are
    shared out in proportion to segment length and, inside each segment,
    placed by the symmetric power map ``s -> s^grading`` toward both ends.
    ``grading = 1`` gives a uniform grid when the breaks are grid-aligned.
    """
    pts = sorted({0.0, *[float(np.mod(b, 1.0)) for b in breaks]})
    if grading == 1.0 and not breaks:
        return np.linspace(0.0, 1.0, n + 1)
    bounds = np.array(pts + [1.0])
    lens = np.diff(bounds)
    counts = np.maximum(2, np.round(n * lens).astype(int))
    counts[np.argmax(counts)] += n - counts.sum()
    if counts.min() < 2:
        raise ConfigError(f"{n} cells cannot resolve {len(lens)} interface segments")
    out = [0.0]
    for lo, L, m in zip(bounds[:-1], lens, counts):
        s = np.linspace(0.0, 1.0, m + 1)[1:]
        half = np.where(s <= 0.5, 0.5 * (2 * s) ** grading, 1.0 - 0.5 * (2 * (1 - s)) ** grading)
        out.extend(lo + L * half)
    return np.array(out)


def _cell_edges(pc, shape, grid_breaks, grading):
    if grid_breaks is None:
        grid_breaks = [pc.breaks if k == pc.laminate_axis else () for k in range(pc.dim)]
        if grading == 1.0:
            grid_breaks = [()] * pc.dim
    return tuple(graded_edges(n, b, grading) for n, b in zip(shape, grid_breaks))


def _element_coefficients(pc, x, edges):
    centers = [0.5 * (e[1:] + e[:-1]) for e in edges]
    grids = np.meshgrid(*centers, indexing="ij")
    y = np.stack(grids, axis=-1).reshape(-1, pc.dim)
    return np.asarray(pc(x, y), dtype=float).reshape(-1, pc.dim, pc.dim)


def _q1_system(A_e, edges):
    h1, h2 = np.diff(edges[0]), np.diff(edges[1])
    n1, n2 = h1.size, h2.size
    H1, H2 = np.meshgrid(h1, h2, indexing="ij")
    H1, H2 = H1.ravel(), H2.ravel()
    w = 0.25 * H1 * H2
    R = _q1_reference_gradients()
    B = np.stack([R[:, 0, None, :] / H1[None, :, None], R[:, 1, None, :] / H2[None, :, None]], axis=2)  # (q, e, 2, 4)
    Ke = np.einsum("e,qeia,eij,qejb->eab", w, B, A_e, B)
    i, j = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    i, j = i.ravel(), j.ravel()
    ip, jp = (i + 1) % n1, (j + 1) % n2
    conn = np.stack([i * n2 + j, ip * n2 + j, ip * n2 + jp, i * n2 + jp], axis=1)
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    K = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(n1 * n2, n1 * n2))
    return K, B, w, conn


def _p1_periodic_system(a_e, edges):
    h = np.diff(edges[0])
    n = h.size
    k = a_e[:, 0, 0] / h
    idx = np.arange(n)
    nxt = (idx + 1) % n
    rows = np.concatenate([idx, nxt, idx, nxt])
    cols = np.concatenate([idx, nxt, nxt, idx])
    vals = np.concatenate([k, k, -k, -k])
    K = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return K, np.stack([idx, nxt], axis=1)


def _solve_pinned(K, b, solver, tol, maxiter):
    Kp = K[1:, 1:].tocsr()
    bp = b[1:]
    if solver == "direct":
        u = spla.spsolve(Kp.tocsc(), bp)
        its = 0
    elif solver == "cg":
        d = Kp.diagonal()
        Minv = spla.LinearOperator(Kp.shape, matvec=lambda v: v / d)
        count = [0]

        def cb(_):
            count[0] += 1

        u, info = spla.cg(Kp, bp, rtol=tol, atol=0.0, M=Minv, maxiter=maxiter, callback=cb)
        its = count[0]
        if info != 0:
            res = np.linalg.norm(Kp @ u - bp) / max(np.linalg.norm(bp), 1e-300)
            raise SolverError(f"cell CG did not converge: {its} iterations, relative residual {res:.3e}",
                              iterations=its, residual=res)
    else:
        raise ConfigError(f"unknown cell solver {solver!r}")
    res = np.linalg.norm(Kp @ u - bp) / max(np.linalg.norm(bp), 1e-300)
    full = np.concatenate([[0.0], u])
    return full, its, res


def cell_solve(pc: PeriodicCoefficient, n_cell=64, x=None, solver="cg", tol=1e-12, maxiter=None,
               grading: float = 1.0, grid_breaks=None):
    """Discrete periodic correctors ``phi_j`` for each unit direction ``e_j``.

    Bilinear quadrilaterals (P1 segments in 1D) on a tensor grid with
    wraparound; the coefficient is sampled at element centres. One node is
    pinned and the discrete mean subtracted afterwards. ``n_cell`` may be a
    tuple to use a different resolution per axis. With ``grading > 1`` the
    grid is clustered toward the interface coordinates ``grid_breaks`` (one
    sequence per axis; by default the laminate breaks), which restores
    accuracy near interface corners.
    """
    shape = _grid_shape(n_cell, pc.dim)
    edges = _cell_edges(pc, shape, grid_breaks, grading)
    A_e = _element_coefficients(pc, x, edges)
    if pc.dim == 1:
        K, conn = _p1_periodic_system(A_e, edges)
        n = shape[0]
        loads = [np.zeros(n)]
        np.add.at(loads[0], conn[:, 0], A_e[:, 0, 0])
        np.add.at(loads[0], conn[:, 1], -A_e[:, 0, 0])
    else:
        K, B, w, conn = _q1_system(A_e, edges)
        loads = []
        for j in range(2):
            be = -np.einsum("e,qeia,ei->ea", w, B, A_e[:, :, j])
            b = np.zeros(K.shape[0])
            np.add.at(b, conn.ravel(), be.ravel())
            loads.append(b)
    if maxiter is None:
        maxiter = 50 * K.shape[0]
    phis, its, ress = [], [], []
    for b in loads:
        u, it, res = _solve_pinned(K, b, solver, tol, maxiter)
        u -= u.mean()
        phis.append(u.reshape(shape))
        its.append(it)
        ress.append(res)
    return Corrector(np.array(phis), shape, x, its, ress, edges)


def homogenized_tensor(pc: PeriodicCoefficient, corr: Corrector):
    """``A_hom e_j = int_Y A (grad phi_j + e_j) dy`` on the corrector's grid."""
    edges = corr.edges or tuple(np.linspace(0.0, 1.0, n + 1) for n in corr.shape)
    A_e = _element_coefficients(pc, corr.x, edges)
    d = pc.dim
    H = np.zeros((d, d))
    if d == 1:
        h = np.diff(edges[0])
        phi = corr.phi[0]
        grad = (np.roll(phi, -1) - phi) / h
        H[0, 0] = np.sum(h * A_e[:, 0, 0] * (grad + 1.0))
        return H
    _, B, w, conn = _q1_system(A_e, edges)
    for j in range(d):
        ue = corr.phi[j].ravel()[conn]
        g = np.einsum("qeia,ea->qei", B, ue)
        g[..., j] += 1.0
        flux = np.einsum("eik,qek->qei", A_e, g)
        H[:, j] = np.einsum("e,qei->i", w, flux)
    return H


class CellCache:
    """Memoised homogenized tensors keyed on the (rounded) macro point."""

    def __init__(self, pc_factory: Callable, n_cell=64, solver="cg", digits=12):
        self.pc_factory = pc_factory
        self.n_cell = n_cell
        self.solver = solver
        self.digits = digits
        self._store = {}
        self._lock = threading.Lock()

    def _key(self, x):
        return tuple(np.round(np.atleast_1d(np.asarray(x, dtype=float)), self.digits))

    def __call__(self, x):
        key = self._key(x)
        with self._lock:
            hit = self._store.get(key)
        if hit is not None:
            return hit
        pc = self.pc_factory(x)
        H = homogenized_tensor(pc, cell_solve(pc, self.n_cell, x=x, solver=self.solver))
        with self._lock:
            self._store.setdefault(key, H)
        return H

    def __len__(self):
        return len(self._store)


# ----------------------------------------------------------------------------
# limiting density profiles
# ----------------------------------------------------------------------------

PROFILE_SCENARIOS = ("star_graph", "sphere_longitude", "radial_graph", "sphere_latitude", "local_bumps")


def _profile_integrands(scenario, osc: Oscillation, bump: Bump | None):
    """Return ``(prefactor, integrand)`` and their t-derivatives.

    The density profile is ``prefactor(t) * mean_y integrand(t, y)``.
    """
    fy = osc.d_y
    fty = osc.d_ty if osc.d_ty is not None else (lambda t, y: 0.0 * y)
    if scenario == "star_graph":
        pre, dpre = (lambda t: 1.0), (lambda t: 0.0)
        g = lambda t, y: np.sqrt(fy(t, y) ** 2 + t**2)
        dg = lambda t, y: (t + fy(t, y) * fty(t, y)) / np.sqrt(fy(t, y) ** 2 + t**2)
    elif scenario == "sphere_longitude":
        pre, dpre = (lambda t: 1.0), (lambda t: 0.0)
        g = lambda t, y: np.sqrt(fy(t, y) ** 2 + np.sin(t) ** 2)
        dg = lambda t, y: (np.sin(t) * np.cos(t) + fy(t, y) * fty(t, y)) / np.sqrt(
            fy(t, y) ** 2 + np.sin(t) ** 2)
    elif scenario == "radial_graph":
        pre, dpre = (lambda t: t), (lambda t: 1.0)
        g = lambda t, y: np.sqrt(fy(t, y) ** 2 + 1.0)
        dg = lambda t, y: fy(t, y) * fty(t, y) / np.sqrt(fy(t, y) ** 2 + 1.0)
    elif scenario == "sphere_latitude":
        pre, dpre = np.sin, np.cos
        g = lambda t, y: np.sqrt(fy(t, y) ** 2 + 1.0)
        dg = lambda t, y: fy(t, y) * fty(t, y) / np.sqrt(fy(t, y) ** 2 + 1.0)
    elif scenario == "local_bumps":
        if bump is None:
            raise ConfigError("local_bumps profiles need a bump")
        pre, dpre = (lambda t: t), (lambda t: 1.0)
        g = lambda t, y: np.sqrt((fy(t, y) * bump.psi(t)) ** 2 + 1.0)

        def dg(t, y):
            ps, dps = bump.psi(t), bump.dpsi(t)
            v = fy(t, y) * ps
            return v * (fty(t, y) * ps + fy(t, y) * dps) / np.sqrt(v**2 + 1.0)
    else:
        raise ConfigError(f"no density profile for scenario {scenario!r}; valid: {PROFILE_SCENARIOS}")
    return pre, dpre, g, dg


def _natural_range(scenario, bump):
    if scenario in ("sphere_longitude", "sphere_latitude"):
        return 0.0, np.pi
    if scenario == "local_bumps":
        return 0.0, np.inf
    return 0.0, np.inf


def _cell_mean(fn, t, osc, tol):
    T = osc.period
    g = lambda y: fn(t, y)
    return adaptive_simpson(g, 0.0, T, tol * T) / T


def rho0_profile(scenario: str, t: float, oscillation: Oscillation, bump: Bump | None = None,
                 tol=DEFAULT_TOL) -> float:
    """Limiting density at the slow coordinate ``t`` by adaptive quadrature."""
    lo, hi = _natural_range(scenario, bump)
    if not (lo <= t <= hi):
        raise ConfigError(f"t = {t} outside [{lo}, {hi}] for {scenario}")
    pre, _, g, _ = _profile_integrands(scenario, oscillation, bump)
    return float(pre(t)) * _cell_mean(g, t, oscillation, tol)


def rho0_derivative(scenario: str, t: float, oscillation: Oscillation, bump: Bump | None = None,
                    tol=DEFAULT_TOL) -> float:
    """``d rho0 / dt`` by differentiating under the integral sign.

    Falls back to central differences when the profile depends on the slow
    variable but provides no mixed derivative.
    """
    pre, dpre, g, dg = _profile_integrands(scenario, oscillation, bump)
    if oscillation.slow_dependent and oscillation.d_ty is None:
        h = 1e-5 * max(1.0, abs(t))
        return (rho0_profile(scenario, t + h, oscillation, bump, tol)
                - rho0_profile(scenario, t - h, oscillation, bump, tol)) / (2 * h)
    m = _cell_mean(g, t, oscillation, tol)
    dm = _cell_mean(dg, t, oscillation, tol)
    return float(dpre(t)) * m + float(pre(t)) * dm


class Profile:
    """Cached density profile ``rho0`` and its derivative on ``[a, b]``.

    Values come from adaptive quadrature at Chebyshev nodes; evaluation
    between nodes is barycentric. ``scale`` multiplies both (used only for
    deliberately perturbed profiles).
    """

    def __init__(self, scenario, oscillation, a, b, bump=None, tol=DEFAULT_TOL, scale=1.0):
        self.scenario = scenario
        self.oscillation = oscillation
        self.bump = bump
        self.a, self.b = float(a), float(b)
        self.tol = tol
        self.scale = float(scale)
        # node values two digits tighter than the interpolation target
        qtol = 1e-2 * tol
        self._bump_q = None
        if scenario == "local_bumps" and not oscillation.slow_dependent:
            # rho0 = t * Q(psi(t)) with Q analytic in psi; the cutoff itself is only C-infinity
            fy = oscillation.d_y
            T = oscillation.period
            # Q(p) = 1 + p^2 K(p) with K = <f_y^2 / (sqrt(1 + f_y^2 p^2) + 1)>, free of cancellation
            K = lambda p: adaptive_simpson(
                lambda y: fy(0.0, y) ** 2 / (np.sqrt((fy(0.0, y) * p) ** 2 + 1.0) + 1.0), 0.0, T, qtol * T) / T
            dQ = lambda p: adaptive_simpson(
                lambda y: fy(0.0, y) ** 2 * p / np.sqrt((fy(0.0, y) * p) ** 2 + 1.0), 0.0, T, qtol * T) / T
            self._bump_q = (ChebyshevInterpolant.adaptive(K, 0.0, 1.0, tol=tol),
                            ChebyshevInterpolant.adaptive(dQ, 0.0, 1.0, tol=tol))
            return
        self._rho = ChebyshevInterpolant.adaptive(
            lambda t: rho0_profile(scenario, t, oscillation, bump, qtol), a, b, tol=tol)
        self._drho = ChebyshevInterpolant.adaptive(
            lambda t: rho0_derivative(scenario, t, oscillation, bump, qtol), a, b, tol=tol)

    def per_length(self, t):
        """``rho0(t) / t`` for the radial families, finite at ``t = 0`` for bumps."""
        if self._bump_q is not None:
            return self.scale * self._q(self.bump.psi(np.asarray(t, dtype=float)))
        t = np.asarray(t, dtype=float)
        return self(t) / t

    def _q(self, psi):
        return 1.0 + psi**2 * self._bump_q[0](psi)

    def excess(self, t):
        """``per_length(t)^2 - 1``, evaluated without cancellation for bumps."""
        if self._bump_q is not None and self.scale == 1.0:
            psi = self.bump.psi(np.asarray(t, dtype=float))
            k = psi**2 * self._bump_q[0](psi)
            return k * (2.0 + k)
        return self.per_length(t) ** 2 - 1.0

    def __call__(self, t):
        if self._bump_q is not None:
            t = np.asarray(t, dtype=float)
            return self.scale * t * self._q(self.bump.psi(t))
        return self.scale * self._rho(t)

    def derivative(self, t):
        if self._bump_q is not None:
            t = np.asarray(t, dtype=float)
            psi = self.bump.psi(t)
            return self.scale * (self._q(psi) + t * self._bump_q[1](psi) * self.bump.dpsi(t))
        return self.scale * self._drho(t)

    def exact(self, t):
        return self.scale * rho0_profile(self.scenario, t, self.oscillation, self.bump, self.tol)

    def scaled(self, factor):
        out = object.__new__(Profile)
        out.__dict__.update(self.__dict__)
        out.scale = self.scale * factor
        return out

    def embeddability(self, n=513):
        """Sampled embeddability margin: min of the height integrand on [a, b]."""
        t = np.linspace(self.a, self.b, n)
        rho, d = self(t), self.derivative(t)
        if self.scenario in ("star_graph", "sphere_longitude"):
            return float(np.min(1.0 - d**2))
        if self.scenario == "sphere_latitude":
            return float(np.min(rho**2 / np.sin(t) ** 2 - np.cos(t) ** 2))
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(t > 0, rho**2 / np.where(t > 0, t, 1.0) ** 2 - 1.0, 0.0)
        return float(np.min(v))
