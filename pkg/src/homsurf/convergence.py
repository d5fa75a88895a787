"""Epsilon sweeps comparing fine-scale operators with their homogenized limit.

All rows of a sweep share one structured mesh sized by the smallest eps, so
transporting fine solutions to the reference mesh is the identity map.
Different meshes (same domain and layout) are supported by nodal
interpolation through :func:`transport`.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigError, MeshResolutionError
from .fem import DEFAULT_SEED, DiscreteOperator, Mesh, assemble, build_mesh, eig_smallest, multiplicity_groups, solve_source
from .geometry import SCENARIOS, CoefficientField, ParamDomain, identity_field, pullback_field
from .homogenize import piecewise_constant, shift_invariance_data, laminate_coefficient
from .scenarios import scenario_limit

log = logging.getLogger(__name__)

CSV_HEADER = ("scenario", "eps", "k", "lambda_eps", "lambda_hom", "rel_err", "l2_err", "flux_dev", "angle")
REFERENCES = ("closed_form", "cell", "identity")
SWEEP_SCENARIOS = SCENARIOS + ("laminate_strip",)
GROUP_RTOL = 1e-6


@dataclass(frozen=True)
class SweepConfig:
    """Parameters of one eps sweep.

    ``loads`` maps ``"f"`` to a scalar or a function of parameter points and
    ``"F"`` to a 2-vector or a function of points. ``mesh`` forces an explicit
    ``(n1, n2)`` (checked against the resolution rule); otherwise the mesh is
    sized from the smallest eps.
    """

    scenario: str = "star_graph"
    params: dict = field(default_factory=dict)
    eps_list: tuple = (0.25, 0.125, 0.0625)
    k_eigs: int = 5
    cells_per_eps: float = 8.0
    max_nodes: int = 1024 * 1024
    m: float = 0.0
    loads: dict | None = None
    shift: float = 0.0
    reference: str = "closed_form"
    seed: int = DEFAULT_SEED
    jobs: int = 1
    mesh: tuple | None = None
    dirichlet_sides: tuple | None = None
    osc_refine: int = 2

    def __post_init__(self):
        if self.scenario not in SWEEP_SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; valid: {', '.join(SWEEP_SCENARIOS)}")
        eps = tuple(float(e) for e in self.eps_list)
        if not eps or any(not e > 0 for e in eps):
            raise ConfigError("eps_list must hold positive values")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"eps_list must be strictly decreasing, got {list(eps)}")
        object.__setattr__(self, "eps_list", eps)
        if self.k_eigs < 1:
            raise ConfigError("k_eigs must be at least 1")
        if not self.cells_per_eps > 0:
            raise ConfigError("cells_per_eps must be positive")
        if self.m < 0:
            raise ConfigError("m must be nonnegative")
        if int(self.osc_refine) != self.osc_refine or self.osc_refine < 1:
            raise ConfigError("osc_refine must be a positive integer")
        if self.reference not in REFERENCES:
            raise ConfigError(f"unknown reference {self.reference!r}; valid: {', '.join(REFERENCES)}")


# ----------------------------------------------------------------------------
# sweep problems: fine fields, reference fields and meshes
# ----------------------------------------------------------------------------

@dataclass
class SweepProblem:
    """Everything a sweep needs about one scenario."""

    name: str
    domain: ParamDomain
    fine: Callable          # eps -> CoefficientField
    reference: Callable     # kind -> CoefficientField
    period_2: float | None  # oscillation period (times eps) along the periodic coordinate
    osc_axes: tuple = (0,)  # coordinates along which the fine coefficient oscillates
    period_1: float | None = None  # oscillation period (times eps) along the first coordinate
    limit: object = None


STRIP_VALUES = (1.0, 4.0)
STRIP_WIDTH = 1.0 / 64.0


def strip_coefficient(shift: float = 0.0):
    """Cell coefficient of the {1, 4} strip, translated by ``shift`` in the cell."""
    a = piecewise_constant(STRIP_VALUES, (0.0, 0.5))
    pc = laminate_coefficient({(0, 0): a, (1, 1): a}, dim=2, axis=0)
    return shift_invariance_data(pc, (shift, 0.0))


def strip_exact(x, a_hom: float = 1.6):
    """Homogenized solution of ``-(a_hom u')' = 1`` with zero end values."""
    x = np.asarray(x, dtype=float)
    return x * (1.0 - x) / (2.0 * a_hom)


def _strip_problem(params, shift):
    width = float(params.get("width", STRIP_WIDTH))
    domain = ParamDomain(("x1", "x2"), (0.0, 1.0), (0.0, width), True, 0.0)
    pc = strip_coefficient(shift)

    def fine(eps):
        def A(p):
            p = np.asarray(p, dtype=float)
            y = np.stack([p[..., 0] / eps, np.zeros(p.shape[:-1])], axis=-1)
            return pc(None, y)

        return CoefficientField(A=A, rho=lambda p: np.ones(np.shape(p)[:-1]), name=f"strip[eps={eps:g}]")

    a_hom = 1.0 / np.mean(1.0 / np.asarray(STRIP_VALUES))
    arith = float(np.mean(STRIP_VALUES))

    def reference(kind):
        if kind == "identity":
            return identity_field()
        hom = np.diag([a_hom, arith])
        return CoefficientField(A=lambda p: np.broadcast_to(hom, np.shape(p)[:-1] + (2, 2)),
                                rho=lambda p: np.ones(np.shape(p)[:-1]), name="strip[hom]")

    return SweepProblem("laminate_strip", domain, fine, reference, None, (0,), 1.0)


def make_problem(cfg: SweepConfig) -> SweepProblem:
    if cfg.scenario == "laminate_strip":
        return _strip_problem(cfg.params, cfg.shift)
    if cfg.shift:
        raise ConfigError("shift applies to the laminate_strip scenario only")
    sl = scenario_limit(cfg.scenario, **cfg.params)

    def fine(eps):
        return pullback_field(sl.immersion(eps))

    def reference(kind):
        if kind == "closed_form":
            return sl.limit_field()
        if kind == "cell":
            return sl.cell_field()
        return identity_field()

    # the oscillation runs along the periodic coordinate for the profile families
    angular = cfg.scenario in ("star_graph", "sphere_longitude")
    per = sl.family.oscillation.period if angular else None
    axes = (1,) if angular else (0, 1) if cfg.scenario == "local_bumps" else (0,)
    return SweepProblem(cfg.scenario, sl.domain, fine, reference, per, axes, limit=sl)


def mesh_shape(domain: ParamDomain, eps_min: float, cells_per_eps: float, period_2: float | None = None,
               osc_axes=(), osc_refine: int = 1, period_1: float | None = None):
    """Cell counts with diagonal ``h_max <= eps_min / cells_per_eps``.

    Square cells at the rule's size, then ``osc_refine`` times finer along
    ``osc_axes``. Along a periodic coordinate the count is rounded up to a
    multiple of twice the number of oscillation periods so the mesh keeps
    the discrete symmetry of the coefficient; with ``period_1`` the first
    count is likewise aligned with the cell boundaries of the laminate.
    """
    h = eps_min / cells_per_eps / math.sqrt(2.0)
    L1, L2 = domain.lengths
    n1 = max(2, math.ceil(L1 / h * (1 - 1e-12)))
    n2 = max(2, math.ceil(L2 / h * (1 - 1e-12)))
    n1 *= osc_refine if 0 in osc_axes else 1
    n2 *= osc_refine if 1 in osc_axes else 1
    def align(n, length, period):
        periods = length / (period * eps_min)
        if abs(periods - round(periods)) < 1e-9:
            q = 2 * int(round(periods))
            n = q * math.ceil(n / q)
        return n

    if domain.periodic_2 and period_2:
        n2 = align(n2, L2, period_2)
    if period_1:
        n1 = align(n1, L1, period_1)
    return n1, n2


def sweep_mesh(cfg: SweepConfig, problem: SweepProblem) -> Mesh:
    """Common mesh of a sweep; refuses meshes that under-resolve any eps."""
    eps_min = min(cfg.eps_list)
    if cfg.mesh is not None:
        n1, n2 = (int(v) for v in cfg.mesh)
    else:
        n1, n2 = mesh_shape(problem.domain, eps_min, cfg.cells_per_eps, problem.period_2, problem.osc_axes,
                            int(cfg.osc_refine), problem.period_1)
    # node budget first: the mesh arrays themselves can exhaust memory
    n_nodes = (n1 + 1) * (n2 if problem.domain.periodic_2 else n2 + 1)
    if n_nodes > cfg.max_nodes:
        raise MeshResolutionError(
            f"eps = {eps_min:g} needs {n_nodes} nodes ({n1}x{n2} cells), above max_nodes = {cfg.max_nodes}")
    sides = cfg.dirichlet_sides
    mesh = build_mesh(problem.domain, n1, n2, sides)
    limit_h = eps_min / cfg.cells_per_eps
    if mesh.h_max > limit_h * (1 + 1e-12):
        raise MeshResolutionError(
            f"mesh {n1}x{n2} has h_max {mesh.h_max:.4g} > eps/{cfg.cells_per_eps:g} = {limit_h:.4g} "
            f"for eps = {eps_min:g}")
    if mesh.n_nodes > cfg.max_nodes:
        raise MeshResolutionError(
            f"eps = {eps_min:g} needs {mesh.n_nodes} nodes ({n1}x{n2} cells), above max_nodes = {cfg.max_nodes}")
    return mesh


# ----------------------------------------------------------------------------
# results
# ----------------------------------------------------------------------------

@dataclass
class ConvergenceTable:
    """Per-eps diagnostics with the homogenized reference column.

    Arrays are indexed ``[eps]`` or ``[eps, k]``; unavailable diagnostics are NaN.
    """

    scenario: str
    eps: np.ndarray
    lambda_hom: np.ndarray
    lambda_eps: np.ndarray
    l2_err: np.ndarray
    flux_dev: np.ndarray
    angle: np.ndarray
    groups: tuple = ()
    extras: dict = field(default_factory=dict)

    @property
    def rel_err(self):
        return np.abs(self.lambda_eps - self.lambda_hom[None, :]) / np.abs(self.lambda_hom[None, :])

    @classmethod
    def empty(cls, scenario, eps, k):
        n = len(eps)
        nan = np.full((n, k), np.nan)
        return cls(scenario, np.asarray(eps, dtype=float), np.full(k, np.nan), nan.copy(), np.full(n, np.nan),
                   np.full(n, np.nan), nan.copy())

    def merge(self, other: "ConvergenceTable") -> "ConvergenceTable":
        """Fill NaN entries of ``self`` from ``other`` (same eps list)."""
        if not np.array_equal(self.eps, other.eps):
            raise ValueError("tables have different eps lists")
        out = ConvergenceTable.empty(self.scenario, self.eps, max(len(self.lambda_hom), len(other.lambda_hom)))
        for name in ("lambda_hom", "lambda_eps", "l2_err", "flux_dev", "angle"):
            a, b, dst = getattr(self, name), getattr(other, name), getattr(out, name)
            for src in (b, a):
                if src.size:
                    sl = tuple(slice(0, s) for s in src.shape)
                    dst[sl] = np.where(np.isnan(src), dst[sl], src)
        out.groups = self.groups or other.groups
        out.extras = {**other.extras, **self.extras}
        return out

    def rows(self):
        k = self.lambda_eps.shape[1]
        rel = self.rel_err
        for i, e in enumerate(self.eps):
            for j in range(k):
                yield (self.scenario, e, j + 1, self.lambda_eps[i, j], self.lambda_hom[j], rel[i, j],
                       self.l2_err[i], self.flux_dev[i], self.angle[i, j])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows():
            w.writerow([row[0], f"{row[1]:.10g}", row[2]] + [_fmt(v) for v in row[3:]])
        return buf.getvalue()


def _fmt(v):
    return "nan" if np.isnan(v) else f"{v:.12e}"


# ----------------------------------------------------------------------------
# eigenspace alignment
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Alignment:
    """Largest principal angle of one reference multiplicity group."""

    group: tuple
    angle: float
    fine_split: bool


def transport(u, src: Mesh, dst: Mesh):
    """Nodal interpolation of a full nodal vector between structured meshes."""
    if src is dst or (src.shape == dst.shape and src.domain == dst.domain):
        return np.asarray(u)
    n1, n2 = src.shape
    x1 = src.raw_nodes[:: n2 + 1, 0]
    x2 = src.raw_nodes[: n2 + 1, 1]
    U = np.asarray(u)[src.dof].reshape((n1 + 1, n2 + 1) + np.shape(u)[1:])
    f = RegularGridInterpolator((x1, x2), U, bounds_error=False, fill_value=None)
    pts = dst.nodes.copy()
    if dst.domain.periodic_2:
        lo, L = dst.domain.range_2[0], dst.domain.lengths[1]
        pts[:, 1] = lo + np.mod(pts[:, 1] - lo, L)
    return f(pts)


def _m_orthonormal(V, M):
    G = V.T @ (M @ V)
    L = np.linalg.cholesky(0.5 * (G + G.T))
    return sla.solve_triangular(L, V.T, lower=True).T


def principal_angles(U, W, M):
    """Principal angles between span(U) and span(W) in the inner product of ``M``."""
    Uo, Wo = _m_orthonormal(U, M), _m_orthonormal(W, M)
    s = np.linalg.svd(Wo.T @ (M @ Uo), compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))


def eigenspace_alignment(fine, ref, op_ref: DiscreteOperator, groups=None, op_fine: DiscreteOperator | None = None,
                         rtol: float = GROUP_RTOL):
    """Largest principal angle per reference group, in the ``rho0``-weighted inner product.

    Fine vectors are transported to the reference mesh. A fine cluster that
    does not match the reference group is flagged, not rejected.
    """
    if groups is None:
        groups = multiplicity_groups(ref.values, rtol)
    Vf = fine.vectors
    if op_fine is not None and op_fine.mesh is not op_ref.mesh:
        Vf = transport(op_fine.expand(Vf), op_fine.mesh, op_ref.mesh)[op_ref.free]
    fine_groups = multiplicity_groups(fine.values, rtol)
    out = []
    for g in groups:
        idx = list(g)
        if max(idx) >= Vf.shape[1]:
            out.append(Alignment(tuple(g), float("nan"), True))
            continue
        split = not any(set(g) == set(fg) for fg in fine_groups)
        ang = principal_angles(Vf[:, idx], ref.vectors[:, idx], op_ref.M)
        out.append(Alignment(tuple(g), float(np.max(ang)), split))
    return out


# ----------------------------------------------------------------------------
# sweeps
# ----------------------------------------------------------------------------

@dataclass
class SweepState:
    """Mesh, reference operator and per-row results of one configuration.

    ``results`` maps eps (and ``"ref"``) to a dict with keys ``"eig"``
    (EigenResult) and ``"u"`` (source solution); operators drop their
    factorizations once a row is complete so memory stays bounded.
    """

    cfg: SweepConfig
    problem: SweepProblem
    mesh: Mesh
    ref_op: DiscreteOperator
    fine_ops: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)


_LAST: list = []


def prepare(cfg: SweepConfig) -> SweepState:
    """Mesh and reference operator, reused while the same config object is passed."""
    if _LAST and _LAST[0][0] is cfg:
        return _LAST[0][1]
    problem = make_problem(cfg)
    mesh = sweep_mesh(cfg, problem)
    log.info("%s: mesh %dx%d, %d nodes, h_max %.4g", cfg.scenario, *mesh.shape, mesh.n_nodes, mesh.h_max)
    ref_op = assemble(mesh, problem.reference(cfg.reference), cfg.m)
    state = SweepState(cfg, problem, mesh, ref_op)
    _LAST[:] = [(cfg, state)]
    return state


def fine_operator(state: SweepState, eps: float) -> DiscreteOperator:
    if eps not in state.fine_ops:
        state.fine_ops[eps] = assemble(state.mesh, state.problem.fine(eps), state.cfg.m)
    return state.fine_ops[eps]


def _operator(state, key):
    return state.ref_op if key == "ref" else fine_operator(state, key)


def _loads(cfg):
    loads = cfg.loads if cfg.loads is not None else {"f": 1.0}
    f, F = loads.get("f"), loads.get("F")
    if f is not None and not callable(f):
        fc = float(f)
        f = lambda p, c=fc: np.full(np.shape(p)[:-1], c)  # noqa: E731
    if F is not None and not callable(F):
        Fc = np.asarray(F, dtype=float)
        F = lambda p, c=Fc: np.broadcast_to(c, np.shape(p)[:-1] + (2,))  # noqa: E731
    return f, F


def _row(state: SweepState, key, eig: bool = True, src: bool = False):
    """Eigenpairs and/or source solution of one operator, computed once."""
    res = state.results.setdefault(key, {})
    op = _operator(state, key)
    if eig and "eig" not in res:
        res["eig"] = eig_smallest(op, state.cfg.k_eigs, seed=state.cfg.seed)
    if src and "u" not in res:
        f, F = _loads(state.cfg)
        res["u"] = solve_source(op, f, F)
    have = ("eig" in res or not eig) and ("u" in res or not src)
    if have:
        op.release()
    return res


def _map_rows(cfg, fn):
    # rows are independent; results are merged in eps order
    if cfg.jobs > 1 and len(cfg.eps_list) > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(fn, cfg.eps_list))
    return [fn(e) for e in cfg.eps_list]


def compute_rows(cfg: SweepConfig, eig: bool = True, src: bool = False) -> SweepState:
    """Fill the reference and every eps row with the requested results."""
    state = prepare(cfg)
    _row(state, "ref", eig, src)
    _map_rows(cfg, lambda e: _row(state, e, eig, src))
    return state


def spectral_sweep(cfg: SweepConfig) -> ConvergenceTable:
    """Smallest eigenvalues per eps against the homogenized reference.

    Also fills the principal angle of the multiplicity group of each k.
    """
    with_src = cfg.loads is not None
    state = compute_rows(cfg, eig=True, src=with_src)
    ref = state.results["ref"]["eig"]
    groups = multiplicity_groups(ref.values, GROUP_RTOL)
    table = ConvergenceTable.empty(cfg.scenario, cfg.eps_list, cfg.k_eigs)
    table.lambda_hom[:] = ref.values
    table.groups = groups
    splits = {}
    for i, e in enumerate(cfg.eps_list):
        fine = state.results[e]["eig"]
        table.lambda_eps[i] = fine.values
        al = eigenspace_alignment(fine, ref, state.ref_op, groups)
        for a in al:
            table.angle[i, list(a.group)] = a.angle
        splits[e] = [a.group for a in al if a.fine_split]
    table.extras["fine_split"] = splits
    table.extras["ref_residuals"] = ref.residuals
    return table


def weighted_l2(op: DiscreteOperator, u):
    """``(int |u|^2 rho dx)^(1/2)`` with the mass matrix of ``op``."""
    u = np.asarray(u)
    return float(np.sqrt(max(u @ (op.M_full @ u), 0.0)))


def source_solutions(cfg: SweepConfig):
    """Reference solution and fine solutions per eps (full nodal vectors)."""
    state = compute_rows(cfg, eig=False, src=True)
    return state, state.results["ref"]["u"], {e: state.results[e]["u"] for e in cfg.eps_list}


def source_sweep(cfg: SweepConfig) -> ConvergenceTable:
    """Weighted L2 distance between fine and homogenized source solutions.

    The fine side is weighted by ``rho_eps`` (mass matrix of the fine operator).
    """
    state, u0, sols = source_solutions(cfg)
    table = ConvergenceTable.empty(cfg.scenario, cfg.eps_list, cfg.k_eigs)
    for i, e in enumerate(cfg.eps_list):
        table.l2_err[i] = weighted_l2(fine_operator(state, e), sols[e] - u0)
    table.extras["u0_norm"] = weighted_l2(state.ref_op, u0)
    return table


def radial_bump(a: float, b: float):
    """Cutoff ``sin^2`` bump in the first coordinate, supported in ``[a, b]``."""

    def phi(p):
        t = (np.asarray(p, dtype=float)[..., 0] - a) / (b - a)
        return np.where((t > 0) & (t < 1), np.sin(np.pi * t) ** 2, 0.0)

    return phi


def coordinate_field(i: int = 0):
    """Constant coordinate vector field ``d/dx_i`` in the chart."""
    e = np.eye(2)[i]
    return lambda p: np.broadcast_to(e, np.shape(p)[:-1] + (2,))


def default_test_fields(domain: ParamDomain):
    a, b = domain.range_1
    L = b - a
    # off-centre support: symmetric scenarios would otherwise pair to zero
    return [(coordinate_field(0), radial_bump(a + 0.15 * L, a + 0.55 * L))]


def _pairing(op, flux, eta, phi):
    cent = op.mesh.element_coords().mean(axis=1)
    integrand = np.einsum("ei,ei->e", flux, eta(cent)) * phi(cent)
    return float(np.sum(op.area * integrand))


def flux_weak_test(cfg: SweepConfig, test_fields=None, divcurl: bool = True):
    """Flux pairings ``int (A grad u) . eta phi`` per eps against the limit.

    Returns ``(flux_dev, divcurl_dev)`` arrays of shape ``(n_eps, n_fields)``.
    The Div-Curl pairing replaces ``eta`` by the gradient of the first
    eigenfunction of each operator (sign aligned with the reference one).
    """
    state = compute_rows(cfg, eig=divcurl, src=True)
    fields = default_test_fields(state.problem.domain) if test_fields is None else test_fields
    u0 = state.results["ref"]["u"]
    ref_flux = state.ref_op.flux(u0)
    ref_pair = [_pairing(state.ref_op, ref_flux, eta, phi) for eta, phi in fields]
    n = len(cfg.eps_list)
    flux_dev = np.zeros((n, len(fields)))
    dc_dev = np.full((n, len(fields)), np.nan)
    if divcurl:
        v0 = state.ref_op.expand(state.results["ref"]["eig"].vectors[:, 0])
        g0 = state.ref_op.gradient(v0)
        ref_dc = [_pairing(state.ref_op, ref_flux, lambda p, g=g0: g, phi) for _, phi in fields]
    for i, e in enumerate(cfg.eps_list):
        op = fine_operator(state, e)
        fl = op.flux(state.results[e]["u"])
        for j, (eta, phi) in enumerate(fields):
            flux_dev[i, j] = abs(_pairing(op, fl, eta, phi) - ref_pair[j])
        if divcurl:
            ve = op.expand(state.results[e]["eig"].vectors[:, 0])
            ve = ve if ve @ (state.ref_op.M_full @ v0) >= 0 else -ve
            ge = op.gradient(ve)
            for j, (_, phi) in enumerate(fields):
                dc_dev[i, j] = abs(_pairing(op, fl, lambda p, g=ge: g, phi) - ref_dc[j])
    return flux_dev, dc_dev


def run_sweep(cfg: SweepConfig, with_source: bool | None = None) -> ConvergenceTable:
    """Spectral sweep plus, when loads are given, source and flux diagnostics."""
    if with_source is None:
        with_source = cfg.loads is not None
    compute_rows(cfg, eig=True, src=with_source)
    table = spectral_sweep(cfg)
    if with_source:
        src = source_sweep(cfg)
        fd, dc = flux_weak_test(cfg)
        src.flux_dev[:] = fd.max(axis=1)
        table = table.merge(src)
        table.extras["divcurl_dev"] = dc
    return table
