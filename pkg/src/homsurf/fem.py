"""P1 finite elements for ``m rho u - div(A grad u)`` on parameter rectangles.

Meshes are structured with alternating diagonals; the angular direction can
be periodic (node identification), and the remaining sides carry
homogeneous Dirichlet conditions eliminated from the system.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, ConfigError, SolverError
from .geometry import CoefficientField, ParamDomain

DEFAULT_SEED = 0x5EED
SIDES = ("x1_min", "x1_max", "x2_min", "x2_max")
DENSE_LIMIT = 400
GROUP_RTOL = 1e-8


@dataclass(frozen=True)
class Mesh:
    """Structured triangulation of a parameter rectangle.

    ``raw_nodes`` are the ``(n1+1) x (n2+1)`` grid points; ``dof`` maps each
    raw node to its index in ``nodes`` after periodic identification.
    ``elements`` index ``nodes`` and ``raw_elements`` index ``raw_nodes``
    (the latter give true element geometry across the periodic seam).
    """

    domain: ParamDomain
    shape: tuple
    raw_nodes: np.ndarray
    dof: np.ndarray
    nodes: np.ndarray
    raw_elements: np.ndarray
    elements: np.ndarray
    dirichlet_nodes: np.ndarray
    periodic_pairs: np.ndarray
    h_max: float

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def free(self):
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.dirichlet_nodes] = False
        return np.flatnonzero(mask)

    def element_coords(self):
        return self.raw_nodes[self.raw_elements]

    def grid_values(self, u):
        """Nodal vector reshaped to the raw ``(n1+1, n2+1)`` grid."""
        n1, n2 = self.shape
        return np.asarray(u)[self.dof].reshape(n1 + 1, n2 + 1)


def build_mesh(domain: ParamDomain, n1: int, n2: int, dirichlet_sides=None) -> Mesh:
    """Crossed-diagonal mesh with ``n1 x n2`` cells.

    By default every non-periodic side is Dirichlet; ``dirichlet_sides``
    selects a subset of ``SIDES`` (sides in the periodic direction are not
    allowed).
    """
    if int(n1) != n1 or int(n2) != n2 or n1 < 2 or n2 < 2:
        raise ConfigError(f"mesh needs n1, n2 >= 2 subdivisions, got ({n1}, {n2})")
    n1, n2 = int(n1), int(n2)
    periodic = domain.periodic_2
    if dirichlet_sides is None:
        dirichlet_sides = SIDES[:2] if periodic else SIDES
    for s in dirichlet_sides:
        if s not in SIDES:
            raise ConfigError(f"unknown side {s!r}; valid: {', '.join(SIDES)}")
        if periodic and s in SIDES[2:]:
            raise ConfigError(f"side {s!r} is periodic and cannot carry Dirichlet data")

    x1 = np.linspace(*domain.range_1, n1 + 1)
    x2 = np.linspace(*domain.range_2, n2 + 1)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    raw = np.stack([X1.ravel(), X2.ravel()], axis=-1)
    ridx = np.arange((n1 + 1) * (n2 + 1)).reshape(n1 + 1, n2 + 1)

    if periodic:
        keep = ridx[:, :n2]
        dof_grid = np.empty_like(ridx)
        dof_grid[:, :n2] = np.arange(keep.size).reshape(n1 + 1, n2)
        dof_grid[:, n2] = dof_grid[:, 0]
        pairs = np.stack([ridx[:, n2], ridx[:, 0]], axis=-1)
    else:
        dof_grid = ridx.copy()
        pairs = np.zeros((0, 2), dtype=int)
    dof = dof_grid.ravel()
    nodes = raw[ridx[:, :n2].ravel()] if periodic else raw.copy()

    i, j = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    i, j = i.ravel(), j.ravel()
    a, b = ridx[i, j], ridx[i + 1, j]
    c, d = ridx[i + 1, j + 1], ridx[i, j + 1]
    even = (i + j) % 2 == 0
    t1 = np.where(even[:, None], np.stack([a, b, c], -1), np.stack([a, b, d], -1))
    t2 = np.where(even[:, None], np.stack([a, c, d], -1), np.stack([b, c, d], -1))
    raw_el = np.concatenate([t1, t2])

    side_nodes = {
        "x1_min": dof_grid[0, :], "x1_max": dof_grid[-1, :],
        "x2_min": dof_grid[:, 0], "x2_max": dof_grid[:, -1],
    }
    dirichlet = np.unique(np.concatenate([side_nodes[s] for s in dirichlet_sides] or [np.zeros(0, int)]))
    h1, h2 = domain.lengths[0] / n1, domain.lengths[1] / n2
    return Mesh(domain, (n1, n2), raw, dof, nodes, raw_el, dof[raw_el], dirichlet.astype(int), pairs,
                float(np.hypot(h1, h2)))


# ----------------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteOperator:
    """Stiffness ``K`` and mass ``M`` restricted to the free nodes.

    The discrete operator is ``K + m M``. Full (unconstrained) matrices and
    per-element data are kept for loads, fluxes and diagnostics.
    """

    mesh: Mesh
    K: sp.csr_matrix
    M: sp.csr_matrix
    m: float
    K_full: sp.csr_matrix
    M_full: sp.csr_matrix
    free: np.ndarray
    area: np.ndarray
    grads: np.ndarray
    A_elem: np.ndarray
    rho_elem: np.ndarray
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self):
        return self.free.size

    @property
    def system(self):
        return (self.K + self.m * self.M).tocsc() if self.m else self.K.tocsc()

    def release(self):
        """Drop cached factorizations (eigenpairs stay cached)."""
        for key in [k for k in self._cache if k[0] == "lu"]:
            del self._cache[key]

    def expand(self, x):
        """Constrained vector(s) to full nodal vector(s) with zero Dirichlet values."""
        x = np.asarray(x)
        out = np.zeros((self.mesh.n_nodes,) + x.shape[1:])
        out[self.free] = x
        return out

    def gradient(self, u):
        """Elementwise constant gradient of a full nodal vector, shape (E, 2)."""
        return np.einsum("eik,ei->ek", self.grads, np.asarray(u)[self.mesh.elements])

    def flux(self, u):
        """Elementwise ``A grad u``."""
        return np.einsum("eij,ej->ei", self.A_elem, self.gradient(u))


def _p1_geometry(X):
    B = np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], axis=-1)  # columns are edges
    det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
    Binv_T = np.empty_like(B)
    Binv_T[:, 0, 0] = B[:, 1, 1] / det
    Binv_T[:, 0, 1] = -B[:, 1, 0] / det
    Binv_T[:, 1, 0] = -B[:, 0, 1] / det
    Binv_T[:, 1, 1] = B[:, 0, 0] / det
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grads = np.einsum("ij,ekj->eik", ref, Binv_T)
    return 0.5 * det, grads


def _check_finite(values, centroids, what, cf):
    bad = ~np.isfinite(values).reshape(values.shape[0], -1).all(axis=1)
    if bad.any():
        e = int(np.flatnonzero(bad)[0])
        raise AssemblyError(
            f"non-finite {what} of {cf.name or 'coefficient field'} at element {e} "
            f"(centroid {tuple(np.round(centroids[e], 12))})")


def assemble(mesh: Mesh, cf: CoefficientField, m: float = 0.0) -> DiscreteOperator:
    """Assemble P1 stiffness (centroid rule) and mass (edge-midpoint rule)."""
    X = mesh.element_coords()
    area, grads = _p1_geometry(X)
    if np.any(area <= 0):
        raise AssemblyError(f"element {int(np.argmin(area))} has non-positive area")
    cent = X.mean(axis=1)
    A = np.broadcast_to(np.asarray(cf.A(cent), dtype=float), (len(cent), 2, 2))
    _check_finite(A, cent, "A", cf)
    mids = 0.5 * (X + np.roll(X, -1, axis=1))  # midpoints of edges (0,1), (1,2), (2,0)
    rho_m = np.broadcast_to(np.asarray(cf.rho(mids), dtype=float), mids.shape[:-1])
    _check_finite(rho_m, cent, "rho", cf)

    Ke = area[:, None, None] * np.einsum("eik,ekl,ejl->eij", grads, A, grads)
    # basis values at the edge midpoints: phi_i(mid_q) = 1/2 if node i is on edge q
    Phi = 0.5 * np.array([[1.0, 0.0, 1.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])  # [node, edge]
    Me = (area / 3.0)[:, None, None] * np.einsum("iq,eq,jq->eij", Phi, rho_m, Phi)

    el = mesh.elements
    rows = np.repeat(el, 3, axis=1).ravel()
    cols = np.tile(el, (1, 3)).ravel()
    N = mesh.n_nodes
    K_full = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(N, N)).tocsr()
    M_full = sp.coo_matrix((Me.ravel(), (rows, cols)), shape=(N, N)).tocsr()
    # exact symmetry (summation order can differ between (i, j) and (j, i))
    K_full = 0.5 * (K_full + K_full.T)
    M_full = 0.5 * (M_full + M_full.T)
    free = mesh.free
    K = K_full[free][:, free].tocsr()
    M = M_full[free][:, free].tocsr()
    return DiscreteOperator(mesh, K, M, float(m), K_full, M_full, free, area, grads, np.array(A),
                            rho_m.mean(axis=1), cf.name)


def export_coo(matrix, path) -> Path:
    """Write a sparse matrix as ``i j value`` lines (0-based)."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    path = Path(path)
    with path.open("w") as fh:
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{i} {j} {v:.17g}\n")
    return path


# ----------------------------------------------------------------------------
# solvers
# ----------------------------------------------------------------------------

def _factor(op: DiscreteOperator, S):
    key = ("lu", op.m)
    if key not in op._cache:
        try:
            op._cache[key] = spla.splu(S)
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
    return op._cache[key]


def load_vector(op: DiscreteOperator, load_f=None, load_F=None, rho=None):
    """Full load vector of ``(rho f, v) + (rho F, grad v)``.

    ``load_f`` is a nodal array or a function of parameter points; ``load_F``
    an (E, 2) array or a function of element centroids. ``rho`` overrides the
    operator's density for the ``F`` term (the ``f`` term uses the mass matrix).
    """
    mesh = op.mesh
    b = np.zeros(mesh.n_nodes)
    if load_f is not None:
        f = load_f(mesh.nodes) if callable(load_f) else np.asarray(load_f, dtype=float)
        f = np.broadcast_to(f, (mesh.n_nodes,))
        b += (op.M_full if rho is None else _mass_with_density(op, rho)) @ f
    if load_F is not None:
        cent = mesh.element_coords().mean(axis=1)
        F = load_F(cent) if callable(load_F) else np.asarray(load_F, dtype=float)
        F = np.broadcast_to(F, cent.shape)
        r = op.rho_elem if rho is None else np.asarray(rho(cent), dtype=float)
        contrib = (op.area * r)[:, None] * np.einsum("ek,eik->ei", F, op.grads)
        np.add.at(b, mesh.elements.ravel(), contrib.ravel())
    return b


def _mass_with_density(op: DiscreteOperator, rho):
    """Mass matrix of ``op``'s mesh with a different density (full size)."""
    cf = CoefficientField(A=lambda p: np.broadcast_to(np.eye(2), np.shape(p)[:-1] + (2, 2)), rho=rho)
    return assemble(op.mesh, cf).M_full


def solve_source(op: DiscreteOperator, load_f=None, load_F=None, rho=None, rtol: float = 1e-10):
    """Solve ``(K + mM) u = b`` and return the full nodal solution."""
    if op.mesh.dirichlet_nodes.size == 0 and not op.m > 0:
        raise SolverError("singular system: m = 0 without Dirichlet nodes (constants are in the kernel)")
    b = load_vector(op, load_f, load_F, rho)[op.free]
    if not np.any(b):
        return np.zeros(op.mesh.n_nodes)
    S = op.system
    lu = _factor(op, S)
    x = lu.solve(b)
    res = relative_residual(S, x, b)
    for _ in range(3):
        if res <= rtol:
            break
        x = x + lu.solve(b - S @ x)
        res = relative_residual(S, x, b)
    if not res <= rtol:
        raise SolverError(f"source solve residual {res:.3e} above {rtol:g}", residual=res)
    return op.expand(x)


def relative_residual(S, x, b):
    """Normwise backward error ``|b - Sx| / (|S| |x| + |b|)`` in the max norm."""
    r = np.max(np.abs(b - S @ x))
    scale = abs(S).sum(axis=1).max() * np.max(np.abs(x)) + np.max(np.abs(b))
    return float(r / scale) if scale > 0 else 0.0


@dataclass(frozen=True)
class EigenResult:
    """Smallest generalized eigenpairs ``K x = lambda M x`` (constrained vectors)."""

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    groups: tuple

    def group_of(self, k):
        return next(g for g in self.groups if k in g)


def multiplicity_groups(values, rtol=GROUP_RTOL):
    """Partition sorted eigenvalues into clusters with relative gaps <= ``rtol``."""
    values = np.asarray(values)
    groups, cur = [], [0]
    for k in range(1, len(values)):
        if abs(values[k] - values[cur[-1]]) <= rtol * max(abs(values[k]), abs(values[cur[-1]])):
            cur.append(k)
        else:
            groups.append(tuple(cur))
            cur = [k]
    if len(values):
        groups.append(tuple(cur))
    return tuple(groups)


def eig_smallest(op: DiscreteOperator, k: int, seed: int = DEFAULT_SEED, group_rtol: float = GROUP_RTOL,
                 tol: float = 0.0, maxiter: int | None = None) -> EigenResult:
    """``k`` smallest eigenpairs by shift-invert Lanczos (dense for tiny systems)."""
    key = ("eig", k, seed, group_rtol, tol, maxiter)
    if key not in op._cache:
        op._cache[key] = _eig_smallest(op, k, seed, group_rtol, tol, maxiter)
    return op._cache[key]


def _eig_smallest(op, k, seed, group_rtol, tol, maxiter):
    n = op.dim
    if not 1 <= k <= n:
        raise ConfigError(f"need 1 <= k <= constrained dimension, got k = {k}, dimension {n}")
    S = op.system
    M = op.M.tocsc()
    if n <= DENSE_LIMIT or k >= n - 1:
        w, V = sla.eigh(S.toarray(), M.toarray())
        w, V = w[:k], V[:, :k]
    else:
        sigma = 0.0
        if op.mesh.dirichlet_nodes.size == 0 and not op.m > 0:
            sigma = -1e-6 * float(S.diagonal().sum() / M.diagonal().sum())
        shifted = (S - sigma * M).tocsc() if sigma else S
        lu = _factor(op, S) if not sigma else spla.splu(shifted)
        OPinv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            w, V = spla.eigsh(S, k=k, M=M, sigma=sigma, which="LM", OPinv=OPinv, v0=v0, tol=tol,
                              maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            raise SolverError(f"eigensolver did not converge for k = {k}: "
                              f"{len(exc.eigenvalues)} of {k} pairs found") from exc
        # Rayleigh-Ritz on the returned block: M-orthonormal, sorted
        Kr = V.T @ (S @ V)
        Mr = V.T @ (M @ V)
        w, C = sla.eigh(0.5 * (Kr + Kr.T), 0.5 * (Mr + Mr.T))
        V = V @ C
    order = np.argsort(w)
    w, V = w[order], V[:, order]
    # deterministic sign: largest-magnitude entry positive
    idx = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[idx, np.arange(V.shape[1])])
    res = np.linalg.norm(S @ V - (M @ V) * w, axis=0)
    return EigenResult(w, V, res, multiplicity_groups(w, group_rtol))
