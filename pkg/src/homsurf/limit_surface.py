"""Limit metric, explicit limit surfaces and the embedding identity check.

The limit metric is ``g_hat = rho0 L0^-1``. For the built-in families the
limit manifold is a surface of revolution (or a graph over the plane for
local bumps) whose height comes from a cumulative quadrature of a square
root; ``check_embedding`` compares its first fundamental form with
``g_hat`` on a grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ChartError, EmbeddabilityError
from .geometry import CoefficientField, Immersion, ParamDomain, jacobian_fd, make_oscillation
from .homogenize import Profile
from .quadrature import ChebyshevInterpolant, adaptive_simpson, chebyshev_nodes

CLAMP = 1e-12
PROFILE_KIND = "revolution_profile"
HEIGHT_KIND = "revolution_height"
GRAPH_KIND = "bump_graph"
KINDS = (PROFILE_KIND, HEIGHT_KIND, GRAPH_KIND)


@dataclass(frozen=True)
class LimitMetric:
    """Limit metric ``g_hat`` and the density of the limit measure."""

    g_hat: Callable
    mu_hat_density: Callable


@dataclass(frozen=True)
class LimitEmbedding:
    """Explicit limit surface ``h0`` with its height integrand(s).

    ``height_integrand`` maps the slow coordinate to the quantity under the
    square root. For ``GRAPH_KIND`` there is one integrand per bump, stored
    in ``parts`` together with the height interpolants.
    """

    h0: Immersion
    height_integrand: Callable
    kind: str
    heights: tuple = ()
    parts: tuple = ()


def _as_point_fn(rho0):
    if isinstance(rho0, Profile):
        return lambda p: rho0(np.asarray(p, dtype=float)[..., 0])
    if isinstance(rho0, (int, float)):
        c = float(rho0)
        return lambda p: np.full(np.shape(p)[:-1], c)
    return rho0


def limit_metric(rho0, L0, domain: ParamDomain | None = None, n: int = 64) -> LimitMetric:
    """Build ``g_hat = rho0 L0^-1``; SPD is certified on an ``n x n`` grid of ``domain``.

    ``rho0`` is a :class:`Profile` (a function of the first coordinate), a
    point function or a constant; ``L0`` a :class:`CoefficientField` or a
    point function returning 2x2 matrices.
    """
    rho_fn = _as_point_fn(rho0)
    L_fn = L0.A if isinstance(L0, CoefficientField) else L0

    def g_hat(p):
        p = np.asarray(p, dtype=float)
        return np.asarray(rho_fn(p))[..., None, None] * np.linalg.inv(L_fn(p))

    if domain is not None:
        pts = domain.grid(n, n)
        G = g_hat(pts)
        rho = np.asarray(rho_fn(pts))
        if not (np.all(np.isfinite(G)) and np.all(rho > 0)):
            raise ChartError("limit metric inputs are not finite or rho0 is not positive")
        asym = np.max(np.abs(G - np.swapaxes(G, -1, -2)))
        lam = np.linalg.eigvalsh(0.5 * (G + np.swapaxes(G, -1, -2)))[..., 0]
        if asym > 1e-10 * max(1.0, float(np.max(np.abs(G)))) or np.min(lam) <= 0:
            k = np.unravel_index(int(np.argmin(lam)), lam.shape)
            raise ChartError(
                f"rho0 L0^-1 is not SPD at {tuple(pts[k])}: min eigenvalue {lam[k]:.3g}, asymmetry {asym:.3g}")
    return LimitMetric(g_hat=g_hat, mu_hat_density=rho_fn)


# ----------------------------------------------------------------------------
# height by cumulative quadrature, cached at Chebyshev nodes
# ----------------------------------------------------------------------------

def _first_violation(integrand, t):
    v = np.asarray(integrand(t), dtype=float)
    bad = np.flatnonzero(~(v >= -CLAMP))
    if bad.size:
        i = bad[0]
        raise EmbeddabilityError(
            f"height integrand is negative at t = {t[i]:.10g} (value {v[i]:.3e}); "
            "the limit metric is not realisable by this family", t=float(t[i]), value=float(v[i]))


def _clamped_sqrt(integrand):
    def g(t):
        t = np.asarray(t, dtype=float)
        v = np.asarray(integrand(t), dtype=float)
        if np.any(~(v >= -CLAMP)):
            _first_violation(integrand, np.atleast_1d(t))
        return np.sqrt(np.maximum(v, 0.0))

    return g


def cumulative_height(integrand, a, b, tol=1e-10, n0=16, n_max=1024):
    """Chebyshev interpolant of ``H(t) = int_a^t sqrt(integrand)``.

    Node values are accumulated piece by piece between consecutive nodes;
    the node count doubles until the interpolant stops changing.
    """
    _first_violation(integrand, np.linspace(a, b, 1025))
    root = _clamped_sqrt(integrand)
    qtol = 1e-2 * tol

    def node_values(n):
        x = chebyshev_nodes(n, a, b)
        pieces = [adaptive_simpson(root, lo, hi, qtol * (hi - lo) / (b - a)) for lo, hi in zip(x[:-1], x[1:])]
        return np.concatenate([[0.0], np.cumsum(pieces)])

    n = n0
    prev = ChebyshevInterpolant(node_values(n), a, b)
    while True:
        n *= 2
        cur = ChebyshevInterpolant(node_values(n), a, b)
        odd = chebyshev_nodes(n, a, b)[1::2]
        scale = max(1.0, float(np.max(np.abs(cur.values))))
        if np.max(np.abs(prev(odd) - cur(odd))) <= tol * scale or n >= n_max:
            return cur
        prev = cur


def height_integrand(profile: Profile, kind: str):
    """The quantity under the square root for one embedding family."""
    name = profile.scenario
    if kind == PROFILE_KIND:
        return lambda t: 1.0 - profile.derivative(t) ** 2
    if kind == GRAPH_KIND:
        return profile.excess
    if name == "sphere_latitude":
        return lambda t: profile(t) ** 2 / np.sin(t) ** 2 - np.cos(t) ** 2
    return lambda t: profile(t) ** 2 / np.asarray(t) ** 2 - 1.0


def _revolution(profile, kind, domain, H, g):
    name = profile.scenario
    sphere = name.startswith("sphere")

    def radius(t):
        if kind == PROFILE_KIND:
            return profile(t), profile.derivative(t)
        if sphere:
            return np.sin(t), np.cos(t)
        return t, np.ones_like(t)

    def h(p, eps=0.0):
        t, th = p[..., 0], p[..., 1]
        s, _ = radius(t)
        return np.stack([s * np.sin(th), s * np.cos(th), H(t)], axis=-1)

    def J(p, eps=0.0):
        t, th = p[..., 0], p[..., 1]
        s, ds = radius(t)
        c1 = np.stack([ds * np.sin(th), ds * np.cos(th), g(t)], axis=-1)
        c2 = np.stack([s * np.cos(th), -s * np.sin(th), np.zeros_like(t)], axis=-1)
        return np.stack([c1, c2], axis=-1)

    return h, J


def _bump_graph(profiles, heights, roots):
    centers = [np.asarray(pr.bump.center, dtype=float) for pr in profiles]

    def _parts(p):
        z = np.zeros(p.shape[:-1])
        grad = np.zeros(p.shape)
        for c, pr, H, g in zip(centers, profiles, heights, roots):
            d = p - c
            s = np.hypot(d[..., 0], d[..., 1])
            sc = np.minimum(s, pr.bump.outer)
            z = z + H(sc)
            slope = np.where(s < pr.bump.outer, g(sc), 0.0)
            e_r = np.where(s[..., None] > 0, d / np.where(s > 0, s, 1.0)[..., None], 0.0)
            grad = grad + slope[..., None] * e_r
        return z, grad

    def h(p, eps=0.0):
        z, _ = _parts(p)
        return np.stack([p[..., 0], p[..., 1], z], axis=-1)

    def J(p, eps=0.0):
        _, grad = _parts(p)
        one, zero = np.ones(p.shape[:-1]), np.zeros(p.shape[:-1])
        c1 = np.stack([one, zero, grad[..., 0]], axis=-1)
        c2 = np.stack([zero, one, grad[..., 1]], axis=-1)
        return np.stack([c1, c2], axis=-1)

    return h, J


def embed_revolution(rho0, kind: str, domain: ParamDomain, tol: float = 1e-10) -> LimitEmbedding:
    """Explicit limit surface for a profile (or a list of bump profiles).

    Raises :class:`EmbeddabilityError` naming the first parameter value where
    the height integrand drops below ``-1e-12``; smaller negatives are
    clamped to zero.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown embedding kind {kind!r}; valid: {', '.join(KINDS)}")
    profiles = list(rho0) if isinstance(rho0, (list, tuple)) else [rho0]
    zero = make_oscillation("zero")
    if kind == GRAPH_KIND:
        integrands = tuple(height_integrand(pr, kind) for pr in profiles)
        heights = tuple(cumulative_height(g, 0.0, pr.bump.outer, tol) for g, pr in zip(integrands, profiles))
        roots = tuple(_clamped_sqrt(g) for g in integrands)
        h, J = _bump_graph(profiles, heights, roots)
        imm = Immersion(f"{profiles[0].scenario}[limit]", h, J, 0.0, domain, zero, 1.0)
        return LimitEmbedding(imm, integrands[0], kind, heights, tuple(zip(profiles, integrands)))
    prof = profiles[0]
    a, b = domain.range_1
    g_in = height_integrand(prof, kind)
    H = cumulative_height(g_in, a, b, tol)
    h, J = _revolution(prof, kind, domain, H, _clamped_sqrt(g_in))
    imm = Immersion(f"{prof.scenario}[limit]", h, J, 0.0, domain, zero, 1.0)
    return LimitEmbedding(imm, g_in, kind, (H,), ((prof, g_in),))


def check_embedding(emb: LimitEmbedding, lm: LimitMetric, n: int = 64, step: float | None = None,
                    analytic: bool = False) -> float:
    """Max Frobenius norm of ``dh0^T dh0 - g_hat`` over an ``n x n`` interior grid.

    The Jacobian is by central differences unless ``analytic`` is set.
    """
    pts = emb.h0.domain.grid(n, n)
    J = emb.h0.jacobian(pts) if analytic else jacobian_fd(emb.h0, pts, step)
    G = np.einsum("...ki,...kj->...ij", J, J)
    R = G - lm.g_hat(pts)
    return float(np.max(np.sqrt(np.sum(R**2, axis=(-2, -1)))))


# ----------------------------------------------------------------------------
# OBJ export
# ----------------------------------------------------------------------------

def surface_mesh(imm: Immersion, n1: int = 48, n2: int = 96):
    """Vertices and 0-based triangles of ``imm`` on a structured parameter grid.

    Triangles are counter-clockwise in the parameter plane, so face normals
    follow ``dh/dx1 x dh/dx2``. The angular seam is closed for periodic domains.
    """
    dom = imm.domain
    periodic = dom.periodic_2
    s1 = np.linspace(*dom.range_1, n1 + 1)
    m2 = n2 if periodic else n2 + 1
    s2 = dom.range_2[0] + np.arange(m2) * dom.lengths[1] / n2
    P = np.stack(np.meshgrid(s1, s2, indexing="ij"), axis=-1)
    V = imm(P).reshape(-1, 3)
    idx = np.arange(P.shape[0] * m2).reshape(P.shape[0], m2)
    j1 = np.arange(n2)
    j2 = (j1 + 1) % m2 if periodic else j1 + 1
    a, b = idx[:-1][:, j1], idx[1:][:, j1]
    c, d = idx[1:][:, j2], idx[:-1][:, j2]
    F = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
    return V, F


def write_obj(path, vertices, faces, name: str = "surface") -> Path:
    """Write one object as ``v x y z`` / ``f i j k`` lines with 1-based indices."""
    path = Path(path)
    lines = [f"o {name}"]
    lines += [f"v {x:.10g} {y:.10g} {z:.10g}" for x, y, z in np.asarray(vertices, dtype=float)]
    lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in np.asarray(faces, dtype=int)]
    path.write_text("\n".join(lines) + "\n")
    return path
