"""Oscillating surfaces in R^3, their first fundamental forms and chart coefficients.

Every surface is described on a flat parameter rectangle. Points are arrays
of shape ``(..., 2)``; all maps are vectorised over the leading axes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ChartError, ConfigError, ImmersionDegeneracyError

SCENARIOS = ("star_graph", "sphere_longitude", "sphere_latitude", "radial_graph", "local_bumps")


# ----------------------------------------------------------------------------
# oscillation profiles f(t, y), periodic in the fast variable y
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Oscillation:
    """A profile ``f(t, y)`` that is ``period``-periodic in ``y``.

    ``t`` is the slow coordinate; most profiles ignore it (``d_t`` is zero).
    """

    name: str
    f: Callable
    d_y: Callable
    period: float
    d_t: Callable | None = None
    d_ty: Callable | None = None

    @property
    def slow_dependent(self) -> bool:
        return self.d_t is not None

    def dt(self, t, y):
        if self.d_t is None:
            return np.zeros(np.broadcast(t, y).shape)
        return self.d_t(t, y)


def _sin2(amp):
    return Oscillation(
        "sin2",
        f=lambda t, y: amp * np.sin(y) ** 2 + 0.0 * t,
        d_y=lambda t, y: amp * np.sin(2.0 * y) + 0.0 * t,
        period=np.pi,
    )


def _zero(amp):
    z = lambda t, y: 0.0 * (np.asarray(t) + np.asarray(y))
    return Oscillation("zero", f=z, d_y=z, period=2.0 * np.pi)


def _sin(amp):
    return Oscillation(
        "sin",
        f=lambda t, y: amp * np.sin(y) + 0.0 * t,
        d_y=lambda t, y: amp * np.cos(y) + 0.0 * t,
        period=2.0 * np.pi,
    )


def _sin2_slow(amp):
    # amplitude modulated by the slow coordinate: f(t, y) = amp (1 + t^2 / 4) sin^2 y
    return Oscillation(
        "sin2_slow",
        f=lambda t, y: amp * (1.0 + 0.25 * t**2) * np.sin(y) ** 2,
        d_y=lambda t, y: amp * (1.0 + 0.25 * t**2) * np.sin(2.0 * y),
        period=np.pi,
        d_t=lambda t, y: amp * 0.5 * t * np.sin(y) ** 2,
        d_ty=lambda t, y: amp * 0.5 * t * np.sin(2.0 * y),
    )


OSCILLATIONS = {"sin2": _sin2, "zero": _zero, "sin": _sin, "sin2_slow": _sin2_slow}


def make_oscillation(name: str = "sin2", amplitude: float = 1.0) -> Oscillation:
    try:
        return OSCILLATIONS[name](float(amplitude))
    except KeyError:
        raise ConfigError(
            f"unknown oscillation profile {name!r}; valid: {sorted(OSCILLATIONS)}") from None


# ----------------------------------------------------------------------------
# domains, immersions, coefficient fields
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamDomain:
    coord_names: tuple[str, str]
    range_1: tuple[float, float]
    range_2: tuple[float, float]
    periodic_2: bool = False
    inner_cutoff: float = 0.0

    def __post_init__(self):
        if not (self.range_1[1] > self.range_1[0] and self.range_2[1] > self.range_2[0]):
            raise ConfigError(f"degenerate parameter rectangle {self.range_1} x {self.range_2}")
        if self.inner_cutoff > 0 and self.range_1[0] < self.inner_cutoff - 1e-15:
            raise ConfigError("range_1 must start at or beyond the inner cutoff")

    @property
    def lengths(self):
        return (self.range_1[1] - self.range_1[0], self.range_2[1] - self.range_2[0])

    def grid(self, n1, n2, interior=True):
        """Tensor grid of sample points, shape (n1, n2, 2)."""
        if interior:
            s1 = (np.arange(n1) + 0.5) / n1
            s2 = (np.arange(n2) + 0.5) / n2
        else:
            s1 = np.linspace(0.0, 1.0, n1)
            s2 = np.linspace(0.0, 1.0, n2)
        t1 = self.range_1[0] + s1 * self.lengths[0]
        t2 = self.range_2[0] + s2 * self.lengths[1]
        T1, T2 = np.meshgrid(t1, t2, indexing="ij")
        return np.stack([T1, T2], axis=-1)


@dataclass(frozen=True)
class Immersion:
    """A parametrised surface ``h_eps`` with its analytic Jacobian.

    ``map_fn(p, eps)`` returns points of shape ``(..., 3)`` and
    ``jacobian_fn(p, eps)`` matrices of shape ``(..., 3, 2)``.
    """

    name: str
    map_fn: Callable
    jacobian_fn: Callable
    eps: float
    domain: ParamDomain
    oscillation: Oscillation
    bilipschitz: float = 10.0
    params: dict = field(default_factory=dict)

    def __call__(self, p):
        return self.map_fn(np.asarray(p, dtype=float), self.eps)

    def jacobian(self, p):
        return self.jacobian_fn(np.asarray(p, dtype=float), self.eps)

    def with_eps(self, eps: float) -> "Immersion":
        if eps < 0:
            raise ConfigError("eps must be nonnegative")
        return dataclasses.replace(self, eps=float(eps))


@dataclass(frozen=True)
class CoefficientField:
    """Chart coefficient ``A`` (2x2 per point) and density ``rho``.

    ``A(p)`` returns ``(..., 2, 2)`` and ``rho(p)`` returns ``(...)``.
    ``lambda_ell`` / ``Lambda_ell`` are sampled ellipticity bounds
    (``A xi.xi >= lambda_ell`` and ``A^-1 xi.xi >= 1/Lambda_ell``).
    """

    A: Callable
    rho: Callable
    lambda_ell: float = float("nan")
    Lambda_ell: float = float("nan")
    name: str = ""


def _eig_bounds(A):
    w = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))
    return float(w[..., 0].min()), float(w[..., -1].max())


def certify(cf: CoefficientField, domain: ParamDomain, n: int = 256, bound: float | None = None):
    """Return ``cf`` with ellipticity bounds sampled on an ``n x n`` grid.

    With ``bound`` (the constant C0) the sampled bounds and the density
    must lie in ``[1/C0, C0]``.
    """
    pts = domain.grid(n, n)
    A = cf.A(pts)
    rho = np.broadcast_to(cf.rho(pts), pts.shape[:-1])
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(rho))):
        raise ConfigError(f"non-finite coefficient samples in {cf.name or 'field'}")
    lam, Lam = _eig_bounds(A)
    if bound is not None:
        lo, hi = 1.0 / bound, bound
        if lam < lo or Lam > hi or rho.min() < lo or rho.max() > hi:
            raise ConfigError(
                f"ellipticity certification failed for {cf.name or 'field'}: "
                f"eig range [{lam:.4g}, {Lam:.4g}], rho range [{rho.min():.4g}, {rho.max():.4g}] "
                f"outside [{lo:.4g}, {hi:.4g}]")
    return dataclasses.replace(cf, lambda_ell=lam, Lambda_ell=Lam)


# ----------------------------------------------------------------------------
# operations
# ----------------------------------------------------------------------------

def jacobian_fd(imm: Immersion, p, step: float | None = None):
    """Central finite-difference Jacobian of ``imm`` at ``p`` (shape (..., 3, 2))."""
    p = np.asarray(p, dtype=float)
    if step is None:
        scale = np.maximum(1.0, np.abs(p))
        step_arr = np.cbrt(np.finfo(float).eps) * scale
    else:
        if not step > 0:
            raise ValueError(f"finite-difference step must be positive, got {step}")
        step_arr = np.full(p.shape, float(step))
    cols = []
    for k in range(2):
        e = np.zeros(p.shape)
        e[..., k] = step_arr[..., k]
        d = (imm(p + e) - imm(p - e)) / (2.0 * step_arr[..., k : k + 1])
        cols.append(d)
    return np.stack(cols, axis=-1)


def pullback(imm: Immersion, p):
    """First fundamental form ``G = J^T J`` at parameter point(s) ``p``."""
    J = imm.jacobian(p)
    G = np.einsum("...ki,...kj->...ij", J, J)
    det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
    scale = np.maximum(G[..., 0, 0] * G[..., 1, 1], np.finfo(float).tiny)
    bad = ~(det > 1e-14 * scale)
    if np.any(bad):
        where = np.asarray(p, dtype=float)[bad].reshape(-1, 2)[0]
        raise ImmersionDegeneracyError(
            f"{imm.name}: rank-deficient Jacobian at parameter point {tuple(where)}")
    return G


def _inv2(G):
    det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
    inv = np.empty_like(G)
    inv[..., 0, 0] = G[..., 1, 1]
    inv[..., 1, 1] = G[..., 0, 0]
    inv[..., 0, 1] = -G[..., 0, 1]
    inv[..., 1, 0] = -G[..., 1, 0]
    return inv / det[..., None, None], det


def pullback_field(imm: Immersion, certify_n: int | None = 256, bound: float | None = None):
    """Density ``rho = sqrt(det G)`` and chart coefficient ``A = rho G^-1``.

    In two dimensions ``det A = 1`` identically. Bounds are certified by
    dense sampling unless ``certify_n`` is None.
    """

    def A(p):
        G = pullback(imm, p)
        inv, det = _inv2(G)
        return np.sqrt(det)[..., None, None] * inv

    def rho(p):
        G = pullback(imm, p)
        return np.sqrt(G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0])

    cf = CoefficientField(A=A, rho=rho, name=f"{imm.name}[eps={imm.eps:g}]")
    if certify_n:
        if bound is None:
            bound = imm.bilipschitz ** 2
        cf = certify(cf, imm.domain, certify_n, bound)
    return cf


def chart_coefficient(L, rho, metric):
    """Chart representation ``A_ij = rho g(L grad x^i, grad x^j)``.

    ``L`` holds the components ``g(L d_i, d_j)`` of a g-symmetric field in
    the coordinate frame, ``metric`` the components ``g_ij``. Since
    ``grad x^i = g^{ik} d_k``, the contraction is ``rho g^-1 L g^-1``.
    Each argument is a callable of the parameter point or a constant.
    """

    def _call(obj, p):
        return obj(p) if callable(obj) else np.broadcast_to(np.asarray(obj, dtype=float),
                                                             np.shape(p)[:-1] + np.shape(obj))

    def A(p):
        g = _call(metric, p)
        sym_err = np.abs(g[..., 0, 1] - g[..., 1, 0])
        det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]
        if np.any(sym_err > 1e-12 * np.abs(g).max()) or np.any(~(det > 0)) or np.any(~(g[..., 0, 0] > 0)):
            raise ChartError("chart metric is not symmetric positive definite")
        ginv, _ = _inv2(g)
        Lp = _call(L, p)
        r = _call(rho, p) if callable(rho) else np.asarray(rho, dtype=float)
        return np.asarray(r)[..., None, None] * (ginv @ Lp @ ginv)

    def rho_fn(p):
        return _call(rho, p) if callable(rho) else np.broadcast_to(float(rho), np.shape(p)[:-1])

    return CoefficientField(A=A, rho=rho_fn, name="chart")


def identity_field(rho: float = 1.0) -> CoefficientField:
    return CoefficientField(
        A=lambda p: np.broadcast_to(np.eye(2), np.shape(p)[:-1] + (2, 2)).copy(),
        rho=lambda p: np.full(np.shape(p)[:-1], float(rho)),
        lambda_ell=1.0, Lambda_ell=1.0, name="identity")


# ----------------------------------------------------------------------------
# built-in scenarios
# ----------------------------------------------------------------------------

def _sphere_frame(phi, theta):
    sp, cp = np.sin(phi), np.cos(phi)
    st, ct = np.sin(theta), np.cos(theta)
    S = np.stack([sp * st, sp * ct, cp], axis=-1)
    S_phi = np.stack([cp * st, cp * ct, -sp], axis=-1)
    S_theta = np.stack([sp * ct, -sp * st, np.zeros_like(sp)], axis=-1)
    return S, S_phi, S_theta


def _star_graph(osc: Oscillation):
    def h(p, eps):
        r, th = p[..., 0], p[..., 1]
        z = eps * osc.f(r, th / eps) if eps > 0 else 0.0 * r
        return np.stack([r * np.sin(th), r * np.cos(th), z], axis=-1)

    def J(p, eps):
        r, th = p[..., 0], p[..., 1]
        if eps > 0:
            y = th / eps
            dz_r, dz_th = eps * osc.dt(r, y), osc.d_y(r, y)
        else:
            dz_r = dz_th = 0.0 * r
        c1 = np.stack([np.sin(th), np.cos(th), dz_r], axis=-1)
        c2 = np.stack([r * np.cos(th), -r * np.sin(th), dz_th], axis=-1)
        return np.stack([c1, c2], axis=-1)

    return h, J


def _radial_graph(osc: Oscillation):
    def h(p, eps):
        r, th = p[..., 0], p[..., 1]
        z = eps * osc.f(r, r / eps) if eps > 0 else 0.0 * r
        return np.stack([r * np.sin(th), r * np.cos(th), z], axis=-1)

    def J(p, eps):
        r, th = p[..., 0], p[..., 1]
        if eps > 0:
            y = r / eps
            dz_r = eps * osc.dt(r, y) + osc.d_y(r, y)
        else:
            dz_r = 0.0 * r
        c1 = np.stack([np.sin(th), np.cos(th), dz_r], axis=-1)
        c2 = np.stack([r * np.cos(th), -r * np.sin(th), 0.0 * r], axis=-1)
        return np.stack([c1, c2], axis=-1)

    return h, J


def _sphere_longitude(osc: Oscillation):
    def h(p, eps):
        phi, th = p[..., 0], p[..., 1]
        S, _, _ = _sphere_frame(phi, th)
        w = 1.0 + (eps * osc.f(phi, th / eps) if eps > 0 else 0.0 * phi)
        return w[..., None] * S

    def J(p, eps):
        phi, th = p[..., 0], p[..., 1]
        S, S_phi, S_th = _sphere_frame(phi, th)
        if eps > 0:
            y = th / eps
            w = 1.0 + eps * osc.f(phi, y)
            w_phi, w_th = eps * osc.dt(phi, y), osc.d_y(phi, y)
        else:
            w, w_phi, w_th = 1.0 + 0.0 * phi, 0.0 * phi, 0.0 * phi
        c1 = w_phi[..., None] * S + w[..., None] * S_phi
        c2 = w_th[..., None] * S + w[..., None] * S_th
        return np.stack([c1, c2], axis=-1)

    return h, J


def _sphere_latitude(osc: Oscillation):
    def h(p, eps):
        phi, th = p[..., 0], p[..., 1]
        S, _, _ = _sphere_frame(phi, th)
        w = 1.0 + (eps * osc.f(phi, phi / eps) if eps > 0 else 0.0 * phi)
        return w[..., None] * S

    def J(p, eps):
        phi, th = p[..., 0], p[..., 1]
        S, S_phi, S_th = _sphere_frame(phi, th)
        if eps > 0:
            y = phi / eps
            w = 1.0 + eps * osc.f(phi, y)
            w_phi = eps * osc.dt(phi, y) + osc.d_y(phi, y)
        else:
            w, w_phi = 1.0 + 0.0 * phi, 0.0 * phi
        c1 = w_phi[..., None] * S + w[..., None] * S_phi
        c2 = w[..., None] * S_th
        return np.stack([c1, c2], axis=-1)

    return h, J


def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


def smooth_step_prime(x):
    x = np.asarray(x, dtype=float)
    inside = (x > 0) & (x < 1)
    xs = np.where(inside, x, 0.5)
    a = np.exp(-1.0 / xs)
    b = np.exp(-1.0 / (1.0 - xs))
    da = a / xs**2
    db = -b / (1.0 - xs) ** 2
    d = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return np.where(inside, d, 0.0)


@dataclass(frozen=True)
class Bump:
    """Radial cutoff ``psi(s)``: 1 for ``s <= inner``, 0 for ``s >= outer``."""

    center: tuple[float, float]
    outer: float
    inner: float = 0.0

    def psi(self, s):
        return smooth_step((self.outer - np.asarray(s)) / (self.outer - self.inner))

    def dpsi(self, s):
        return -smooth_step_prime((self.outer - np.asarray(s)) / (self.outer - self.inner)) / (
            self.outer - self.inner)


def _local_bumps(osc: Oscillation, bumps: Sequence[Bump]):
    def _parts(p, eps):
        x = p[..., 0]
        H = np.zeros_like(x)
        grad = np.zeros(p.shape)
        for b in bumps:
            d = p - np.asarray(b.center)
            s = np.hypot(d[..., 0], d[..., 1])
            psi, dpsi = b.psi(s), b.dpsi(s)
            if eps > 0:
                y = s / eps
                H = H + eps * osc.f(s, y) * psi
                radial = (osc.d_y(s, y) + eps * osc.dt(s, y)) * psi + eps * osc.f(s, y) * dpsi
            else:
                radial = 0.0 * s
            with np.errstate(invalid="ignore", divide="ignore"):
                e_r = np.where(s[..., None] > 0, d / np.where(s > 0, s, 1.0)[..., None], 0.0)
            grad = grad + radial[..., None] * e_r
        return H, grad

    def h(p, eps):
        H, _ = _parts(p, eps)
        return np.stack([p[..., 0], p[..., 1], H], axis=-1)

    def J(p, eps):
        _, grad = _parts(p, eps)
        one, zero = np.ones(p.shape[:-1]), np.zeros(p.shape[:-1])
        c1 = np.stack([one, zero, grad[..., 0]], axis=-1)
        c2 = np.stack([zero, one, grad[..., 1]], axis=-1)
        return np.stack([c1, c2], axis=-1)

    return h, J


def default_bumps():
    return (Bump((0.3, 0.5), 0.18, 0.09), Bump((0.7, 0.5), 0.18, 0.09))


def check_bumps(bumps: Sequence[Bump]):
    for i, a in enumerate(bumps):
        if not (a.outer > a.inner >= 0):
            raise ConfigError(f"bump {i}: need outer > inner >= 0")
        for b in bumps[i + 1:]:
            dist = float(np.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]))
            if dist < a.outer + b.outer:
                raise ConfigError(
                    f"bump supports overlap: centers {a.center} and {b.center} are {dist:.4g} apart, "
                    f"radii sum {a.outer + b.outer:.4g}")


def scenario_domain(name: str, R: float = 1.0, inner_cutoff: float | None = None,
                    box: tuple = ((0.0, 1.0), (0.0, 1.0))) -> ParamDomain:
    two_pi = 2.0 * np.pi
    if name in ("star_graph", "radial_graph"):
        c = 0.05 * R if inner_cutoff is None else inner_cutoff
        return ParamDomain(("r", "theta"), (c, R), (0.0, two_pi), True, c)
    if name in ("sphere_longitude", "sphere_latitude"):
        c = 0.05 * np.pi if inner_cutoff is None else inner_cutoff
        return ParamDomain(("phi", "theta"), (c, np.pi - c), (0.0, two_pi), True, c)
    if name == "local_bumps":
        return ParamDomain(("x1", "x2"), tuple(box[0]), tuple(box[1]), False, 0.0)
    raise ConfigError(f"unknown scenario {name!r}; valid: {', '.join(SCENARIOS)}")


def builtin_scenario(name: str, eps: float = 0.125, oscillation: Oscillation | str = "sin2",
                     amplitude: float = 1.0, R: float = 1.0, inner_cutoff: float | None = None,
                     bumps: Sequence[Bump] | None = None, box=((0.0, 1.0), (0.0, 1.0))) -> Immersion:
    """Exact immersion of one of the worked examples, with analytic Jacobian."""
    osc = make_oscillation(oscillation, amplitude) if isinstance(oscillation, str) else oscillation
    domain = scenario_domain(name, R, inner_cutoff, box)
    params = {"R": R, "inner_cutoff": domain.inner_cutoff}
    if name == "star_graph":
        h, J = _star_graph(osc)
    elif name == "radial_graph":
        h, J = _radial_graph(osc)
    elif name == "sphere_longitude":
        h, J = _sphere_longitude(osc)
    elif name == "sphere_latitude":
        h, J = _sphere_latitude(osc)
    else:
        bumps = tuple(default_bumps() if bumps is None else bumps)
        check_bumps(bumps)
        params["bumps"] = bumps
        h, J = _local_bumps(osc, bumps)
    return Immersion(name, h, J, float(eps), domain, osc, bilipschitz=_bilip_guess(name, osc, domain),
                     params=params)


def _bilip_guess(name, osc, domain):
    # crude a priori band; singular values are re-checked by sampling in tests
    amp = float(np.max(np.abs(osc.d_y(1.0, np.linspace(0.0, osc.period, 257))))) if osc.name != "zero" else 0.0
    c = max(domain.inner_cutoff, 1e-3)
    if name in ("sphere_longitude", "sphere_latitude"):
        c = np.sin(c)
    return float(max(1.0 / c, 1.0) * (1.0 + amp) * 2.0)


def singular_values(imm: Immersion, p):
    return np.linalg.svd(imm.jacobian(p), compute_uv=False)
