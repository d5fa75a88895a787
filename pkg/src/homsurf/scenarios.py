"""Homogenized limits of the built-in surface families.

For each family this bundles the density profile, the closed-form limit
coefficient in the chart, the leading-order cell coefficient used by the
cell-problem route, and the embedding family of the limit surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import CoefficientField, Immersion, builtin_scenario
from .homogenize import CellCache, PeriodicCoefficient, Profile
from .limit_surface import GRAPH_KIND, HEIGHT_KIND, PROFILE_KIND, LimitMetric, embed_revolution, limit_metric

_AXIS = {"star_graph": 1, "sphere_longitude": 1, "radial_graph": 0, "sphere_latitude": 0}


def _diag(a, b):
    out = np.zeros(np.shape(a) + (2, 2))
    out[..., 0, 0] = a
    out[..., 1, 1] = b
    return out


def _bump_frame(p, center):
    d = p - np.asarray(center)
    s = np.hypot(d[..., 0], d[..., 1])
    safe = np.where(s > 0, s, 1.0)
    e_r = np.where(s[..., None] > 0, d / safe[..., None], np.array([1.0, 0.0]))
    e_t = np.stack([-e_r[..., 1], e_r[..., 0]], axis=-1)
    return s, e_r, e_t


@dataclass
class ScenarioLimit:
    """Homogenized data of one surface family (independent of eps)."""

    name: str
    family: Immersion
    profiles: list
    kind: str
    cell_n: tuple | None = None
    _caches: dict = field(default_factory=dict, repr=False)

    @property
    def domain(self):
        return self.family.domain

    @property
    def profile(self):
        return self.profiles[0]

    def immersion(self, eps: float) -> Immersion:
        return self.family.with_eps(eps)

    # -- closed-form route ---------------------------------------------------

    def rho0(self, p):
        p = np.asarray(p, dtype=float)
        if self.name == "local_bumps":
            out = np.ones(p.shape[:-1])
            for prof in self.profiles:
                s, _, _ = _bump_frame(p, prof.bump.center)
                inside = s < prof.bump.outer
                out = np.where(inside, prof.per_length(np.minimum(s, prof.bump.outer)), out)
            return out
        return self.profile(p[..., 0])

    def L0(self, p):
        """Homogenized coefficient in the chart (the limit's ``A_0``)."""
        p = np.asarray(p, dtype=float)
        t = p[..., 0]
        if self.name in ("star_graph", "sphere_longitude"):
            r0 = self.profile(t)
            return _diag(r0, 1.0 / r0)
        if self.name in ("radial_graph", "sphere_latitude"):
            s2 = t**2 if self.name == "radial_graph" else np.sin(t) ** 2
            r0 = self.profile(t)
            return _diag(s2 / r0, r0 / s2)
        out = np.broadcast_to(np.eye(2), p.shape[:-1] + (2, 2)).copy()
        for prof in self.profiles:
            s, e_r, e_t = _bump_frame(p, prof.bump.center)
            inside = s < prof.bump.outer
            q = prof.per_length(np.minimum(s, prof.bump.outer))
            A = ((1.0 / q)[..., None, None] * np.einsum("...i,...j->...ij", e_r, e_r)
                 + q[..., None, None] * np.einsum("...i,...j->...ij", e_t, e_t))
            out = np.where(inside[..., None, None], A, out)
        return out

    def g_hat(self, p):
        """Limit metric ``rho0 L0^-1`` in closed form."""
        p = np.asarray(p, dtype=float)
        t = p[..., 0]
        if self.name in ("star_graph", "sphere_longitude"):
            return _diag(np.ones_like(t), self.profile(t) ** 2)
        if self.name in ("radial_graph", "sphere_latitude"):
            s2 = t**2 if self.name == "radial_graph" else np.sin(t) ** 2
            return _diag(self.profile(t) ** 2 / s2, s2)
        L = self.L0(p)
        return self.rho0(p)[..., None, None] * np.linalg.inv(L)

    def limit_field(self) -> CoefficientField:
        return CoefficientField(A=self.L0, rho=self.rho0, name=f"{self.name}[hom]")

    def metric(self, n: int = 64) -> LimitMetric:
        return limit_metric(self.rho0, self.L0, self.domain, n)

    def embedding(self, tol: float = 1e-10):
        prof = self.profiles if self.kind == GRAPH_KIND else self.profile
        return embed_revolution(prof, self.kind, self.domain, tol)

    # -- cell-problem route --------------------------------------------------

    def cell_coefficient(self, t, bump_index=0):
        """Leading-order cell coefficient at slow coordinate ``t``.

        For ``local_bumps`` ``t`` is the distance to the bump centre and the
        coefficient is written in the local (radial, angular) frame.
        """
        osc = self.family.oscillation
        T = osc.period
        fy = osc.d_y
        name = self.name
        if name == "local_bumps":
            psi = float(self.profiles[bump_index].bump.psi(t))

            def rho_c(y):
                return np.sqrt(1.0 + (fy(t, T * y[..., 0]) * psi) ** 2)

            def A(x, y):
                r = rho_c(y)
                return _diag(1.0 / r, r)

            return PeriodicCoefficient(2, A, laminate_axis=0, rho_cell=rho_c)
        axis = _AXIS[name]
        if name in ("star_graph", "sphere_longitude"):
            base = t**2 if name == "star_graph" else np.sin(t) ** 2

            def rho_c(y):
                return np.sqrt(base + fy(t, T * y[..., axis]) ** 2)

            def A(x, y):
                r = rho_c(y)
                return _diag(r, 1.0 / r)
        else:
            s2 = t**2 if name == "radial_graph" else np.sin(t) ** 2

            def rho_c(y):
                return np.sqrt(s2 * (1.0 + fy(t, T * y[..., axis]) ** 2))

            def A(x, y):
                r = rho_c(y)
                return _diag(r / (1.0 + fy(t, T * y[..., axis]) ** 2), r / s2)

        return PeriodicCoefficient(2, A, laminate_axis=axis, rho_cell=rho_c)

    def _default_cell_n(self, n=1024):
        # elongated grid: fine only across the laminate layers
        axis = _AXIS.get(self.name, 0)
        return (n, 4) if axis == 0 else (4, n)

    def cell_field(self, n_cell=None, solver="direct", digits=12) -> CoefficientField:
        """Limit coefficient from cell solves, memoised on the slow coordinate."""
        if n_cell is None:
            n_cell = self.cell_n or self._default_cell_n()
        key = (tuple(np.atleast_1d(n_cell)), solver)
        if key not in self._caches:
            self._caches[key] = [CellCache(lambda t, k=k: self.cell_coefficient(t, k), n_cell, solver, digits)
                                 for k in range(len(self.profiles))]
        caches = self._caches[key]
        n_mid = max(np.atleast_1d(n_cell))

        def cell_mean_rho(t, k=0):
            pc = self.cell_coefficient(t, k)
            ax = pc.laminate_axis
            y = np.zeros((n_mid, 2))
            y[:, ax] = (np.arange(n_mid) + 0.5) / n_mid
            return float(np.mean(pc.rho_cell(y)))

        def A(p):
            p = np.asarray(p, dtype=float)
            flat = p.reshape(-1, 2)
            out = np.empty((flat.shape[0], 2, 2))
            if self.name != "local_bumps":
                ts = np.round(flat[:, 0], digits)
                uniq, inv = np.unique(ts, return_inverse=True)
                H = np.array([caches[0](t) for t in uniq])
                out[:] = H[inv]
                return out.reshape(p.shape[:-1] + (2, 2))
            out[:] = np.eye(2)
            for k, prof in enumerate(self.profiles):
                s, e_r, e_t = _bump_frame(flat, prof.bump.center)
                inside = s < prof.bump.outer
                if not inside.any():
                    continue
                ss = np.round(s[inside], digits)
                uniq, inv = np.unique(ss, return_inverse=True)
                H = np.array([caches[k](t) for t in uniq])[inv]
                R = np.stack([e_r[inside], e_t[inside]], axis=-1)
                out[inside] = R @ H @ np.swapaxes(R, -1, -2)
            return out.reshape(p.shape[:-1] + (2, 2))

        def rho(p):
            p = np.asarray(p, dtype=float)
            flat = p.reshape(-1, 2)
            if self.name != "local_bumps":
                ts = np.round(flat[:, 0], digits)
                uniq, inv = np.unique(ts, return_inverse=True)
                vals = np.array([cell_mean_rho(t) for t in uniq])[inv]
                return vals.reshape(p.shape[:-1])
            out = np.ones(flat.shape[0])
            for k, prof in enumerate(self.profiles):
                s, _, _ = _bump_frame(flat, prof.bump.center)
                inside = s < prof.bump.outer
                if inside.any():
                    ss = np.round(s[inside], digits)
                    uniq, inv = np.unique(ss, return_inverse=True)
                    out[inside] = np.array([cell_mean_rho(t, k) for t in uniq])[inv]
            return out.reshape(p.shape[:-1])

        return CoefficientField(A=A, rho=rho, name=f"{self.name}[cell]")


def scenario_limit(name: str, oscillation="sin2", amplitude=1.0, R=1.0, inner_cutoff=None,
                   bumps=None, box=((0.0, 1.0), (0.0, 1.0)), eps=0.125) -> ScenarioLimit:
    family = builtin_scenario(name, eps=eps, oscillation=oscillation, amplitude=amplitude, R=R,
                              inner_cutoff=inner_cutoff, bumps=bumps, box=box)
    osc = family.oscillation
    dom = family.domain
    if name == "local_bumps":
        profiles = [Profile(name, osc, 0.0, b.outer, bump=b) for b in family.params["bumps"]]
        kind = GRAPH_KIND
    elif name in ("star_graph", "sphere_longitude", "radial_graph", "sphere_latitude"):
        profiles = [Profile(name, osc, dom.range_1[0], dom.range_1[1])]
        kind = PROFILE_KIND if name in ("star_graph", "sphere_longitude") else HEIGHT_KIND
    else:
        raise ConfigError(f"unknown scenario {name!r}")
    return ScenarioLimit(name, family, profiles, kind)
