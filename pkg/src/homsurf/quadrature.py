"""Adaptive Simpson quadrature and Chebyshev interpolation helpers."""

from __future__ import annotations

import numpy as np

from .errors import QuadratureError

DEFAULT_TOL = 1e-10
MAX_SUBDIVISIONS = 2**20


def _nudged_eval(f, x, lo, hi):
    # one-sided limits at piece ends, so jump samplers never see the wrong side
    span = hi - lo
    x = np.asarray(x, dtype=float).copy()
    x[x <= lo] = lo + 1e-15 * span
    x[x >= hi] = hi - 1e-15 * span
    return np.asarray(f(x), dtype=float)


def _simpson_piece(f, a, b, tol, max_sub):
    lo = np.array([a])
    hi = np.array([b])
    flo = _nudged_eval(f, lo, a, b)
    fhi = _nudged_eval(f, hi, a, b)
    fmid = _nudged_eval(f, 0.5 * (lo + hi), a, b)
    whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)
    total = 0.0
    n_used = 1
    width = b - a
    while lo.size:
        mid = 0.5 * (lo + hi)
        lq = 0.5 * (lo + mid)
        rq = 0.5 * (mid + hi)
        flq = _nudged_eval(f, lq, a, b)
        frq = _nudged_eval(f, rq, a, b)
        left = (mid - lo) / 6.0 * (flo + 4.0 * flq + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * frq + fhi)
        err = (left + right - whole) / 15.0
        done = np.abs(err) <= tol * (hi - lo) / width
        # floor on interval width: stop refining intervals that are already tiny
        done |= (hi - lo) <= width * 2.0**-40
        total += float(np.sum((left + right + err)[done]))
        keep = ~done
        n_used += int(np.count_nonzero(keep))
        if n_used > max_sub:
            raise QuadratureError(
                f"adaptive Simpson exceeded {max_sub} subdivisions on [{a}, {b}]")
        lo, mid, hi = lo[keep], mid[keep], hi[keep]
        flo, fmid, fhi = flo[keep], fmid[keep], fhi[keep]
        flq, frq = flq[keep], frq[keep]
        left, right = left[keep], right[keep]
        lo = np.concatenate([lo, mid])
        hi = np.concatenate([mid, hi])
        whole = np.concatenate([left, right])
        flo, fhi, fmid = (np.concatenate([flo, fmid]),
                          np.concatenate([fmid, fhi]),
                          np.concatenate([flq, frq]))
    return total


def adaptive_simpson(f, a, b, tol=DEFAULT_TOL, breaks=None, max_sub=MAX_SUBDIVISIONS):
    """Integrate a vectorised scalar function over [a, b].

    Intervals are bisected breadth-first until the Richardson error estimate
    of each piece drops below its share of ``tol``. ``breaks`` (or a
    ``breaks`` attribute on ``f``) lists interior discontinuities; the
    integral is split there and the integrand is evaluated only from inside
    each piece.
    """
    if b < a:
        return -adaptive_simpson(f, b, a, tol, breaks, max_sub)
    if b == a:
        return 0.0
    if breaks is None:
        breaks = getattr(f, "breaks", ())
    pts = sorted({a, b, *[float(x) for x in breaks if a < x < b]})
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        total += _simpson_piece(f, lo, hi, tol * (hi - lo) / (b - a), max_sub)
    return total


def periodic_breaks(breaks, period, a, b):
    """Translate breakpoints of a ``period``-periodic function into [a, b]."""
    out = []
    for x0 in breaks:
        k0 = int(np.floor((a - x0) / period))
        k1 = int(np.ceil((b - x0) / period))
        out.extend(x0 + k * period for k in range(k0, k1 + 1) if a < x0 + k * period < b)
    return sorted(out)


def chebyshev_nodes(n, a, b):
    """Chebyshev points of the second kind on [a, b], ascending (n + 1 points)."""
    k = np.arange(n + 1)
    x = -np.cos(np.pi * k / n)
    return 0.5 * (a + b) + 0.5 * (b - a) * x


class ChebyshevInterpolant:
    """Barycentric interpolant through values at second-kind Chebyshev points."""

    def __init__(self, values, a, b):
        self.values = np.asarray(values, dtype=float)
        self.n = self.values.size - 1
        self.a, self.b = float(a), float(b)
        self.nodes = chebyshev_nodes(self.n, a, b)
        w = np.ones(self.n + 1)
        w[1::2] = -1.0
        w[0] *= 0.5
        w[-1] *= 0.5
        self.weights = w

    @classmethod
    def from_function(cls, func, a, b, n):
        nodes = chebyshev_nodes(n, a, b)
        return cls([func(x) for x in nodes], a, b)

    @classmethod
    def adaptive(cls, func, a, b, tol=1e-11, n0=16, n_max=1024):
        """Double the node count until successive interpolants agree to ``tol``.

        Second-kind nodes nest under doubling, so previous samples are reused.
        """
        n = n0
        nodes = chebyshev_nodes(n, a, b)
        vals = np.array([func(x) for x in nodes])
        prev = cls(vals, a, b)
        while True:
            n2 = 2 * n
            nodes2 = chebyshev_nodes(n2, a, b)
            vals2 = np.empty(n2 + 1)
            vals2[::2] = vals
            vals2[1::2] = [func(x) for x in nodes2[1::2]]
            cur = cls(vals2, a, b)
            # new odd nodes are exactly where the old interpolant is untested
            diff = np.max(np.abs(prev(nodes2[1::2]) - vals2[1::2]))
            scale = max(1.0, float(np.max(np.abs(vals2))))
            if diff <= tol * scale or n2 >= n_max:
                return cur
            n, vals, prev = n2, vals2, cur

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        out = np.empty(flat.size)
        # chunked so the (points x nodes) work array stays small
        step = max(1, 2**22 // (self.n + 1))
        for s in range(0, flat.size, step):
            out[s:s + step] = self._eval(flat[s:s + step])
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def _eval(self, flat):
        diff = flat[:, None] - self.nodes[None, :]
        # treat near-coincident arguments as node hits (avoids inf/inf)
        exact = np.abs(diff) <= 1e-15 * (self.b - self.a)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            c = self.weights[None, :] / diff
            out = (c @ self.values) / c.sum(axis=1)
        hit = exact.any(axis=1)
        if hit.any():
            out[hit] = self.values[np.argmax(exact[hit], axis=1)]
        return out
