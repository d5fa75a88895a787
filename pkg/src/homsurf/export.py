"""File artifacts: convergence CSV, a log-log SVG plot and OBJ surface meshes.

The SVG is written by hand (polylines and text) so the package needs no
plotting library.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .convergence import ConvergenceTable
from .geometry import Immersion
from .limit_surface import surface_mesh, write_obj

__all__ = ["write_csv", "convergence_svg", "write_svg", "write_surface", "surface_mesh", "write_obj"]

# colour-blind safe cycle
PALETTE = ("#0072b2", "#d55e00", "#009e73", "#cc79a7", "#e69f00", "#56b4e9", "#f0e442", "#000000")


def write_csv(table: ConvergenceTable, path) -> Path:
    path = Path(path)
    path.write_text(table.to_csv())
    return path


def _log_ticks(lo, hi):
    """Decade ticks covering ``[lo, hi]`` (at least two)."""
    a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    if a == b:
        b += 1
    return [10.0**e for e in range(a, b + 1)]


def convergence_svg(table: ConvergenceTable, width: int = 640, height: int = 420, title: str | None = None) -> str:
    """Relative eigenvalue error against eps on log-log axes, one line per k.

    Non-finite or zero errors are dropped from their line (log axes cannot
    show them).
    """
    eps = np.asarray(table.eps, dtype=float)
    rel = np.asarray(table.rel_err, dtype=float)
    ok = np.isfinite(rel) & (rel > 0)
    left, right, top, bottom = 70, 120, 40, 50
    pw, ph = width - left - right, height - top - bottom

    xt = _log_ticks(eps.min(), eps.max()) if eps.size else [0.1, 1.0]
    yv = rel[ok]
    yt = _log_ticks(yv.min(), yv.max()) if yv.size else [1e-3, 1.0]
    lx0, lx1 = math.log10(xt[0]), math.log10(xt[-1])
    ly0, ly1 = math.log10(yt[0]), math.log10(yt[-1])

    def X(v):
        return left + (math.log10(v) - lx0) / (lx1 - lx0) * pw

    def Y(v):
        return top + ph - (math.log10(v) - ly0) / (ly1 - ly0) * ph

    title = title or f"{table.scenario}: relative eigenvalue error"
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + pw / 2:.1f}" y="{top / 2 + 5:.1f}" text-anchor="middle" font-size="14">'
        f"{escape(title)}</text>",
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v in xt:
        x = X(v)
        out.append(f'<line x1="{x:.1f}" y1="{top}" x2="{x:.1f}" y2="{top + ph}" stroke="#dddddd"/>')
        out.append(f'<text x="{x:.1f}" y="{top + ph + 16}" text-anchor="middle">{v:g}</text>')
    for v in yt:
        y = Y(v)
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + pw}" y2="{y:.1f}" stroke="#dddddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{v:.0e}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">eps</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">relative error</text>')

    for k in range(rel.shape[1] if rel.ndim == 2 else 0):
        colour = PALETTE[k % len(PALETTE)]
        pts = [(X(e), Y(r)) for e, r, good in zip(eps, rel[:, k], ok[:, k]) if good]
        if pts:
            coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
            for x, y in pts:
                out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{colour}"/>')
        ly = top + 10 + 18 * k
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 36}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="1.5"/>')
        out.append(f'<text x="{left + pw + 42}" y="{ly + 4}">k = {k + 1}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(table: ConvergenceTable, path, **kw) -> Path:
    path = Path(path)
    path.write_text(convergence_svg(table, **kw))
    return path


def write_surface(imm: Immersion, path, n1: int = 48, n2: int = 96, name: str | None = None) -> Path:
    V, F = surface_mesh(imm, n1, n2)
    if not np.all(np.isfinite(V)):
        raise ValueError(f"surface {imm.name} has non-finite vertices")
    return write_obj(path, V, F, name or imm.name)
