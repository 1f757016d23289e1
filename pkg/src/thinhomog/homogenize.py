"""Effective coefficients across the slow variable and the limit solve.

For each anchor position the cell problem yields the effective diffusion
coefficient r and the cell area p; together with the local period l and the
averaged forcing ``f0 = (p/l) f`` they parameterize the one-dimensional
limit equation ``-(r u')' + (p/l) u = f0`` with natural boundary
conditions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import exprlang, fem
from .geometry import ProfileSpec
from .parallel import parallel_map

log = logging.getLogger(__name__)


@dataclass
class EffectiveTable:
    """Sampled effective data on midpoint anchors, with the cell solutions kept.

    Rows satisfy ``0 < r <= p / l``; between anchors all four quantities
    interpolate linearly, with constant extrapolation beyond the ends.
    """

    anchors: np.ndarray
    r: np.ndarray
    p: np.ndarray
    l: np.ndarray
    f0: np.ndarray
    cells: list | None = None

    def __post_init__(self):
        if np.any(np.diff(self.anchors) <= 0):
            raise ValueError("anchors must be strictly increasing")
        if np.any(self.r <= 0):
            raise ValueError("effective coefficients must be positive")
        if np.any(self.r > self.p / self.l + 1e-12):
            raise ValueError("effective coefficient exceeds p/l")

    def interp(self, x):
        x = np.asarray(x, dtype=float)
        r = np.interp(x, self.anchors, self.r)
        p = np.interp(x, self.anchors, self.p)
        l = np.interp(x, self.anchors, self.l)
        f0 = np.interp(x, self.anchors, self.f0)
        return r, p, l, f0

    def rows(self):
        return zip(self.anchors, self.r, self.p, self.l, self.f0)


def compute_effective(spec: ProfileSpec, f: exprlang.Expr, M: int = 32,
                      n1: int = 64, n2: int = 64, cg_tol: float = 1e-10,
                      cg_maxiter: int | None = None, threads: int = 1) -> EffectiveTable:
    """Solve the cell problem on M midpoint anchors and tabulate (r, p, l, f0)."""
    if M < 8:
        raise ValueError("at least 8 anchors are required")
    anchors = (np.arange(M) + 0.5) / M

    def one(j: int):
        x = anchors[j]
        try:
            return fem.solve_cell(spec, x, n1, n2, tol=cg_tol, maxiter=cg_maxiter)
        except fem.SolverError as exc:
            raise fem.SolverError(f"cell solve failed at anchor x={x}: {exc}") from exc

    cells = parallel_map(one, range(M), threads)
    r = np.array([c.r for c in cells])
    p = np.array([c.p for c in cells])
    lv = np.array([c.l for c in cells])
    fv = np.asarray(exprlang.evaluate(f, {"x": anchors}), dtype=float)
    fv = np.broadcast_to(fv, anchors.shape)
    table = EffectiveTable(anchors=anchors, r=r, p=p, l=lv, f0=(p / lv) * fv, cells=cells)
    log.info("effective table over %d anchors: r in [%.6g, %.6g]", M, r.min(), r.max())
    return table


def eval_effective(table: EffectiveTable, x):
    """Interpolated (r, p, l, f0) at position x."""
    return table.interp(x)


def run_pipeline(spec: ProfileSpec, f: exprlang.Expr, M: int = 32, n1: int = 64,
                 n2: int = 64, n_1d: int = 512, cg_tol: float = 1e-10,
                 cg_maxiter: int | None = None, threads: int = 1):
    """Effective table plus the homogenized 1D solution (with per-element slope)."""
    table = compute_effective(spec, f, M=M, n1=n1, n2=n2, cg_tol=cg_tol,
                              cg_maxiter=cg_maxiter, threads=threads)
    solution = fem.solve_homog_1d(table, n_1d, tol=cg_tol, maxiter=cg_maxiter)
    return table, solution
