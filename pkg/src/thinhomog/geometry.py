"""Thin-domain geometry: boundary profiles, the period-adapted partition of
(0,1), and per-position reference cells.

The domain family is ``{(x, y) : 0 < x < 1, 0 < y < eps * G(x, x/eps)}``
where ``G(x, .)`` is periodic with a position-dependent period ``l(x)``.
The partition collects every point where ``h(x) = x / l(x)`` crosses an
integer multiple of ``eps``; those breakpoints are the backbone of the
unfolding and averaging operators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import exprlang
from .exprlang import Expr


class ProfileError(ValueError):
    """Raised when a profile fails validation or a precondition."""


class PartitionError(RuntimeError):
    """Raised when partition construction cannot complete."""


@dataclass(frozen=True)
class ProfileSpec:
    """Boundary profile ``G(x, y)``, local period ``l(x)`` and declared bounds.

    ``G0 <= G <= G1`` must hold everywhere and ``l0 <= l(x) < l1`` on (0,1);
    both are checked on a sampling lattice by :func:`validate_profile`, not
    proven.  ``G`` must be continuously differentiable in both arguments
    (the cell problem needs the derivative of ``G`` in its second slot).
    """

    G: Expr
    l: Expr
    G0: float
    G1: float
    l0: float
    l1: float

    @staticmethod
    def from_strings(G: str, l: str, G0: float, G1: float, l0: float, l1: float) -> "ProfileSpec":
        return ProfileSpec(
            G=exprlang.parse(G, {"x", "y"}),
            l=exprlang.parse(l, {"x"}),
            G0=float(G0), G1=float(G1), l0=float(l0), l1=float(l1),
        )

    def G_at(self, x, y):
        """Profile height; broadcasts to the common shape of x and y."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(x.shape, y.shape)
        val = exprlang.evaluate(self.G, {"x": x, "y": y})
        out = np.broadcast_to(np.asarray(val, dtype=float), shape)
        return float(out) if out.ndim == 0 else out.copy()

    def l_at(self, x):
        x = np.asarray(x, dtype=float)
        val = exprlang.evaluate(self.l, {"x": x})
        out = np.broadcast_to(np.asarray(val, dtype=float), x.shape)
        return float(out) if out.ndim == 0 else out.copy()

    def h_at(self, x):
        """The partition driver ``h(x) = x / l(x)``."""
        return np.asarray(x, dtype=float) / self.l_at(x)

    @cached_property
    def dG_dy(self) -> Expr:
        return exprlang.diff(self.G, "y")

    @cached_property
    def dl_dx(self) -> Expr:
        return exprlang.diff(self.l, "x")

    def thin_height(self, eps: float, x):
        """Height ``eps * G(x, x/eps)`` of the thin domain above ``x``."""
        return eps * self.G_at(x, np.asarray(x) / eps)

    def validate(self, lattice_density: int = 128, tol: float = 1e-2) -> "ValidationReport":
        report = validate_profile(self, lattice_density, tol)
        report.raise_if_fatal()
        return report


@dataclass
class ValidationReport:
    fatal: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    metrics: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.fatal

    def raise_if_fatal(self):
        if self.fatal:
            raise ProfileError("; ".join(self.fatal))

    def lines(self) -> list[str]:
        out = [f"status: {'ok' if self.ok else 'FATAL'}"]
        out += [f"fatal: {m}" for m in self.fatal]
        out += [f"warning: {m}" for m in self.warnings]
        out += [f"{k}: {v!r}" for k, v in self.metrics.items()]
        return out


def validate_profile(spec: ProfileSpec, lattice_density: int = 128, tol: float = 1e-2) -> ValidationReport:
    """Check declared bounds, periodicity and the critical-set proxy on a lattice.

    The critical set ``A = {x : x l'(x) = l(x)}`` must have measure zero for
    the partition to behave; we report the fraction of lattice points with
    ``|x l'(x) - l(x)| < tol * l0`` and flag (not fail) when it exceeds 1%.
    """
    if lattice_density < 64:
        raise ValueError("lattice_density must be at least 64")
    rep = ValidationReport()
    D = int(lattice_density)
    xs = (np.arange(D) + 0.5) / D
    per_tol = 1e-10 * (1.0 + spec.G1)

    lv = np.asarray(spec.l_at(xs), dtype=float)
    if np.any(lv < spec.l0):
        rep.fatal.append(f"period drops below declared l0={spec.l0} (min {lv.min():.6g})")
    if np.any(lv >= spec.l1):
        # the strict bound l(x) < l1 is part of the hypothesis; equality counts
        rep.fatal.append(f"period reaches declared l1={spec.l1} (max {lv.max():.6g})")

    ys = (np.arange(D) + 0.5) / D  # fractions of one period
    X = np.repeat(xs, D)
    Y = (lv[:, None] * ys[None, :]).ravel()
    g = np.asarray(spec.G_at(X, Y), dtype=float)
    if np.any(g < spec.G0) or np.any(g > spec.G1):
        rep.fatal.append(
            f"profile leaves declared bounds [{spec.G0}, {spec.G1}] "
            f"(range [{g.min():.6g}, {g.max():.6g}])")

    g_shift = np.asarray(spec.G_at(X, Y + np.repeat(lv, D)), dtype=float)
    per_res = float(np.max(np.abs(g_shift - g)))
    rep.metrics["periodicity_residual"] = per_res
    if per_res > per_tol:
        rep.fatal.append(f"G is not l(x)-periodic (residual {per_res:.3g} > {per_tol:.3g})")

    # declared period must be the fundamental one: if G actually repeats on
    # l/2 or l/3 while varying in y, the declaration is too coarse
    varies = float(np.ptp(g.reshape(D, D), axis=1).max()) > 1e-8 * (1.0 + spec.G1)
    if varies and per_res <= per_tol:
        for d in (2, 3):
            sub = np.asarray(spec.G_at(X, Y + np.repeat(lv / d, D)), dtype=float)
            if float(np.max(np.abs(sub - g))) <= per_tol:
                rep.fatal.append(f"declared period is not fundamental (G repeats on l/{d})")
                break

    dl = np.broadcast_to(
        np.asarray(exprlang.evaluate(spec.dl_dx, {"x": xs}), dtype=float), xs.shape)
    near_critical = np.abs(xs * dl - lv) < tol * spec.l0
    frac = float(np.mean(near_critical))
    rep.metrics["critical_set_fraction"] = frac
    if frac > 0.01:
        rep.warnings.append(
            f"{100 * frac:.1f}% of lattice points sit near the critical set "
            "x l'(x) = l(x); partition quality may degrade")

    rep.metrics["lattice_density"] = float(D)
    rep.metrics["lattice_spacing"] = 1.0 / D
    return rep


# --- the l(x)-partition -----------------------------------------------------

@dataclass(frozen=True)
class Partition:
    """Ordered breakpoints ``0 = x_0 < ... < x_{N+1} = 1`` with per-interval data.

    Interior points solve ``h(x) = k * eps`` for integer levels k.  For each
    interval the stored stretch factor is
    ``gamma_k = (x_{k+1} - x_k) / l(x_k)``, so every x in the interval has a
    unique local coordinate ``y1 = (x - x_k) / gamma_k`` in ``[0, l(x_k))``.
    """

    eps: float
    points: np.ndarray          # shape (N+2,) including 0 and 1
    period_at_base: np.ndarray  # shape (N+1,), l(x_k) per interval
    gamma: np.ndarray           # shape (N+1,)
    levels: np.ndarray          # shape (N+2,), h(x_k)/eps rounded; -1 for x=1 if off-level

    @property
    def n_intervals(self) -> int:
        return len(self.points) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.points)

    def locate(self, x: float) -> tuple[int, float, float, float]:
        """Interval index, base point, stretch factor and local coordinate of x."""
        k, base, gam, y1 = self.locate_many(np.asarray([x], dtype=float))
        return int(k[0]), float(base[0]), float(gam[0]), float(y1[0])

    def locate_many(self, x: np.ndarray):
        """Vectorized :meth:`locate`; x must lie in [0, 1)."""
        k = np.clip(np.searchsorted(self.points, x, side="right") - 1, 0, self.n_intervals - 1)
        base = self.points[k]
        gam = self.gamma[k]
        return k, base, gam, (x - base) / gam

    def check(self, h):
        """Verify the construction invariants; ``h`` maps x to x/l(x)."""
        pts = self.points
        if pts[0] != 0.0 or pts[-1] != 1.0:
            raise PartitionError("endpoints 0 and 1 must be partition points")
        if np.any(np.diff(pts) <= 0):
            raise PartitionError("partition points must be strictly increasing")
        interior = pts[1:-1]
        if interior.size:
            lv = np.asarray(h(interior), dtype=float) / self.eps
            if np.max(np.abs(lv - np.round(lv))) > 1e-10:
                raise PartitionError("interior points are not on integer levels of h/eps")
            dlv = np.abs(np.diff(np.round(lv)))
            if np.any((dlv != 0) & (dlv != 1)):
                raise PartitionError("consecutive interior levels must differ by 0 or 1")

    def rows(self):
        """CSV rows (k, x_k, l_xk, gamma_k); the last point has no interval data."""
        out = []
        for k in range(self.n_intervals):
            out.append((k, self.points[k], self.period_at_base[k], self.gamma[k]))
        out.append((self.n_intervals, self.points[-1], float("nan"), float("nan")))
        return out


def build_partition(spec: ProfileSpec, eps: float, max_roots: int = 100_000) -> Partition:
    """Construct the l(x)-partition for a given eps.

    Every solution in (0,1) of ``h(x) = k*eps`` (k = 1..M, ``M*eps`` below the
    maximum of h) is found by a uniform bracketing scan with step
    ``eps*l0/16`` followed by bisection; tangential duplicates within 1e-10
    are merged.  Endpoints 0 and 1 are always included.
    """
    if not (0.0 < eps <= 0.25):
        raise ValueError(f"eps must lie in (0, 1/4], got {eps}")

    def h(x):
        return np.asarray(x, dtype=float) / np.asarray(spec.l_at(x), dtype=float)

    step = eps * spec.l0 / 16.0
    n_scan = int(math.ceil(1.0 / step)) + 1
    grid = np.linspace(0.0, 1.0, n_scan)
    hg = h(grid)
    h_max = float(hg.max())
    m_levels = int(math.floor(h_max / eps + 1e-12))

    roots: list[tuple[float, int]] = []
    # levels crossed inside each scan interval; h moves by < eps per step so
    # at most one level per interval in practice, but the loop tolerates more
    lo = np.minimum(hg[:-1], hg[1:]) / eps
    hi = np.maximum(hg[:-1], hg[1:]) / eps
    k_lo = np.ceil(lo - 1e-12).astype(int)
    k_hi = np.floor(hi + 1e-12).astype(int)
    hits = np.nonzero(k_hi >= np.maximum(k_lo, 1))[0]
    for i in hits:
        for k in range(max(k_lo[i], 1), min(k_hi[i], m_levels) + 1):
            target = k * eps
            a, b = float(grid[i]), float(grid[i + 1])
            fa = float(hg[i]) - target
            fb = float(hg[i + 1]) - target
            if fa == 0.0:
                roots.append((a, k))
                continue
            if fb == 0.0:
                if i == len(grid) - 2:  # right endpoint handled separately
                    continue
                roots.append((b, k))
                continue
            if fa * fb > 0.0:
                continue
            while b - a > 4e-15:
                mid = 0.5 * (a + b)
                fm = float(h(mid)) - target
                if fm == 0.0:
                    a = b = mid
                    break
                if fa * fm < 0.0:
                    b = mid
                else:
                    a, fa = mid, fm
            roots.append((0.5 * (a + b), k))
            if len(roots) > max_roots:
                raise PartitionError(
                    f"more than {max_roots} level crossings; period function "
                    "looks pathological at this scan resolution")

    roots.sort()
    merged: list[tuple[float, int]] = []
    for x, k in roots:
        if 0.0 < x < 1.0 and (not merged or x - merged[-1][0] > 1e-10):
            merged.append((x, k))

    points = np.array([0.0] + [x for x, _ in merged] + [1.0])
    levels = np.array([0] + [k for _, k in merged] + [-1])
    h1 = float(h(1.0)) / eps
    if abs(h1 - round(h1)) <= 1e-10:
        levels[-1] = int(round(h1))

    base = points[:-1]
    period = np.asarray(spec.l_at(base), dtype=float)
    gamma = np.diff(points) / period
    part = Partition(eps=eps, points=points, period_at_base=period, gamma=gamma, levels=levels)
    part.check(h)
    return part


# --- reference cells ---------------------------------------------------------

@dataclass(frozen=True)
class CellGeometry:
    """One period of the boundary profile at a fixed slow position.

    The cell is ``{(y1, y2) : 0 < y1 < period, 0 < y2 < height(y1)}``; the
    profile closes periodically, ``height(0) == height(period)``.
    """

    spec: ProfileSpec
    anchor_x: float
    period: float

    def height(self, y1):
        return self.spec.G_at(self.anchor_x, y1)

    def height_slope(self, y1):
        return exprlang.evaluate(self.spec.dG_dy, {"x": self.anchor_x, "y": y1})

    def area(self, n_quad: int = 4096) -> float:
        """Midpoint-rule area under one period of the profile."""
        y = (np.arange(n_quad) + 0.5) * self.period / n_quad
        return float(np.mean(self.height(y)) * self.period)


def cell_at(spec: ProfileSpec, x: float) -> CellGeometry:
    """The reference cell at slow position ``x`` in (0,1)."""
    if not (0.0 < x < 1.0):
        raise ValueError(f"cell anchor must lie in (0,1), got {x}")
    period = float(spec.l_at(x))
    if not (spec.l0 <= period < spec.l1):
        raise ProfileError(f"period {period} at x={x} violates declared bounds")
    cell = CellGeometry(spec=spec, anchor_x=float(x), period=period)
    closure = abs(float(cell.height(0.0)) - float(cell.height(period)))
    if closure > 1e-10 * (1.0 + spec.G1):
        raise ProfileError(f"profile does not close over one period at x={x}")
    return cell
