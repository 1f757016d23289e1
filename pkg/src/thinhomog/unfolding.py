"""Discrete unfolding and averaging operators over sampled thin fields.

The unfolding operator turns a function on the thin domain into a function
of a slow variable x and cell variables (y1, y2) in the bounding rectangle
(0, l1) x (0, G1), by composing with the affine map
``x -> base + gamma * y1`` attached to the partition interval containing x
and rescaling the vertical coordinate by eps.  The averaging operator is
its formal adjoint (and left inverse); both are realized here on sampled
fields together with the integral, norm and support diagnostics that make
the operator identities checkable numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import exprlang
from .geometry import Partition, ProfileSpec


class ThinField:
    """A sampler on the thin domain, extended by zero outside it.

    Backed either by a closed-form expression or by P1 interpolation of a
    finite-element solution.  ``value`` applies the zero extension; columns
    of the raw sampler are exposed separately so bulk consumers can mask
    once instead of re-evaluating the boundary profile.
    """

    def __init__(self, spec: ProfileSpec, eps: float, value_fn, grad_fn=None,
                 mesh=None, nodal=None):
        self.spec = spec
        self.eps = float(eps)
        self._value_fn = value_fn
        self._grad_fn = grad_fn
        self.mesh = mesh
        self.nodal = nodal

    @classmethod
    def from_expression(cls, spec: ProfileSpec, eps: float, ast) -> "ThinField":
        def value_fn(x, y):
            return np.broadcast_to(
                np.asarray(exprlang.evaluate(ast, {"x": x, "y": y}), dtype=float),
                np.broadcast_shapes(np.shape(x), np.shape(y))).copy()

        dx_ast = exprlang.diff(ast, "x")
        dy_ast = exprlang.diff(ast, "y")

        def grad_fn(x, y):
            shape = np.broadcast_shapes(np.shape(x), np.shape(y))
            gx = np.broadcast_to(np.asarray(
                exprlang.evaluate(dx_ast, {"x": x, "y": y}), dtype=float), shape)
            gy = np.broadcast_to(np.asarray(
                exprlang.evaluate(dy_ast, {"x": x, "y": y}), dtype=float), shape)
            return gx.copy(), gy.copy()

        return cls(spec, eps, value_fn, grad_fn)

    @classmethod
    def from_callable(cls, spec: ProfileSpec, eps: float, fn, grad=None) -> "ThinField":
        return cls(spec, eps, fn, grad)

    @classmethod
    def from_fem(cls, spec: ProfileSpec, eps: float, mesh, nodal) -> "ThinField":
        from .mesh import structured_interp

        def value_fn(x, y):
            return structured_interp(mesh, nodal, x, y)

        def grad_fn(x, y):
            _, gx, gy = structured_interp(mesh, nodal, x, y, want_grad=True)
            return gx, gy

        return cls(spec, eps, value_fn, grad_fn, mesh=mesh, nodal=nodal)

    def inside(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (x > 0.0) & (x < 1.0) & (y > 0.0) & (y < self.spec.thin_height(self.eps, x))

    def value(self, x, y):
        raw = self._value_fn(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return np.where(self.inside(x, y), raw, 0.0)

    def value_raw(self, x, y):
        return self._value_fn(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def gradient(self, x, y):
        if self._grad_fn is None:
            raise ValueError("this thin field carries no gradient sampler")
        gx, gy = self._grad_fn(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        keep = self.inside(x, y)
        return np.where(keep, gx, 0.0), np.where(keep, gy, 0.0)

    def gradient_raw(self, x, y):
        if self._grad_fn is None:
            raise ValueError("this thin field carries no gradient sampler")
        return self._grad_fn(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


@dataclass
class UnfoldedField:
    """Samples of an unfolded field on a cell-centered lattice.

    The lattice covers (0,1) x (0,l1) x (0,G1); ``mask`` marks the support
    (the eps-dependent set where the unfolding composition lands inside the
    thin domain) and values vanish off the mask.  ``source`` keeps the exact
    unfolded function when one is available, so operator compositions do not
    pay a reconstruction error.
    """

    x: np.ndarray        # (Nx,) slab centers
    y1: np.ndarray       # (N1,)
    y2: np.ndarray       # (N2,)
    values: np.ndarray   # (Nx, N1, N2)
    mask: np.ndarray     # (Nx, N1, N2) bool
    eps: float
    l1: float
    G1: float
    slab_period: np.ndarray  # (Nx,) l at the slab's partition base
    source: object = dataclass_field(default=None, repr=False)

    @property
    def cell_volume(self) -> float:
        return (1.0 / len(self.x)) * (self.l1 / len(self.y1)) * (self.G1 / len(self.y2))

    def sample_nearest(self, x, y1, y2):
        ix = np.clip((np.asarray(x) * len(self.x)).astype(np.int64), 0, len(self.x) - 1)
        i1 = np.clip((np.asarray(y1) / self.l1 * len(self.y1)).astype(np.int64),
                     0, len(self.y1) - 1)
        i2 = np.clip((np.asarray(y2) / self.G1 * len(self.y2)).astype(np.int64),
                     0, len(self.y2) - 1)
        return self.values[ix, i1, i2]

    def as_function(self):
        return self.source if self.source is not None else self.sample_nearest

    def rows(self):
        """Flat (x, y1, y2, mask, value) tuples for CSV export."""
        gx, g1, g2 = np.meshgrid(self.x, self.y1, self.y2, indexing="ij")
        return zip(gx.ravel(), g1.ravel(), g2.ravel(),
                   self.mask.ravel().astype(int), self.values.ravel())


def unfolded_function(field: ThinField, partition: Partition):
    """The exact unfolded image of ``field`` as a callable on (0,1) x Y*."""
    def fn(x, y1, y2):
        x = np.asarray(x, dtype=float)
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        shape = np.broadcast_shapes(x.shape, y1.shape, y2.shape)
        xb = np.broadcast_to(x, shape).ravel()
        y1b = np.broadcast_to(y1, shape).ravel()
        y2b = np.broadcast_to(y2, shape).ravel()
        k, base, gamma, _ = partition.locate_many(xb)
        period = partition.period_at_base[k]
        mapped = base + gamma * y1b
        vals = field.value(mapped, field.eps * y2b)
        vals = np.where(y1b < period, vals, 0.0)
        return vals.reshape(shape)

    return fn


def _lattice(partition: Partition, spec: ProfileSpec, shape):
    nx, n1, n2 = shape
    x = (np.arange(nx) + 0.5) / nx
    y1 = (np.arange(n1) + 0.5) * spec.l1 / n1
    y2 = (np.arange(n2) + 0.5) * spec.G1 / n2
    k, base, gamma, _ = partition.locate_many(x)
    period = partition.period_at_base[k]
    return x, y1, y2, base, gamma, period


def unfold(field: ThinField, partition: Partition, shape=(256, 64, 64)) -> UnfoldedField:
    """Sample the unfolded field on a cell-centered lattice over (0,1) x Y*."""
    spec = field.spec
    eps = field.eps
    x, y1, y2, base, gamma, period = _lattice(partition, spec, shape)

    mapped = base[:, None] + gamma[:, None] * y1[None, :]          # (Nx, N1)
    top = np.asarray(spec.G_at(mapped, mapped / eps), dtype=float)  # cell height above
    y1_ok = y1[None, :] < period[:, None]
    mask = y1_ok[:, :, None] & (y2[None, None, :] < top[:, :, None])

    raw = field.value_raw(mapped[:, :, None], eps * y2[None, None, :])
    values = np.where(mask, raw, 0.0)
    return UnfoldedField(x=x, y1=y1, y2=y2, values=values, mask=mask, eps=eps,
                         l1=spec.l1, G1=spec.G1, slab_period=period,
                         source=unfolded_function(field, partition))


def unfold_sampler(sampler, spec: ProfileSpec, eps: float, partition: Partition,
                   shape=(256, 64, 64)) -> UnfoldedField:
    """Like :func:`unfold` for a bare ``(x, y) -> value`` sampler.

    The sampler is treated as already extended by zero outside the thin
    domain only through the support mask; used for unfolding gradient
    components of finite-element fields.
    """
    x, y1, y2, base, gamma, period = _lattice(partition, spec, shape)
    mapped = base[:, None] + gamma[:, None] * y1[None, :]
    top = np.asarray(spec.G_at(mapped, mapped / eps), dtype=float)
    y1_ok = y1[None, :] < period[:, None]
    mask = y1_ok[:, :, None] & (y2[None, None, :] < top[:, :, None])
    raw = sampler(mapped[:, :, None], eps * y2[None, None, :])
    values = np.where(mask, raw, 0.0)
    return UnfoldedField(x=x, y1=y1, y2=y2, values=values, mask=mask, eps=eps,
                         l1=spec.l1, G1=spec.G1, slab_period=period)


def average(psi, partition: Partition, eps: float, nq: int = 16,
            spec: ProfileSpec | None = None) -> ThinField:
    """Averaging (folding) operator: the formal adjoint of unfolding.

    ``psi`` is a function on (0,1) x Y* (callable or an
    :class:`UnfoldedField`); the first slot is integrated by an ``nq``-point
    midpoint rule over one local period.
    """
    if nq < 8:
        raise ValueError("nq must be at least 8")
    if isinstance(psi, UnfoldedField):
        if spec is None:
            raise ValueError("spec is required when averaging an UnfoldedField")
        fn = psi.as_function()
    else:
        fn = psi
    if spec is None:
        raise ValueError("spec is required")

    def value_fn(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(x.shape, y.shape)
        xf = np.broadcast_to(x, shape).ravel()
        yf = np.broadcast_to(y, shape).ravel()
        k, base, gamma, local = partition.locate_many(np.clip(xf, 0.0, np.nextafter(1.0, 0.0)))
        period = partition.period_at_base[k]
        z = (np.arange(nq) + 0.5) / nq * period[:, None]      # (n, nq)
        first = base[:, None] + gamma[:, None] * z
        second = np.broadcast_to(local[:, None], first.shape)
        third = np.broadcast_to((yf / eps)[:, None], first.shape)
        vals = fn(first, second, third)
        return np.mean(vals, axis=1).reshape(shape)

    return ThinField.from_callable(spec, eps, value_fn)


# --- quadrature over the thin domain ----------------------------------------

def thin_quadrature(spec: ProfileSpec, partition: Partition, eps: float,
                    nx_per_interval: int = 16, ny: int = 64):
    """Midpoint quadrature nodes and weights over the thin domain.

    Columns are laid out per partition interval (at least 16 each) so that
    quantities piecewise constant on intervals integrate exactly in x;
    each column carries ``ny`` midpoint nodes up to the local height.
    """
    nx_per_interval = max(16, int(nx_per_interval))
    pts = partition.points
    xs_cols = []
    wx_cols = []
    for k in range(partition.n_intervals):
        length = pts[k + 1] - pts[k]
        xs_cols.append(pts[k] + (np.arange(nx_per_interval) + 0.5) / nx_per_interval * length)
        wx_cols.append(np.full(nx_per_interval, length / nx_per_interval))
    xc = np.concatenate(xs_cols)
    wx = np.concatenate(wx_cols)
    height = np.asarray(spec.thin_height(eps, xc), dtype=float)
    frac = (np.arange(ny) + 0.5) / ny
    xs = np.repeat(xc, ny)
    ys = (height[:, None] * frac[None, :]).ravel()
    w = (wx * height / ny).repeat(ny)
    return xs, ys, w


def rescaled_norm(field: ThinField, eps: float, p: int = 2,
                  partition: Partition | None = None,
                  nx_per_interval: int = 16, ny: int = 64) -> float:
    """Thin-domain L^p norm rescaled by ``eps**(-1/p)``."""
    if p not in (1, 2):
        raise ValueError("rescaled_norm supports p in {1, 2}")
    if partition is None:
        from .geometry import build_partition
        partition = build_partition(field.spec, eps)
    xs, ys, w = thin_quadrature(field.spec, partition, eps, nx_per_interval, ny)
    vals = field.value(xs, ys)
    total = float(np.sum(w * np.abs(vals) ** p))
    return (total / eps) ** (1.0 / p)


# --- operator diagnostics ----------------------------------------------------

def uci_gap(field: ThinField, partition: Partition, shape=(256, 64, 64),
            nx_per_interval: int = 16):
    """Both sides of the unfolding criterion for integrals and their gap.

    Left: the unfolded lattice integral of ``T(field) / l(base)``.  Right:
    the thin-domain integral of the field divided by eps, on a grid aligned
    with the partition.  The two agree exactly in the continuum.
    """
    uf = unfold(field, partition, shape)
    lhs = float(np.sum(uf.values.sum(axis=(1, 2)) / uf.slab_period) * uf.cell_volume)
    xs, ys, w = thin_quadrature(field.spec, partition, field.eps,
                                nx_per_interval, ny=shape[2])
    rhs = float(np.sum(w * field.value(xs, ys)) / field.eps)
    return lhs, rhs, abs(lhs - rhs)


def adjoint_gap(field: ThinField, psi, partition: Partition, shape=(256, 64, 64),
                nq: int = 16, nx_per_interval: int = 16):
    """Gap in the duality between unfolding and averaging.

    ``psi`` must be a callable on (0,1) x Y*.  Left: thin-domain pairing of
    the field with the averaged psi (scaled by 1/eps).  Right: unfolded
    lattice pairing of ``T(field) / l(base)`` with psi.
    """
    spec = field.spec
    eps = field.eps
    folded = average(psi, partition, eps, nq=nq, spec=spec)
    xs, ys, w = thin_quadrature(spec, partition, eps, nx_per_interval, ny=shape[2])
    lhs = float(np.sum(w * field.value(xs, ys) * folded.value(xs, ys)) / eps)

    uf = unfold(field, partition, shape)
    g1, g2, g3 = np.meshgrid(uf.x, uf.y1, uf.y2, indexing="ij")
    psi_vals = psi(g1, g2, g3)
    rhs = float(np.sum((uf.values * psi_vals).sum(axis=(1, 2)) / uf.slab_period)
                * uf.cell_volume)
    return lhs, rhs, abs(lhs - rhs)


def left_inverse_residual(field: ThinField, partition: Partition, nq: int = 16,
                          nx_per_interval: int = 16, ny: int = 16) -> float:
    """Sup residual of average(unfold(field)) - field over a thin sample grid."""
    uf_fn = unfolded_function(field, partition)
    folded = average(uf_fn, partition, field.eps, nq=nq, spec=field.spec)
    xs, ys, _ = thin_quadrature(field.spec, partition, field.eps, nx_per_interval, ny)
    return float(np.max(np.abs(folded.value(xs, ys) - field.value(xs, ys))))


def char_gap(spec: ProfileSpec, partition: Partition, eps: float,
             shape=(256, 64, 64)) -> float:
    """L1 distance between the unfolded support and its eps -> 0 limit.

    Counts the symmetric-difference volume on the lattice between the
    support of the unfolded characteristic function and the limit set
    ``{y1 < l(x), y2 < G(x, y1)}``.
    """
    ones = ThinField.from_callable(spec, eps, lambda x, y: np.ones(
        np.broadcast_shapes(np.shape(x), np.shape(y))))
    uf = unfold(ones, partition, shape)
    lx = np.asarray(spec.l_at(uf.x), dtype=float)
    top = np.asarray(spec.G_at(uf.x[:, None], uf.y1[None, :]), dtype=float)
    limit_mask = (uf.y1[None, :] < lx[:, None])[:, :, None] \
        & (uf.y2[None, None, :] < top[:, :, None])
    return float(np.sum(uf.mask ^ limit_mask) * uf.cell_volume)
