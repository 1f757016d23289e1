"""Matplotlib renderings written next to the delimited reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def partition_figure(spec, partition, path):
    """The partition driver h(x) = x/l(x), its eps-levels and the breakpoints."""
    fig, ax = plt.subplots(figsize=(7, 4))
    xs = np.linspace(0.0, 1.0, 1024)
    h = spec.h_at(xs)
    ax.plot(xs, h, color="C0", label="x / l(x)")
    eps = partition.eps
    for k in range(1, int(np.max(h) / eps) + 1):
        ax.axhline(k * eps, color="0.85", lw=0.6, zorder=0)
    pts = partition.points
    ax.plot(pts, spec.h_at(pts), "o", ms=4, color="C3", label="partition points")
    ax.set_xlabel("x")
    ax.set_ylabel("x / l(x)")
    ax.set_title(f"period-adapted partition, eps = {eps:g}")
    ax.legend(loc="upper left")
    return _finish(fig, path)


def effective_figure(table, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(table.anchors, table.r, "o-", ms=3, label="r(x)")
    ax.plot(table.anchors, table.p / table.l, "s-", ms=3, label="p(x)/l(x)")
    ax.plot(table.anchors, table.f0, "^-", ms=3, label="f0(x)")
    ax.set_xlabel("x")
    ax.set_title("effective coefficients")
    ax.legend()
    return _finish(fig, path)


def cells_figure(anchors, r, energy_r, p_over_l, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(anchors, r, "o-", ms=3, label="r(x)")
    ax.plot(anchors, energy_r, "x", ms=5, label="r(x) via energy")
    ax.plot(anchors, p_over_l, "s-", ms=3, label="p(x)/l(x)")
    ax.set_xlabel("x")
    ax.set_title("cell problem summary")
    ax.legend()
    return _finish(fig, path)


def homog_figure(solution, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(solution.nodes, solution.u, color="C0")
    ax.set_xlabel("x")
    ax.set_ylabel("u")
    ax.set_title("homogenized solution")
    return _finish(fig, path)


def thin_field_figure(mesh, nodal, path, eps=None):
    fig, ax = plt.subplots(figsize=(8, 2.6))
    tpc = ax.tripcolor(mesh.vertices[:, 0], mesh.vertices[:, 1],
                       mesh.triangles, nodal, shading="gouraud")
    fig.colorbar(tpc, ax=ax, label="u")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if eps is not None:
        ax.set_title(f"direct thin-domain solution, eps = {eps:g}")
    ax.set_aspect("auto")
    return _finish(fig, path)


def convergence_figure(rows, path):
    """Log-log error decay along the eps sweep."""
    eps = [row.eps for row in rows]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for attr, style in (("e_L2", "o-"), ("e_H1_corr", "s-"),
                        ("e_unfold_grad", "^-"), ("char_gap", "d--")):
        vals = [getattr(row, attr) for row in rows]
        if all(v > 0 for v in vals):
            ax.loglog(eps, vals, style, ms=4, label=attr)
    ref = [eps[0], eps[-1]]
    ax.loglog(ref, [rows[0].char_gap or eps[0], (rows[0].char_gap or eps[0])
                    * ref[1] / ref[0]], "k:", lw=0.8, label="slope 1")
    ax.set_xlabel("eps")
    ax.set_ylabel("error")
    ax.invert_xaxis()
    ax.legend(fontsize=8)
    ax.set_title("convergence toward the homogenized limit")
    return _finish(fig, path)


def unfold_check_figure(rows, path):
    """rows: (eps, uci_const, uci_x, adjoint, left_inverse, char_gap)."""
    rows = list(rows)
    eps = [row[0] for row in rows]
    labels = ("uci gap (const)", "uci gap (x)", "adjoint gap",
              "left-inverse residual", "support gap")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for j, lab in enumerate(labels, start=1):
        vals = [max(row[j], 1e-18) for row in rows]
        ax.semilogy(eps, vals, "o-", ms=4, label=lab)
    ax.set_xlabel("eps")
    ax.set_ylabel("gap")
    ax.invert_xaxis()
    ax.legend(fontsize=8)
    ax.set_title("unfolding operator diagnostics")
    return _finish(fig, path)
