"""Command-line front end: config parsing, dispatch, report emission.

Data goes to files in the configured output directory (CSV or JSON, plus
rendered figures); everything human-oriented goes to standard error.  Exit
codes: 0 success, 1 profile validation failure, 2 solver failure, 3
configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import exprlang, fem, figures
from .corrector import StudyParams, convergence_study
from .geometry import (PartitionError, ProfileError, ProfileSpec,
                       build_partition, validate_profile)
from .homogenize import compute_effective, run_pipeline
from .parallel import parallel_map, resolve_threads
from .report import write_table
from .unfolding import ThinField, adjoint_gap, char_gap, left_inverse_residual, uci_gap

log = logging.getLogger("thinhomog")

COMMANDS = ("validate", "partition", "cell", "effective", "solve-direct",
            "solve-homog", "correctors", "study", "unfold-check")

_REQUIRED = {
    ("domain", "G"), ("domain", "l"), ("domain", "G0"), ("domain", "G1"),
    ("domain", "l0"), ("domain", "l1"), ("forcing", "f"),
}

_SCHEMA = {
    "domain": {"G": str, "l": str, "G0": float, "G1": float, "l0": float, "l1": float},
    "forcing": {"f": str},
    "discretization": {"n1": int, "n2": int, "anchors": int, "n_per": int,
                       "ny": int, "n_1d": int, "cg_tol": float, "cg_maxiter": int,
                       "Nx": int, "N1": int, "N2": int, "Nq": int},
    "study": {"eps": str},
    "output": {"directory": str, "format": str},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    spec: ProfileSpec
    f: exprlang.Expr
    params: StudyParams
    eps_values: list[float] = field(default_factory=lambda: [0.125, 0.0625, 0.03125])
    directory: Path = Path("out")
    format: str = "csv"


def parse_config(path) -> RunConfig:
    """Parse the sectioned key=value configuration file.

    Unknown sections or keys are errors; there is no silent typo tolerance.
    """
    raw: dict[tuple[str, str], str] = {}
    section = None
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if text.startswith("[") and text.endswith("]"):
            section = text[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        if section is None:
            raise ConfigError(f"{path}:{lineno}: key outside of any section")
        key, value = (part.strip() for part in text.split("=", 1))
        if key not in _SCHEMA[section]:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r} in [{section}]")
        if (section, key) in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[(section, key)] = value

    for sec, key in sorted(_REQUIRED):
        if (sec, key) not in raw:
            raise ConfigError(f"missing required key {key!r} in section [{sec}]")

    def get(section, key, default=None):
        if (section, key) not in raw:
            return default
        text = raw[(section, key)]
        kind = _SCHEMA[section][key]
        if kind is str:
            return text
        try:
            return kind(text)
        except ValueError as exc:
            raise ConfigError(f"malformed {kind.__name__} for {key!r}: {text!r}") from exc

    try:
        spec = ProfileSpec.from_strings(
            get("domain", "G"), get("domain", "l"),
            get("domain", "G0"), get("domain", "G1"),
            get("domain", "l0"), get("domain", "l1"))
        forcing = exprlang.parse(get("forcing", "f"), {"x"})
    except exprlang.ParseError as exc:
        raise ConfigError(f"expression error: {exc}") from exc

    params = StudyParams(
        n1=get("discretization", "n1", 64),
        n2=get("discretization", "n2", 64),
        anchors=get("discretization", "anchors", 32),
        n_per=get("discretization", "n_per", 16),
        ny=get("discretization", "ny", 8),
        n_1d=get("discretization", "n_1d", 512),
        cg_tol=get("discretization", "cg_tol", 1e-10),
        cg_maxiter=get("discretization", "cg_maxiter", 0) or None,
        Nx=get("discretization", "Nx", 256),
        N1=get("discretization", "N1", 64),
        N2=get("discretization", "N2", 64),
        Nq=get("discretization", "Nq", 16),
    )
    for name in ("n1", "n2", "anchors", "n_per", "ny", "n_1d", "Nx", "N1", "N2", "Nq"):
        if getattr(params, name) <= 0:
            raise ConfigError(f"{name} must be positive")

    eps_text = get("study", "eps", "0.125, 0.0625, 0.03125")
    try:
        eps_values = [float(tok) for tok in eps_text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"malformed eps list: {eps_text!r}") from exc
    if not eps_values:
        raise ConfigError("eps list is empty")
    if any(not (0.0 < e <= 0.25) for e in eps_values):
        raise ConfigError("eps values must lie in (0, 1/4]")
    if any(b >= a for a, b in zip(eps_values, eps_values[1:])):
        raise ConfigError("eps values must be strictly decreasing")

    fmt = get("output", "format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"output format must be csv or json, got {fmt!r}")
    return RunConfig(spec=spec, f=forcing, params=params, eps_values=eps_values,
                     directory=Path(get("output", "directory", "out")), format=fmt)


def _cmd_validate(cfg: RunConfig, plots: bool) -> int:
    report = validate_profile(cfg.spec)
    rows = [("status", "ok" if report.ok else "fatal")]
    rows += [("fatal", msg) for msg in report.fatal]
    rows += [("warning", msg) for msg in report.warnings]
    rows += [(key, value) for key, value in sorted(report.metrics.items())]
    out = write_table(cfg.directory / "validation", ("key", "value"), rows, cfg.format)
    for line in report.lines():
        log.info("%s", line)
    log.info("wrote %s", out)
    return 0 if report.ok else 1


def _cmd_partition(cfg: RunConfig, plots: bool) -> int:
    for eps in cfg.eps_values:
        part = build_partition(cfg.spec, eps)
        stem = cfg.directory / f"partition_eps_{eps:g}"
        out = write_table(stem, ("k", "x_k", "l_xk", "gamma_k"), part.rows(), cfg.format)
        log.info("eps=%g: %d intervals -> %s", eps, part.n_intervals, out)
        if plots:
            figures.partition_figure(cfg.spec, part, stem.with_suffix(".png"))
    return 0


def _cmd_cell(cfg: RunConfig, plots: bool) -> int:
    p = cfg.params
    anchors = (np.arange(p.anchors) + 0.5) / p.anchors
    cells = parallel_map(
        lambda x: fem.solve_cell(cfg.spec, x, p.n1, p.n2, tol=p.cg_tol,
                                 maxiter=p.cg_maxiter),
        anchors, p.threads)
    rows = [(c.anchor_x, c.r, c.energy_r, c.p, c.l) for c in cells]
    out = write_table(cfg.directory / "cells", ("x", "r", "energy_r", "p", "l"),
                      rows, cfg.format)
    log.info("wrote %s", out)
    if plots:
        figures.cells_figure(anchors, [c.r for c in cells],
                             [c.energy_r for c in cells],
                             [c.p / c.l for c in cells],
                             cfg.directory / "cells.png")
    return 0


def _cmd_effective(cfg: RunConfig, plots: bool) -> int:
    p = cfg.params
    table = compute_effective(cfg.spec, cfg.f, M=p.anchors, n1=p.n1, n2=p.n2,
                              cg_tol=p.cg_tol, cg_maxiter=p.cg_maxiter,
                              threads=p.threads)
    out = write_table(cfg.directory / "effective", ("x", "r", "p", "l", "f0"),
                      table.rows(), cfg.format)
    log.info("wrote %s", out)
    if plots:
        figures.effective_figure(table, cfg.directory / "effective.png")
    return 0


def _cmd_solve_direct(cfg: RunConfig, plots: bool) -> int:
    p = cfg.params
    for eps in cfg.eps_values:
        field = fem.solve_thin_neumann(cfg.spec, eps, cfg.f, n_per=p.n_per,
                                       ny=p.ny, tol=p.cg_tol, maxiter=p.cg_maxiter)
        stem = cfg.directory / f"direct_eps_{eps:g}"
        rows = zip(field.mesh.vertices[:, 0], field.mesh.vertices[:, 1], field.nodal)
        out = write_table(stem, ("x", "y", "u"), rows, cfg.format)
        log.info("eps=%g: %d vertices -> %s", eps, field.mesh.n_vertices, out)
        if plots:
            figures.thin_field_figure(field.mesh, field.nodal,
                                      stem.with_suffix(".png"), eps=eps)
    return 0


def _cmd_solve_homog(cfg: RunConfig, plots: bool) -> int:
    p = cfg.params
    _, solution = run_pipeline(cfg.spec, cfg.f, M=p.anchors, n1=p.n1, n2=p.n2,
                               n_1d=p.n_1d, cg_tol=p.cg_tol,
                               cg_maxiter=p.cg_maxiter, threads=p.threads)
    out = write_table(cfg.directory / "homogenized", ("x", "u"),
                      zip(solution.nodes, solution.u), cfg.format)
    log.info("wrote %s", out)
    if plots:
        figures.homog_figure(solution, cfg.directory / "homogenized.png")
    return 0


def _cmd_study(cfg: RunConfig, plots: bool, name: str) -> int:
    report = convergence_study(cfg.spec, cfg.f, cfg.eps_values, cfg.params)
    out = write_table(cfg.directory / name, report.COLUMNS,
                      report.table_rows(), cfg.format)
    for row in report.rows:
        log.info("eps=%g: e_L2=%.4e e_H1_corr=%.4e e_unfold_grad=%.4e "
                 "char_gap=%.4e (%.2fs)", row.eps, row.e_L2, row.e_H1_corr,
                 row.e_unfold_grad, row.char_gap, row.seconds)
    for msg in report.warnings:
        log.warning("%s", msg)
    log.info("wrote %s", out)
    if plots:
        figures.convergence_figure(report.rows, cfg.directory / f"{name}.png")
    return 0


def _cmd_unfold_check(cfg: RunConfig, plots: bool) -> int:
    p = cfg.params
    shape = p.unfold_shape
    rows = []
    for eps in cfg.eps_values:
        part = build_partition(cfg.spec, eps)
        ones = ThinField.from_expression(cfg.spec, eps, exprlang.parse("1", {"x", "y"}))
        ident = ThinField.from_expression(cfg.spec, eps, exprlang.parse("x", {"x", "y"}))
        _, rhs1, gap1 = uci_gap(ones, part, shape)
        _, rhsx, gapx = uci_gap(ident, part, shape)

        def psi(a, b, c):
            return np.cos(a) * (1.0 + b) + 0.5 * c

        _, rhs_a, gap_a = adjoint_gap(ident, psi, part, shape, nq=p.Nq)
        residual = left_inverse_residual(ident, part, nq=p.Nq)
        gap_w = char_gap(cfg.spec, part, eps, shape)
        rows.append((eps, gap1 / abs(rhs1), gapx / abs(rhsx), gap_a / abs(rhs_a),
                     residual, gap_w))
        log.info("eps=%g: uci(1)=%.3e uci(x)=%.3e adjoint=%.3e left-inv=%.3e "
                 "support=%.3e", *rows[-1])
    out = write_table(cfg.directory / "unfold_check",
                      ("eps", "uci_gap_const", "uci_gap_x", "adjoint_gap",
                       "left_inverse_residual", "char_gap"), rows, cfg.format)
    log.info("wrote %s", out)
    if plots:
        figures.unfold_check_figure(rows, cfg.directory / "unfold_check.png")
    return 0


def dispatch(command: str, cfg: RunConfig, plots: bool = True) -> int:
    """Run one command; returns the process exit code."""
    cfg.directory.mkdir(parents=True, exist_ok=True)
    if command != "validate":
        report = validate_profile(cfg.spec)
        if not report.ok:
            for line in report.lines():
                log.error("%s", line)
            return 1
    try:
        if command == "validate":
            return _cmd_validate(cfg, plots)
        if command == "partition":
            return _cmd_partition(cfg, plots)
        if command == "cell":
            return _cmd_cell(cfg, plots)
        if command == "effective":
            return _cmd_effective(cfg, plots)
        if command == "solve-direct":
            return _cmd_solve_direct(cfg, plots)
        if command == "solve-homog":
            return _cmd_solve_homog(cfg, plots)
        if command in ("correctors", "study"):
            return _cmd_study(cfg, plots, command)
        if command == "unfold-check":
            return _cmd_unfold_check(cfg, plots)
    except (fem.SolverError, PartitionError, exprlang.DomainError) as exc:
        log.error("solver failure: %s", exc)
        return 2
    raise ValueError(f"unknown command {command!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="thinhomog",
        description="homogenization toolkit for thin domains with a locally "
                    "periodic oscillating boundary")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="path to the run configuration")
    parser.add_argument("--threads", type=int, default=0,
                        help="cap on internal parallelism (0 = auto)")
    parser.add_argument("--no-plots", action="store_true",
                        help="skip figure rendering")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(stream=sys.stderr,
                        level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    start = time.perf_counter()
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 3
    cfg.params.threads = resolve_threads(args.threads)
    try:
        code = dispatch(args.command, cfg, plots=not args.no_plots)
    except ProfileError as exc:
        log.error("validation failure: %s", exc)
        return 1
    log.info("done in %.2fs (exit %d)", time.perf_counter() - start, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
