"""Command-line drivers: config parsing, experiment runs, CSV and VTK output.

Usage::

    gu-crns stability --config run.ini --out results/ --tau 0.1
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import TriMesh, build_rect_mesh
from .scheme import GaugeUzawaSolver, SchemeConfig
from .sparse import SolverFailure
from .verification import (
    convergence_sweep,
    final_errors,
    manufactured_case,
    n_steps_for,
    stock_initial_data,
)

logger = logging.getLogger(__name__)

EXPERIMENTS = ("converge-time", "converge-space", "stability", "repulsion", "plume", "single-run")
INITIAL_DATA = ("manufactured", "stability", "repulsion", "plume")
ENERGY_HEADER = ("step", "time", "E3")
ERRORS_HEADER = ("axis", "level", "h", "tau", "var", "error", "rate")


class ConfigError(ValueError):
    """Invalid or missing configuration key."""


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    lx: float = 1.0
    ly: float = 1.0
    nx: int = 16
    ny: int = 16
    tau: float = 1e-2
    T: float = 1.0
    mu1: float = 1.0
    mu2: float = 1.0
    mu3: float = 1.0
    order: int = 1
    solver: str = "direct"
    poisson_solver: str = "direct"
    tol: float = 1e-10
    initial: str = "manufactured"
    out_dir: str = "out"
    every: int = 1
    snapshots: tuple = ()
    levels: tuple = ()
    seed: int = 0  # reserved

    def validate(self) -> "RunConfig":
        _check(self.experiment in EXPERIMENTS, "run.experiment", f"one of {', '.join(EXPERIMENTS)}")
        _check(self.tau > 0, "time.tau", "tau > 0")
        _check(self.T >= self.tau, "time.T", f"T >= tau ({self.tau})")
        for k in ("mu1", "mu2", "mu3"):
            _check(getattr(self, k) > 0, f"model.{k}", f"{k} > 0")
        _check(self.lx > 0 and self.ly > 0, "domain.lx/ly", "positive lengths")
        _check(self.nx >= 1 and self.ny >= 1, "domain.nx/ny", "integers >= 1")
        _check(self.order in (1, 2), "run.order", "1 or 2")
        _check(self.solver in ("direct", "gmres"), "solver.method", "direct or gmres")
        _check(self.poisson_solver in ("direct", "cg"), "solver.poisson", "direct or cg")
        _check(self.tol > 0, "solver.tol", "tol > 0")
        _check(self.initial in INITIAL_DATA, "run.initial", f"one of {', '.join(INITIAL_DATA)}")
        _check(self.every >= 1, "output.every", "integer >= 1")
        _check(all(k >= 0 for k in self.snapshots), "output.snapshots", "non-negative step indices")
        _check(all(v > 0 for v in self.levels), "sweep.levels", "positive integers")
        return self

    def scheme_config(self) -> SchemeConfig:
        return SchemeConfig(
            tau=self.tau, mu1=self.mu1, mu2=self.mu2, mu3=self.mu3, order=self.order,
            solver=self.solver, poisson_solver=self.poisson_solver, tol=self.tol,
        )


def _check(ok: bool, key: str, expected: str) -> None:
    if not ok:
        raise ConfigError(f"invalid value for '{key}': expected {expected}")


# Desk-scale defaults applied before the file and the command line.
EXPERIMENT_DEFAULTS = {
    "converge-time": dict(nx=64, ny=64, T=1.0, tau=1 / 32, levels=(4, 8, 16, 32)),
    "converge-space": dict(tau=1e-3, T=0.1, levels=(4, 8, 16, 32)),
    "stability": dict(initial="stability", nx=16, ny=16, tau=1e-2, T=2.5, every=50),
    "repulsion": dict(initial="repulsion", nx=48, ny=48, tau=1e-3, T=0.03, snapshots=(1, 10, 15, 20, 25, 30)),
    "plume": dict(initial="plume", lx=2.0, ly=1.0, nx=96, ny=48, tau=1e-3, T=0.01, every=5),
    "single-run": dict(initial="manufactured", nx=16, ny=16, tau=1e-2, T=0.1, every=10),
}

# (section, key) -> (RunConfig field, converter)
_KEYS = {
    ("run", "experiment"): ("experiment", str),
    ("run", "order"): ("order", int),
    ("run", "initial"): ("initial", str),
    ("run", "seed"): ("seed", int),
    ("domain", "lx"): ("lx", float),
    ("domain", "ly"): ("ly", float),
    ("domain", "nx"): ("nx", int),
    ("domain", "ny"): ("ny", int),
    ("time", "tau"): ("tau", float),
    ("time", "t"): ("T", float),
    ("model", "mu1"): ("mu1", float),
    ("model", "mu2"): ("mu2", float),
    ("model", "mu3"): ("mu3", float),
    ("solver", "method"): ("solver", str),
    ("solver", "poisson"): ("poisson_solver", str),
    ("solver", "tol"): ("tol", float),
    ("output", "dir"): ("out_dir", str),
    ("output", "every"): ("every", int),
    ("output", "snapshots"): ("snapshots", lambda s: _int_list(s)),
    ("sweep", "levels"): ("levels", lambda s: _int_list(s)),
}


def _int_list(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def read_config_file(path) -> dict:
    """Flat ``key = value`` pairs grouped by section; unknown keys are errors."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config '{path}': {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config '{path}': {exc}") from exc
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            spec = _KEYS.get((section.lower(), key.lower()))
            if spec is None:
                raise ConfigError(f"unknown key '{section}.{key}'")
            name, conv = spec
            try:
                values[name] = conv(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"invalid value for '{section}.{key}': {raw!r} ({exc})") from None
    return values


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a validated config from experiment defaults, an optional file and overrides."""
    values = read_config_file(path) if path is not None else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    name = values.get("experiment")
    if not name:
        raise ConfigError("missing key 'run.experiment': expected one of " + ", ".join(EXPERIMENTS))
    merged = dict(EXPERIMENT_DEFAULTS.get(name, {}))
    merged.update(values)
    return RunConfig(**merged).validate()


# ---------------------------------------------------------------------------
# output


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_vtk(mesh: TriMesh, path, scalars: dict | None = None, vectors: dict | None = None,
              title: str = "gu-crns") -> Path:
    """Legacy ASCII VTK (v3.0) unstructured grid with point data in the given order."""
    path = Path(path)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    V, T = mesh.n_vertices, mesh.n_triangles
    lines.append(f"POINTS {V} double")
    lines.extend(f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.vertices)
    lines.append(f"CELLS {T} {4 * T}")
    lines.extend(f"3 {a} {b} {c}" for a, b, c in mesh.triangles)
    lines.append(f"CELL_TYPES {T}")
    lines.extend(["5"] * T)
    if scalars or vectors:
        lines.append(f"POINT_DATA {V}")
    for name, vals in (scalars or {}).items():
        vals = np.asarray(vals, dtype=float)
        if vals.shape != (V,):
            raise ValueError(f"scalar field {name!r} has shape {vals.shape}, expected ({V},)")
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines.extend(_fmt(v) for v in vals)
    for name, vals in (vectors or {}).items():
        vals = np.asarray(vals, dtype=float)
        if vals.shape != (V, 2):
            raise ValueError(f"vector field {name!r} has shape {vals.shape}, expected ({V}, 2)")
        lines.append(f"VECTORS {name} double")
        lines.extend(f"{_fmt(a)} {_fmt(b)} 0" for a, b in vals)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk(path) -> dict:
    """Minimal reader for files produced by :func:`write_vtk`."""
    tokens = Path(path).read_text().split("\n")
    out = {"points": None, "cells": None, "scalars": {}, "vectors": {}}
    i = 4
    while i < len(tokens):
        head = tokens[i].split()
        i += 1
        if not head:
            continue
        if head[0] == "POINTS":
            n = int(head[1])
            out["points"] = np.array([[float(v) for v in tokens[i + k].split()[:2]] for k in range(n)])
            i += n
        elif head[0] == "CELLS":
            n = int(head[1])
            out["cells"] = np.array([[int(v) for v in tokens[i + k].split()[1:]] for k in range(n)])
            i += n
        elif head[0] == "CELL_TYPES":
            i += int(head[1])
        elif head[0] == "SCALARS":
            n = len(out["points"])
            out["scalars"][head[1]] = np.array([float(tokens[i + 1 + k]) for k in range(n)])
            i += n + 1
        elif head[0] == "VECTORS":
            n = len(out["points"])
            out["vectors"][head[1]] = np.array([[float(v) for v in tokens[i + k].split()[:2]] for k in range(n)])
            i += n
    return out


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else _fmt(v) if isinstance(v, float) else v for v in row])


def snapshot_fields(gu: GaugeUzawaSolver, state) -> tuple[dict, dict]:
    scalars = {"eta": state.eta.vertex_values()}
    if state.c is not None:
        scalars["c"] = state.c.vertex_values()
    scalars["p"] = state.p.vertex_values()
    scalars["s"] = state.s.vertex_values()
    return scalars, {"u": state.u.vertex_values()}


# ---------------------------------------------------------------------------
# experiments


def _sweep(cfg: RunConfig, out: Path) -> None:
    case = manufactured_case(cfg.mu1, cfg.mu2, cfg.mu3)
    if cfg.experiment == "converge-time":
        rep = convergence_sweep("time", [1.0 / k for k in cfg.levels], n=cfg.nx, T=cfg.T,
                                order=cfg.order, case=case, solver=cfg.solver)
    else:
        rep = convergence_sweep("space", list(cfg.levels), tau=cfg.tau, T=cfg.T,
                                order=cfg.order, case=case, solver=cfg.solver)
    _write_csv(out / "errors.csv", ERRORS_HEADER, rep.rows())
    for v, r in rep.rates.items():
        logger.info("%s rates %s", v, ", ".join(f"{x:.3f}" for x in r))


def _time_run(cfg: RunConfig, out: Path) -> None:
    mesh = build_rect_mesh(cfg.lx, cfg.ly, cfg.nx, cfg.ny)
    gu = GaugeUzawaSolver(mesh, cfg.scheme_config())
    case = None
    if cfg.initial == "manufactured":
        case = manufactured_case(cfg.mu1, cfg.mu2, cfg.mu3)
        state = gu.init_state(
            lambda x, y: case.eta(x, y, 0.0), lambda x, y: case.sigma(x, y, 0.0),
            lambda x, y: case.u(x, y, 0.0), c0=lambda x, y: case.c(x, y, 0.0),
            p0=lambda x, y: case.p(x, y, 0.0), u_boundary=lambda x, y: case.u(x, y, 0.0),
        )
    else:
        d = stock_initial_data(cfg.initial)
        state = gu.init_state(d.eta, d.sigma, d.u, c0=d.c, p0=d.p)

    n_steps = n_steps_for(cfg.T, cfg.tau)
    wanted = set(cfg.snapshots) if cfg.snapshots else {k for k in range(0, n_steps + 1, cfg.every)}

    def dump(st):
        if st.n in wanted:
            write_vtk(mesh, out / f"fields_{st.n:06d}.vtk", *snapshot_fields(gu, st))

    energy = [(0, state.t, gu.energy_e3(state))]
    dump(state)
    for state in gu.run(state, n_steps, forcing=case):
        energy.append((state.n, state.t, gu.energy_e3(state)))
        dump(state)
    _write_csv(out / "energy.csv", ENERGY_HEADER, energy)
    if case is not None:
        errs = final_errors(state, case)
        rows = (("final", 0, mesh.h, cfg.tau, v, e, None) for v, e in errs.items())
        _write_csv(out / "errors.csv", ERRORS_HEADER, rows)


def run_experiment(cfg: RunConfig) -> int:
    """Run ``cfg.experiment`` and write its artifacts; returns a process exit status."""
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if cfg.experiment in ("converge-time", "converge-space"):
            _sweep(cfg, out)
        else:
            _time_run(cfg, out)
    except (SolverFailure, RuntimeError) as exc:
        print(f"gu-crns: solver failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"gu-crns: I/O error on '{exc.filename or out}': {exc.strerror or exc}", file=sys.stderr)
        return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gu-crns", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path)
        p.add_argument("--out", dest="out_dir")
        p.add_argument("--order", type=int, choices=(1, 2))
        p.add_argument("--tau", type=float)
        p.add_argument("--nx", type=int)
        p.add_argument("--ny", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {k: getattr(args, k) for k in ("experiment", "out_dir", "order", "tau", "nx", "ny")}
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"gu-crns: {exc}", file=sys.stderr)
        return 1
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
