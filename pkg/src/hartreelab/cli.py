"""Command line entry point: ``hartreelab <subcommand> --config FILE --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import math
import os
import sys

import numpy as np
import scipy.fft as sfft

from . import _accel
from .asymptotics import (check_concentration, multiplier_trend, rescale_profile, solve_e_inf,
                          sweep_lambda)
from .config import SUBCOMMANDS, ConfigError, RunConfig, read_config
from .functionals import pohozaev
from .grid import RadialGrid, make_grid, radial_to_grid
from .groundstate import GroundStateError, compute_Q
from .potentials import make_potential, parse_form
from .solve import SolveConfig, minimize, minimize_multistart
from .storage import FieldFormatError, FieldMeta, emit_tables, read_field, write_field, write_radial_csv
from .threshold import estimate_lambda_star, phase_diagram

logger = logging.getLogger("hartreelab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class NumericalFailure(RuntimeError):
    """A run finished without a usable numerical verdict."""


# ---------------------------------------------------------------------------
# shared setup
# ---------------------------------------------------------------------------

def _potential(cfg: RunConfig):
    form = parse_form(cfg["potential.form"])
    table = None
    if form.value == "tabulated":
        path = cfg.get("potential.table")
        if not path:
            raise ConfigError("potential.table is required for the tabulated form")
        try:
            table, _ = read_field(path)
        except (OSError, FieldFormatError) as exc:
            raise ConfigError(f"cannot load potential.table {path}: {exc}") from None
    elif cfg.get("potential.table"):
        raise ConfigError("potential.table is only valid for the tabulated form")
    return make_potential(form, cfg["potential.p"], table)


def _grid(cfg: RunConfig):
    return make_grid(cfg["grid.d"], cfg["grid.L"], cfg["grid.n"])


def _ground_state(cfg: RunConfig, seed=None):
    rg = RadialGrid(cfg["radial.m"], cfg["radial.R"])
    try:
        return compute_Q(rg, tol=cfg["groundstate.tol"], max_iter=cfg["groundstate.max_iter"], seed=seed)
    except GroundStateError as exc:
        raise NumericalFailure(str(exc)) from exc


def _masses(cfg: RunConfig, section: str, gs):
    raw = cfg[f"{section}.N"]
    vals = raw if isinstance(raw, tuple) else (raw,)
    scale = gs.n_star if cfg[f"{section}.N_units"] == "nstar" else 1.0
    return [float(v) * scale for v in vals]


# ---------------------------------------------------------------------------
# subcommands; each returns (tables, extra files, ok)
# ---------------------------------------------------------------------------

def run_groundstate(cfg: RunConfig, out: str):
    gs = _ground_state(cfg, seed=cfg.seed or None)
    row = gs.as_row()
    row.update({f"pohozaev_{k}": v for k, v in pohozaev(gs.Q).as_dict().items()})
    extra = ["Q.csv"]
    write_radial_csv(os.path.join(out, "Q.csv"), gs.Q)
    if cfg["groundstate.export_grid"] and cfg["grid.d"] == 3:
        grid = _grid(cfg)
        write_field(os.path.join(out, "Q.hfld"), radial_to_grid(gs.Q, grid),
                    FieldMeta(math.nan, gs.n_star, math.nan))
        extra.append("Q.hfld")
    return {"groundstate": [row]}, extra, True


def run_solve(cfg: RunConfig, out: str):
    g = _potential(cfg)
    grid = _grid(cfg)
    N = cfg["solve.N"]
    if cfg["solve.N_units"] == "nstar":
        N *= _ground_state(cfg).n_star
    sc = SolveConfig(lam=cfg["solve.lambda"], N=N, g=g, grid=grid, tau=cfg["solve.tau"],
                     max_iters=cfg["solve.max_iters"], tol_residual=cfg["solve.tol_residual"],
                     tol_energy=cfg["solve.tol_energy"], init=cfg["solve.init"],
                     init_width=cfg["solve.init_width"], seed=cfg.seed,
                     energy_floor=cfg["solve.energy_floor"])
    rep = minimize_multistart(sc) if cfg["solve.multistart"] else minimize(sc)
    bd = rep.breakdown
    row = {"lambda": sc.lam, "N": N, "diagnosis": rep.diagnosis, "energy": bd.E, "E_hat": bd.E_hat,
           "T": bd.T, "P": bd.P, "D": bd.D, "M": bd.M, "mu": rep.mu_formula,
           "mu_projection": rep.mu_projection, "residual": rep.residual, "iterations": rep.iterations,
           "d": grid.d, "L": grid.L, "n": grid.n, "notes": " | ".join(rep.notes)}
    traj = rep.trajectory
    cols = list(traj.keys())
    trows = [{c: traj[c][i] for c in cols} for i in range(len(traj[cols[0]]))] if cols else []
    write_field(os.path.join(out, "u.hfld"), rep.u, FieldMeta(sc.lam, N, g.p))
    ok = rep.diagnosis not in ("numerical_failure", "max_iters")
    return {"solve": [row], "trajectory": trows}, ["u.hfld"], ok


def run_threshold(cfg: RunConfig, out: str):
    g = _potential(cfg)
    gs = _ground_state(cfg)
    rg = RadialGrid(cfg["threshold.m"], cfg["threshold.L"])
    rows = []
    for N in _masses(cfg, "threshold", gs):
        res = estimate_lambda_star(N, g, rg, gs, bisect=cfg["threshold.bisect"])
        row = res.as_row()
        row["N_over_nstar"] = N / gs.n_star
        row["gap"] = res.gap
        rows.append(row)
    ok = all(math.isfinite(r["lambda_star"]) for r in rows)
    return {"threshold": rows}, [], ok


def run_phase(cfg: RunConfig, out: str, threads: int = 1):
    g = _potential(cfg)
    gs = _ground_state(cfg)
    cells = phase_diagram(_masses(cfg, "phase", gs), cfg["phase.lambda"], g, _grid(cfg),
                          boundary_rel=cfg["phase.boundary_rel"], workers=threads,
                          solve_kwargs={"max_iters": cfg["phase.max_iters"]}, n_star=gs.n_star)
    rows = [c.as_row() for c in cells]
    ok = not any(c.raw_diagnosis == "numerical_failure" for c in cells)
    return {"diagram": rows}, [], ok


def run_sweep(cfg: RunConfig, out: str):
    g = _potential(cfg)
    if not g.is_radial:
        raise ConfigError("sweeps need an analytic well")
    gs = _ground_state(cfg)
    N = cfg["sweep.N"] * (gs.n_star if cfg["sweep.N_units"] == "nstar" else 1.0)
    w0 = solve_e_inf(N, g.p, RadialGrid(cfg["einf.m"], cfg["einf.R"]), tol_residual=cfg["einf.tol_residual"])
    e_inf = w0.breakdown.E_inf if w0.converged else math.nan
    fit = sweep_lambda(N, g, cfg["sweep.lambda"], L_w=cfg["sweep.L_w"], n=cfg["sweep.n"],
                       e_inf_ref=e_inf, tol_residual=cfg["sweep.tol_residual"],
                       max_iters=cfg["sweep.max_iters"])
    extra = []
    if cfg["sweep.snapshots"]:
        for i, (lam, rep) in enumerate(zip(fit.lambdas, fit.reports)):
            name = f"u_{i:03d}.hfld"
            write_field(os.path.join(out, name), rep.u, FieldMeta(float(lam), N, g.p))
            extra.append(name)
    trend = multiplier_trend(fit)
    summary = {"N": N, "p": g.p, "exponent": fit.exponent, "prefactor": fit.prefactor,
               "e_inf": e_inf, "window_lo": fit.window[0], "window_hi": fit.window[1],
               "multiplier_verdict": trend["verdict"], "multiplier_upper": trend["upper"],
               "multiplier_lower": trend["lower"], "flags": " | ".join(fit.flags)}
    tables = {"scaling": fit.rows(), "sweep_summary": [summary]}
    profiles = [rescale_profile(rep, lam, g.p) for lam, rep in zip(fit.lambdas, fit.reports) if rep.converged]
    if len(profiles) >= 3 and w0.converged:
        tables["concentration"] = check_concentration(profiles, w0)
    ok = any(d == "converged" for d in fit.diagnoses)
    return tables, extra, ok


def run_einf(cfg: RunConfig, out: str):
    p = cfg["potential.p"]
    gs = _ground_state(cfg)
    rg = RadialGrid(cfg["einf.m"], cfg["einf.R"])
    rows, extra = [], []
    for i, N in enumerate(_masses(cfg, "einf", gs)):
        rep = solve_e_inf(N, p, rg, tol_residual=cfg["einf.tol_residual"])
        info = rep.info
        rows.append({"N": N, "N_over_nstar": N / gs.n_star, "diagnosis": rep.diagnosis,
                     "e_inf": rep.breakdown.E_inf, "e_inf_over_N": rep.breakdown.E_inf / N,
                     "mu": rep.mu_formula, "residual": rep.residual, "iterations": rep.iterations,
                     "monotone": info.get("monotone"), "decay_rate": info.get("decay_rate"),
                     "linear_bound": info["linear_bound"]})
        if rep.converged:
            name = f"w0_{i:03d}.csv"
            write_radial_csv(os.path.join(out, name), rep.u)
            extra.append(name)
    ok = all(r["diagnosis"] in ("converged", "collapse") for r in rows)
    return {"einf": rows}, extra, ok


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hartreelab", description="Mass-critical Hartree minimization with steep wells.")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="configuration file (section.key = value)")
        sp.add_argument("--out", default="out", help="output directory (default ./out)")
        sp.add_argument("--seed", type=int, default=None, help="seed (unsigned 64-bit), overrides run.seed")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for FFTs and independent jobs")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(cfg: RunConfig, out: str, threads: int = 1) -> tuple[list[str], bool]:
    """Execute ``cfg`` and write its tables to ``out``; returns (files, ok)."""
    os.makedirs(out, exist_ok=True)
    sub = cfg.subcommand
    if sub == "phase":
        tables, extra, ok = run_phase(cfg, out, threads)
    else:
        tables, extra, ok = {
            "groundstate": run_groundstate, "solve": run_solve, "threshold": run_threshold,
            "sweep": run_sweep, "einf": run_einf,
        }[sub](cfg, out)
    files = emit_tables(tables, out, cfg.hash, extra)
    return files[:-1] + sorted(extra) + files[-1:], ok


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = read_config(args.config, args.subcommand)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("seed must fit in an unsigned 64-bit integer")
            cfg.seed = args.seed
            cfg.values["run.seed"] = args.seed
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    _accel.set_threads(args.threads)
    try:
        with sfft.set_workers(args.threads), np.errstate(over="ignore", under="ignore"):
            files, ok = run(cfg, args.out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # domain violations (e.g. a mass above N* for a threshold) are input errors
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for f in files:
        print(os.path.join(args.out, f))
    if not ok:
        print("numerical failure: run finished without a usable verdict", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    with contextlib.suppress(KeyboardInterrupt):
        sys.exit(main())
