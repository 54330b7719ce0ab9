"""Command-line runner: ``hcpe run | study | audit``.

Exit codes: 0 success, 2 configuration error, 3 regime violation, 4 numeric
failure. Every exit path of ``run`` and ``study`` writes ``summary.json``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import config as cfgmod
from . import grid as g
from . import linear, scenarios, solver, thermo
from .diagnostics import (
    DiagnosticsWriter,
    averaged_continuity_residual,
    residual_full_system,
    vertical_velocity,
)
from .errors import ConvergenceError, DegeneracyError, NonContractionError, RegimeError
from .lagrangian_system import audit as termwise_audit
from .lagrangian_system import remainder_norm, remainders

EXIT_OK, EXIT_CONFIG, EXIT_REGIME, EXIT_NUMERIC = 0, 2, 3, 4
NUMERIC_ERRORS = (DegeneracyError, NonContractionError, ConvergenceError, FloatingPointError, np.linalg.LinAlgError)

log = logging.getLogger("hcpe")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def _write_json(path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


# -- experiment core ------------------------------------------------------------------


def perturbation_norms(eq, state):
    return {
        "rho_bar": float(np.max(np.abs(state.rho_bar - eq.rho_bar_star))),
        "v": float(np.max(np.abs(state.v))),
        "theta": float(np.max(np.abs(state.theta - eq.theta_star))),
    }


def summarize(grid, eq, traj):
    """Energy drift, residual maxima and bracket status of a (possibly partial) trajectory."""
    out = {}
    rows = traj.diagnostics
    if rows:
        e0, e1 = rows[0]["energy"], rows[-1]["energy"]
        out["energy"] = {"initial": e0, "final": e1, "relative_drift": (e1 - e0) / e0}
        out["max_residuals"] = {
            k: max(r[f"{k}_residual"] for r in rows) for k in ("continuity", "momentum", "temperature")
        }
        out["max_abs_w_top"] = max(r["max_abs_w_top"] for r in rows)
    if traj.states:
        out["final_time"] = traj.final.time
        out["perturbation_norms"] = perturbation_norms(eq, traj.final)
        report = solver.check_solution_class(grid, eq, traj)
        out["brackets"] = {
            k: report[k]
            for k in ("brackets_ok", "theta_ratio_range", "rho_ratio_range", "theta_margin", "first_violation_time")
        }
        out["solution_class"] = {k: v for k, v in report.items() if k not in out["brackets"]}
    if traj.picard is not None:
        out["picard"] = traj.picard
    if traj.violation is not None:
        out["violation"] = traj.violation
    return out


def run_experiment(cfg, beta_scale=1.0, on_output=None):
    """Build everything from a :class:`RunConfig` and integrate; returns ``(summary, traj)``."""
    grid = cfg.grid
    eq = cfg.equilibrium(beta_scale)
    sconf = cfg.solver(grid)
    init = cfg.initial
    state = scenarios.build(init["scenario"], grid, eq, init["eps"], init["seed"])
    source = exact = None
    if init["scenario"] == "manufactured-1":
        exact = scenarios.manufactured_solution(eq, init["eps"], init["seed"])
        if sconf.scheme == "eulerian-imex":
            source = exact.discrete_source(grid, sconf.physics)
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        traj = solver.solve(grid, eq, state, sconf, on_output, source)
    summary = summarize(grid, eq, traj)
    if source is not None:
        ref = exact.state(grid, traj.final.time)
        summary["manufactured_error"] = max(
            float(np.max(np.abs(a - b)))
            for a, b in ((traj.final.rho_bar, ref.rho_bar), (traj.final.v, ref.v), (traj.final.theta, ref.theta))
        )
    return summary, traj


def _base_summary(cfg, command):
    data = cfg.data if cfg else None
    return {"command": command, "config": data}


# -- click plumbing -------------------------------------------------------------------


def _common(f):
    f = click.option("--quiet", is_flag=True, help="Only print errors.")(f)
    f = click.option("--seed", type=int, default=None, help="Override initial.seed.")(f)
    f = click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="Output directory.")(f)
    f = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="JSON config.")(f)
    f = click.option(
        "--debug-beta-scale",
        type=float,
        default=1.0,
        show_default=True,
        help="Debug only: multiply the nonlocal profile beta, breaking its normalization.",
    )(f)
    return f


def _load(config_path, seed):
    cfg = cfgmod.from_path(config_path) if config_path else cfgmod.default()
    if seed is not None:
        if seed < 0:
            raise cfgmod.ConfigError(f"--seed: {seed} is less than the minimum of 0")
        cfg = cfg.replace("initial", "seed", seed)
    return cfg


def _fallback_dir(out):
    return Path(out or os.environ.get(cfgmod.OUT_DIR_ENV) or cfgmod.DEFAULTS["output"]["directory"])


def _echo(quiet, msg):
    if not quiet:
        click.echo(msg)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log Picard iterations and progress.")
def main(verbose):
    """Averaged-density hydrostatic solver and verification harness."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@_common
def run(config_path, out, seed, quiet, debug_beta_scale):
    """Integrate one configuration and write diagnostics, dumps and a summary."""
    try:
        cfg = _load(config_path, seed)
    except cfgmod.ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        _write_json(_fallback_dir(out) / "summary.json", {"command": "run", "status": "config_error", "exit_code": EXIT_CONFIG, "error": str(exc)})
        sys.exit(EXIT_CONFIG)

    out_dir = cfg.output_directory(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid
    dumps = cfg.data["output"]["dumps"]
    field_dir = out_dir / "fields"
    if dumps:
        field_dir.mkdir(exist_ok=True)
    summary = _base_summary(cfg, "run")
    counter = {"n": 0}

    with DiagnosticsWriter(out_dir / "diagnostics.csv") as writer:

        def on_output(state, row):
            writer.write(row)
            k = counter["n"]
            counter["n"] += 1
            for name in dumps:
                g.write_field(field_dir / f"{name}_{k:05d}.bin", getattr(state, name), name, state.time, grid)
            _echo(quiet, f"t={state.time:.4f} energy={row['energy']:.12e} |w(1)|={row['max_abs_w_top']:.3e}")

        try:
            result, _ = run_experiment(cfg, debug_beta_scale, on_output)
            summary.update(result, status="ok", exit_code=EXIT_OK)
        except RegimeError as exc:
            partial = getattr(exc, "trajectory", None)
            if partial is not None:
                summary.update(summarize(grid, cfg.equilibrium(debug_beta_scale), partial))
            summary.update(
                status="regime_violation",
                exit_code=EXIT_REGIME,
                error=str(exc),
                violation={"field": exc.field, "location": exc.location, "time": exc.time},
            )
        except NUMERIC_ERRORS as exc:
            summary.update(status="numeric_failure", exit_code=EXIT_NUMERIC, error=f"{type(exc).__name__}: {exc}")

    _write_json(out_dir / "summary.json", summary)
    if summary["exit_code"] != EXIT_OK:
        click.echo(f"{summary['status']}: {summary['error']}", err=True)
        sys.exit(summary["exit_code"])
    if not quiet:
        drift = summary.get("energy", {}).get("relative_drift")
        click.echo(f"done: relative energy drift {drift:.3e}; brackets ok = {summary['brackets']['brackets_ok']}")


# -- study ----------------------------------------------------------------------------

HYDROSTATIC_CONSTANT = 10.0
STUDY_METRICS = {"dt": "energy_drift", "nx": "energy_drift", "nz": "hydrostatic_residual", "eps": "remainder_norm"}


def _hydrostatic_residual(cfg, beta_scale):
    grid = cfg.grid
    eq = cfg.equilibrium(beta_scale)
    init = cfg.initial
    state = scenarios.build(init["scenario"], grid, eq, init["eps"], init["seed"])
    p = thermo.pressure(thermo.surface_pressure(state.rho_bar, state.theta), state.theta)
    return float(np.max(np.abs(g.dz(p) + thermo.density(state.rho_bar, state.theta))))


def _remainder_norm(cfg, beta_scale):
    grid = cfg.grid
    eq = cfg.equilibrium(beta_scale)
    physics = cfg.physics(grid)
    lag, tend = scenarios.perturbation(grid, eq, cfg.initial["eps"])
    return remainder_norm(grid, remainders(grid, lag, tend, physics))


def _energy_drift(cfg, beta_scale):
    summary, _ = run_experiment(cfg, beta_scale)
    return abs(summary["energy"]["relative_drift"])


def study_levels(cfg, axis, levels):
    """Configurations and the refinement parameter for each level."""
    out = []
    for k in range(levels):
        f = 2**k
        if axis == "dt":
            c = cfg.replace("solver", "dt", cfg.data["solver"]["dt"] / f)
            c = c.replace("output", "every", cfg.data["output"]["every"] * f)
            param = c.data["solver"]["dt"]
        elif axis == "nz":
            c = cfg.replace("grid", "nz", (cfg.data["grid"]["nz"] - 1) * f + 1)
            param = 1.0 / (c.data["grid"]["nz"] - 1)
        elif axis == "nx":
            c = cfg.replace("grid", "nx", cfg.data["grid"]["nx"] * f).replace("grid", "ny", cfg.data["grid"]["ny"] * f)
            param = 1.0 / c.data["grid"]["nx"]
        elif axis == "eps":
            c = cfg.replace("initial", "eps", cfg.data["initial"]["eps"] / f)
            param = c.data["initial"]["eps"]
        else:
            raise ValueError(f"unknown axis {axis!r}")
        out.append((c, param))
    return out


def observed_order(params, values):
    """Least-squares slope of ``log(value)`` against ``log(param)``."""
    params, values = np.asarray(params, float), np.asarray(values, float)
    keep = values > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(params[keep]), np.log(values[keep]), 1)[0])


def run_study(cfg, axis, levels, beta_scale=1.0):
    metric = STUDY_METRICS[axis]
    measure = {"energy_drift": _energy_drift, "hydrostatic_residual": _hydrostatic_residual, "remainder_norm": _remainder_norm}[metric]
    rows = []
    for k, (c, param) in enumerate(study_levels(cfg, axis, levels)):
        rows.append({"level": k, "axis": axis, "parameter": param, "metric": metric, "value": measure(c, beta_scale)})
    return rows, observed_order([r["parameter"] for r in rows], [r["value"] for r in rows])


@main.command()
@_common
@click.option("--axis", type=click.Choice(sorted(STUDY_METRICS)), required=True, help="Quantity to refine.")
@click.option("--levels", type=click.IntRange(2, 8), default=3, show_default=True)
def study(config_path, out, seed, quiet, debug_beta_scale, axis, levels):
    """Refine one axis and report the observed order of the matching metric."""
    try:
        cfg = _load(config_path, seed)
    except cfgmod.ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        _write_json(_fallback_dir(out) / "summary.json", {"command": "study", "status": "config_error", "exit_code": EXIT_CONFIG, "error": str(exc)})
        sys.exit(EXIT_CONFIG)
    out_dir = cfg.output_directory(out)
    summary = _base_summary(cfg, "study")
    summary.update(axis=axis, levels=levels)
    try:
        rows, order = run_study(cfg, axis, levels, debug_beta_scale)
        summary.update(status="ok", exit_code=EXIT_OK, rows=rows, observed_order=order)
    except RegimeError as exc:
        summary.update(status="regime_violation", exit_code=EXIT_REGIME, error=str(exc))
    except NUMERIC_ERRORS as exc:
        summary.update(status="numeric_failure", exit_code=EXIT_NUMERIC, error=f"{type(exc).__name__}: {exc}")
    out_dir.mkdir(parents=True, exist_ok=True)
    if summary["exit_code"] == EXIT_OK:
        with open(out_dir / "study.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["level", "axis", "parameter", "metric", "value"])
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    _write_json(out_dir / "summary.json", summary)
    if summary["exit_code"] != EXIT_OK:
        click.echo(f"{summary['status']}: {summary['error']}", err=True)
        sys.exit(summary["exit_code"])
    if not quiet:
        click.echo(f"{'level':>5} {'parameter':>12} {rows[0]['metric']:>22}")
        for r in rows:
            click.echo(f"{r['level']:>5} {r['parameter']:>12.5g} {r['value']:>22.6e}")
        click.echo(f"observed order: {order:.3f}")


# -- audit ----------------------------------------------------------------------------


def _entry(name, value, threshold, passed, **extra):
    return {"name": name, "value": value, "threshold": threshold, "pass": passed, **extra}


def audit_suite(cfg, beta_scale=1.0, samples=5):
    """The invariant suite at the configured resolution; returns a list of report entries."""
    grid = cfg.grid
    eq = cfg.equilibrium(beta_scale)
    physics = cfg.physics(grid)
    nz = grid.nz
    rng = np.random.default_rng(cfg.initial["seed"])
    z = grid.z
    entries = []

    family = [eq.theta_star * (1 + 0.3 * rng.uniform(-1, 1) * np.cos(np.pi * z) + 0.1 * rng.uniform(-1, 1) * np.cos(2 * np.pi * z)) for _ in range(samples)]
    norm_err = max(abs(g.vertical_mean(thermo.Bhat(t)) - 1.0) for t in family)
    entries.append(_entry("normalization", norm_err, 5.0 / nz**2, norm_err <= 5.0 / nz**2))

    theta0 = family[0]
    h = np.cos(np.pi * z) * (1 + z)
    fd = (thermo.Bhat(theta0 + 1e-4 * h) - thermo.Bhat(theta0 - 1e-4 * h)) / 2e-4
    exact = thermo.frechet_DBhat(theta0, h)
    rel = float(np.max(np.abs(fd - exact)) / np.max(np.abs(exact)))
    entries.append(_entry("frechet_derivative", rel, 1e-6, rel <= 1e-6))

    f = rng.standard_normal((4, 3, nz))
    proj = float(np.max(np.abs(linear.apply_P(linear.apply_P(f, eq), eq) - linear.apply_P(f, eq))))
    entries.append(_entry("projection_idempotent", proj, 1e-12, proj <= 1e-12))
    inv = float(np.max(np.abs(linear.apply_L(linear.apply_L_inverse(f, eq), eq) - f)))
    entries.append(_entry("L_Linv_identity", inv, 1e-12, inv <= 1e-12))
    spectrum = linear.spectrum_probe(eq)
    dev = np.minimum(np.abs(np.array(spectrum["eigenvalues"]) - 0.5), np.abs(np.array(spectrum["eigenvalues"]) - 1.0))
    entries.append(
        _entry(
            "Linv_two_point_spectrum",
            spectrum["max_deviation"],
            1e-10,
            spectrum["max_deviation"] <= 1e-10,
            eigenvalues=spectrum["eigenvalues"],
            eigenvalue_deviations=dev.tolist(),
        )
    )

    state0 = scenarios.equilibrium(grid, eq)
    integ = solver.EulerianIntegrator(grid, eq, dataclasses.replace(physics, heat_source=None), 1e-3)
    s = state0
    for _ in range(5):
        s, _ = integ.step(s)
    fixed = max(perturbation_norms(eq, s).values())
    entries.append(_entry("equilibrium_fixed_point", fixed, 1e-12, fixed <= 1e-12))

    init = cfg.initial
    state = scenarios.build(init["scenario"], grid, eq, init["eps"], init["seed"])
    p = thermo.pressure(thermo.surface_pressure(state.rho_bar, state.theta), state.theta)
    hyd = float(np.max(np.abs(g.dz(p) + thermo.density(state.rho_bar, state.theta))))
    bound = HYDROSTATIC_CONSTANT / nz**2
    entries.append(_entry("hydrostatic_residual", hyd, bound, hyd <= bound))

    tend = solver.tendencies_eulerian(grid, state, physics)
    res = residual_full_system(grid, state, tend, physics)
    resid = max(float(np.max(np.abs(v))) for v in res.values())
    entries.append(_entry("tendency_residual", resid, 1e-10, resid <= 1e-10))
    w = vertical_velocity(grid, state, tend.d_rho_bar, tend.d_theta)
    cont = float(np.max(np.abs(averaged_continuity_residual(grid, state, tend.d_rho_bar, tend.d_theta))))
    wtop = float(np.max(np.abs(w[..., -1])))
    entries.append(_entry("lid_vertical_velocity", wtop, 10 * cont + 1e-14, wtop <= 10 * cont + 1e-14))
    bottom = float(np.max(np.abs(w[..., 0])))
    entries.append(_entry("ground_vertical_velocity", bottom, 0.0, bottom == 0.0))

    eps = max(init["eps"], 1e-3)
    lag, ltend = scenarios.perturbation(grid, eq, eps)
    report = termwise_audit(grid, lag, ltend, physics, amplitude=eps, warn=False)
    for name, tot in report["totals"].items():
        tol = tot["tolerance"]
        entries.append(
            _entry(f"remainder_{name}_derived_vs_definitional", tot["derived_vs_definitional"], tol,
                   tot["derived_vs_definitional"] <= tol)
        )
        mismatched = sorted(k for k, v in report["terms"].items() if k.startswith(name + ".") and v > tol)
        entries.append(
            _entry(f"remainder_{name}_literal_vs_definitional", tot["literal_vs_definitional"], tol, None,
                   flagged_terms=mismatched)
        )
    return entries


@main.command()
@_common
def audit(config_path, out, seed, quiet, debug_beta_scale):
    """Run the invariant suite and print pass/fail with measured values."""
    try:
        cfg = _load(config_path, seed)
    except cfgmod.ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        try:
            entries = audit_suite(cfg, debug_beta_scale)
        except (RegimeError,) + NUMERIC_ERRORS as exc:
            entries = [_entry("suite", None, None, False, error=f"{type(exc).__name__}: {exc}")]
    out_dir = cfg.output_directory(out)
    _write_json(out_dir / "audit.json", {"config": cfg.data, "beta_scale": debug_beta_scale, "entries": entries})
    for e in entries:
        status = "INFO" if e["pass"] is None else ("PASS" if e["pass"] else "FAIL")
        value = "n/a" if e["value"] is None else f"{e['value']:.3e}"
        threshold = "n/a" if e["threshold"] is None else f"{e['threshold']:.3e}"
        line = f"{status:4} {e['name']:<38} value={value} threshold={threshold}"
        if e["name"] == "Linv_two_point_spectrum":
            eig = np.asarray(e["eigenvalues"])
            dev = np.asarray(e["eigenvalue_deviations"])
            for target in (0.5, 1.0):
                near = np.abs(eig - target) <= np.abs(eig - (1.5 - target))
                if near.any():
                    line += f"\n     eigenvalues near {target}: {int(near.sum())}, max deviation {dev[near].max():.2e}"
        if e.get("flagged_terms"):
            line += f" flagged: {', '.join(e['flagged_terms'])}"
        if not quiet or e["pass"] is False:
            click.echo(line)


if __name__ == "__main__":
    main()
