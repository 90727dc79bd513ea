"""``wdepth`` command line: spectrum fit, atom number, bound curves, depth
certification and simulation.

Exit codes: 0 success, 2 input or validation error, 3 numeric failure.
"""

from __future__ import annotations

import csv
import datetime as _dt
import functools
import hashlib
import io
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import geometry, photonstats, simulator, spectroscopy, witness

EXIT_INPUT = 2
EXIT_NUMERIC = 3

DEPTH_FIELDS = (
    "storage_time_ns", "p1", "p1_err", "g2c", "g2c_err", "p2", "p2_err",
    "m_min", "depth", "margin", "status",
)


class InputError(Exception):
    pass


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(ctx, command, inputs, config):
    return {
        "command": command,
        "tool_version": __version__,
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        "config": config,
        "outputs": [ctx.obj["output"]] if ctx.obj["output"] else [],
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }


def _emit(ctx, text, command, inputs=(), config=None, sidecar=None):
    out = ctx.obj["output"]
    if out is None:
        click.echo(text, nl=False)
        return
    Path(out).write_text(text)
    manifest = _manifest(ctx, command, inputs, config or {})
    Path(out + ".manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if sidecar is not None:
        Path(out + ".meta.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    _info(ctx, f"wrote {out}")


def _info(ctx, msg):
    if not ctx.obj["quiet"]:
        click.echo(msg, err=True)


def _guarded(fn):
    """Map library exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (spectroscopy.FitError, witness.InfeasibleBound,
                spectroscopy.QuadratureError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
        except KeyError as exc:
            click.echo(f"error: missing field {exc}", err=True)
            sys.exit(EXIT_INPUT)
        except (InputError, ValueError, TypeError, json.JSONDecodeError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INPUT)

    return wrapper


def _load_json(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise InputError(f"{path}: expected a JSON object")
    return cfg


@click.group()
@click.version_option(__version__, prog_name="wdepth")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None,
              help="Write the result here instead of stdout (adds a manifest sidecar).")
@click.option("--seed", type=int, default=None, help="Override the simulation RNG seed.")
@click.option("--quiet", "-q", is_flag=True, help="Suppress progress messages.")
@click.pass_context
def main(ctx, output, seed, quiet):
    """Entanglement-depth analysis pipeline."""
    ctx.ensure_object(dict)
    ctx.obj.update(output=output, seed=seed, quiet=quiet)


# --- spectroscopy / geometry -----------------------------------------------------


@main.command("fit-spectrum")
@click.argument("input_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("lines_json", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@_guarded
def fit_spectrum_cmd(ctx, input_csv, lines_json):
    """Fit a transmission spectrum and report the atomic density."""
    with open(input_csv, newline="") as fh:
        samples = spectroscopy.read_spectrum(fh)
    cfg = _load_json(lines_json)
    lines = spectroscopy.LineTable.from_dict(cfg)
    consts = spectroscopy.PhysicalConstants.from_dict(cfg)
    fit = spectroscopy.fit_spectrum(samples, lines)
    density = spectroscopy.density_from_fit(fit, consts)
    doc = fit.to_dict()
    doc["density_m3"] = density
    _emit(ctx, json.dumps(doc, indent=2) + "\n", "fit-spectrum",
          [input_csv, lines_json], cfg)


@main.command("atom-number")
@click.argument("geometry_json", type=click.Path(exists=True, dir_okay=False))
@click.option("--density", type=float, required=True, help="Number density in m^-3.")
@click.pass_context
@_guarded
def atom_number_cmd(ctx, geometry_json, density):
    """Interaction volume and total atom number from a beam geometry."""
    cfg = _load_json(geometry_json)
    geom = geometry.EnsembleGeometry.from_dict(cfg)
    volume = geometry.interaction_volume(geom)
    doc = {
        "volume_m3": volume,
        "n_atoms": geometry.atom_number(density, volume),
        "provenance": geom.provenance,
    }
    _emit(ctx, json.dumps(doc, indent=2) + "\n", "atom-number", [geometry_json],
          {"geometry": cfg, "density_m3": density})


# --- witness -----------------------------------------------------------------------


@main.command("bound-curve")
@click.option("--m", "m", type=int, required=True, help="Number of separable groups.")
@click.option("--p1-min", type=float, default=0.001, show_default=True)
@click.option("--p1-max", type=float, default=0.999, show_default=True)
@click.option("--points", type=int, default=200, show_default=True)
@click.pass_context
@_guarded
def bound_curve_cmd(ctx, m, p1_min, p1_max, points):
    """Tabulate the p2 lower bound for M separable groups."""
    if points < 1:
        raise InputError("--points must be at least 1")
    if m < 1:
        raise InputError("--m must be at least 1")
    if not 0.0 < p1_min <= p1_max < 1.0 or (points > 1 and p1_min == p1_max):
        raise InputError("need 0 < p1-min < p1-max < 1")
    grid = np.linspace(p1_min, p1_max, points) if points > 1 else [p1_min]
    curve = witness.bound_curve(m, grid)
    if curve.infeasible:
        _info(ctx, f"{len(curve.infeasible)} grid points infeasible for M={m} "
                   f"(from p1={curve.infeasible[0]!r})")
    if not curve.points:
        raise witness.InfeasibleBound(p1_min, m)
    buf = io.StringIO()
    curve.write_csv(buf)
    _emit(ctx, buf.getvalue(), "bound-curve", [],
          {"m": m, "p1_min": p1_min, "p1_max": p1_max, "points": points})


def _parse_budget(text):
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError:
        raise InputError(f"bad --loss-budget {text!r}") from None
    if len(parts) != 2:
        raise InputError("--loss-budget takes TRANSMISSION,EFFICIENCY")
    return photonstats.LossBudget(*parts)


def _depth_rows(records, budget, n_atoms, m_max, with_uncertainty):
    rows = []
    for rec in records:
        p1 = photonstats.correct_losses(photonstats.estimate_p1(rec), budget)
        row = {"storage_time_ns": rec.storage_time, "p1": p1.value, "p1_err": p1.std_err}
        try:
            g2 = photonstats.estimate_g2_conditional(rec)
        except photonstats.InsufficientStatistics:
            g2 = None
        row.update(g2c=g2 and g2.value, g2c_err=g2 and g2.std_err)
        if p1.value <= 0 or g2 is None:
            row.update(p2=None, p2_err=None, m_min=None, depth=None, margin=None,
                       status="no-signal")
            rows.append(row)
            continue
        pair = photonstats.to_projection_pair(p1, g2)
        res = witness.certify(pair, n_atoms, m_max, with_uncertainty=with_uncertainty)
        row.update(p2=pair.p2, p2_err=pair.p2_err, m_min=res.m_min, depth=res.depth,
                   margin=res.margin,
                   status="certified" if res.certified else "uncertified")
        rows.append(row)
    return rows


def _depth_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DEPTH_FIELDS)
    for row in rows:
        w.writerow([row["status"] if k == "status" else _fmt(row[k]) for k in DEPTH_FIELDS])
    return buf.getvalue()


@main.command("certify")
@click.argument("counts_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--atoms", type=float, required=True, help="Total atom number N.")
@click.option("--loss-budget", default="1,1", show_default=True,
              help="Channel transmission and detector efficiency, comma separated.")
@click.option("--m-max", type=int, default=witness.DEFAULT_M_MAX, show_default=True)
@click.option("--with-uncertainty", is_flag=True,
              help="Certify the worst corner of the one-sigma error box.")
@click.pass_context
@_guarded
def certify_cmd(ctx, counts_csv, atoms, loss_budget, m_max, with_uncertainty):
    """Certified group count and depth for every row of a counts file."""
    budget = _parse_budget(loss_budget)
    with open(counts_csv, newline="") as fh:
        records = photonstats.read_records(fh)
    if not records:
        raise InputError(f"{counts_csv}: no data rows")
    rows = _depth_rows(records, budget, atoms, m_max, with_uncertainty)
    _emit(ctx, _depth_csv(rows), "certify", [counts_csv],
          {"atoms": atoms, "loss_budget": loss_budget, "m_max": m_max,
           "with_uncertainty": with_uncertainty})


# --- simulation ------------------------------------------------------------------


def _sim_config(ctx, path, seed):
    cfg = simulator.SimulationConfig.from_dict(_load_json(path))
    seed = seed if seed is not None else ctx.obj["seed"]
    if seed is not None:
        cfg = replace(cfg, rng_seed=seed)
    return cfg


@main.command("simulate")
@click.argument("sim_json", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.pass_context
@_guarded
def simulate_cmd(ctx, sim_json, seed):
    """Generate coincidence counts in the certify input format."""
    cfg = _sim_config(ctx, sim_json, seed)
    buf = io.StringIO()
    photonstats.write_records(buf, simulator.simulate(cfg))
    _emit(ctx, buf.getvalue(), "simulate", [sim_json], cfg.to_dict(),
          sidecar=simulator.metadata(cfg))


@main.command("depth-evolution")
@click.argument("sim_json", type=click.Path(exists=True, dir_okay=False))
@click.option("--atoms", type=float, required=True, help="Total atom number N.")
@click.option("--m-max", type=int, default=witness.DEFAULT_M_MAX, show_default=True)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.pass_context
@_guarded
def depth_evolution_cmd(ctx, sim_json, atoms, m_max, seed):
    """Simulate, correct losses with the configured budget, and certify."""
    cfg = _sim_config(ctx, sim_json, seed)
    records = simulator.simulate(cfg)
    rows = _depth_rows(records, cfg.loss_budget, atoms, m_max, False)
    _emit(ctx, _depth_csv(rows), "depth-evolution", [sim_json],
          {"simulation": cfg.to_dict(), "atoms": atoms, "m_max": m_max},
          sidecar=simulator.metadata(cfg))


def read_depth_csv(text):
    """Parse a depth table back into dicts (``m_min`` as int or None)."""
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        row = dict(row)
        row["m_min"] = int(row["m_min"]) if row["m_min"] else None
        for k in ("storage_time_ns", "p1", "p2", "g2c"):
            row[k] = float(row[k]) if row[k] else math.nan
        out.append(row)
    return out


if __name__ == "__main__":
    main()
