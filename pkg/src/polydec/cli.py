"""Command-line entry points for the reduction workflow.

Exit codes: 0 on success, 2 when a simulation went unstable and the run
aborted, 1 for schema or configuration problems.  The POLYDEC_LOG
environment variable (debug | info | warning | error) sets log
verbosity; nothing else is read from the environment.
"""
import functools
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .classify import ClassifyOptions, classify_model
from .decoupling import DecoupleOptions, decouple, sample_operating_points
from .finetune import LmOptions, levenberg_marquardt, trace_to_csv
from .persist import (SchemaError, load_dataset, load_map, load_model,
                      save_dataset, save_map, save_model)
from .pipeline import (PipelineConfig, _StageInstability, _trajectory_points,
                       export_spectrum, generate_records, run_pipeline)
from .reduction import reduce_to, unify_branches

log = logging.getLogger("polydec")

# spec/config problems exit 1; keep click's own usage errors on the same code
click.UsageError.exit_code = 1

EXIT_CONFIG = 1
EXIT_UNSTABLE = 2


def _setup_logging():
    name = os.environ.get("POLYDEC_LOG", "warning").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def friendly(fn):
    """Map library errors onto the documented exit codes."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SchemaError as exc:
            _fail(EXIT_CONFIG, str(exc))
        except _StageInstability as exc:
            _fail(EXIT_UNSTABLE, str(exc))
        except ValueError as exc:
            if "unstable" in str(exc):
                _fail(EXIT_UNSTABLE, str(exc))
            _fail(EXIT_CONFIG, str(exc))
        except (OSError, TypeError) as exc:
            _fail(EXIT_CONFIG, str(exc))
    return wrapper


def _load_records(paths):
    return [load_dataset(p) for p in paths]


def _gaussian_points(n_in, npoints, std, seed):
    stats = (np.zeros(n_in), np.full(n_in, std))
    return sample_operating_points(stats, n_points=npoints, seed=seed)


def _write_json(doc, path):
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def _ef_doc(ef):
    if ef is None:
        return None
    return {"per_output": list(ef.per_output_ef), "aggregate": ef.aggregate_ef}


def _map_report(map_):
    if hasattr(map_, "r"):
        return f"decoupled map: r={map_.r}, {map_.n_out} outputs, {map_.n_in} inputs"
    return f"coupled map: {map_.n_out} outputs, {map_.n_in} inputs"


@click.group()
@click.version_option(__version__, prog_name="polydec")
def main():
    """Reduce polynomial nonlinear state-space models to decoupled form."""
    _setup_logging()


@main.command()
@click.option("--system", type=click.Choice(["vdp", "boucwen", "duffing"]),
              required=True)
@click.option("--fs", type=float, default=None,
              help="Sample rate in Hz (defaults to the native rate for vdp).")
@click.option("--f0", type=float, required=True, help="Frequency resolution in Hz.")
@click.option("--lines", type=click.Choice(["odd", "all"]), default="all",
              show_default=True, help="Excited line grid.")
@click.option("--max-line", type=int, required=True,
              help="Highest excited line; the band is [f0, max_line*f0].")
@click.option("--rms", type=float, required=True, help="Input RMS level.")
@click.option("--snr-db", type=float, default=None,
              help="Output SNR in dB; omit for noiseless records.")
@click.option("--realizations", type=int, default=1, show_default=True)
@click.option("--periods", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True,
              help="Directory for the dataset CSVs.")
@friendly
def generate(system, fs, f0, lines, max_line, rms, snr_db, realizations,
             periods, seed, out):
    """Simulate a benchmark system under multisine excitation."""
    spec = {"system": system, "f0": f0, "lines": lines, "max_line": max_line,
            "rms": rms, "realizations": realizations, "periods": periods,
            "seed": seed}
    if fs is not None:
        spec["fs"] = fs
    if snr_db is not None:
        spec["snr_db"] = snr_db
    records = generate_records(spec)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, ds in enumerate(records):
        path = out_dir / f"{system}_r{i:02d}.csv"
        save_dataset(ds, path)
        log.info("wrote %s (%d samples)", path, ds.n_samples)
        click.echo(str(path))


@main.command(name="decouple")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--data", "data_paths", type=click.Path(exists=True, dir_okay=False),
              multiple=True, required=True,
              help="Dataset CSV(s) whose trajectories set the operating points.")
@click.option("--target", type=click.Choice(["state", "output"]), default="state",
              show_default=True)
@click.option("--r", type=int, default=None,
              help="CP rank; scanned automatically when omitted.")
@click.option("--npoints", type=int, default=1000, show_default=True)
@click.option("--lambda", "lambda_grid", default="0,1e-4,1e-2,1",
              show_default=True, help="Comma-separated smoothness weights.")
@click.option("--restarts", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Where to write the decoupled map JSON.")
@click.option("--diagnostics", "diag_path", type=click.Path(dir_okay=False),
              default=None, help="Diagnostics JSON path (default: <out>.diag.json).")
@friendly
def decouple_cmd(model_path, data_paths, target, r, npoints, lambda_grid,
                 restarts, seed, out, diag_path):
    """Decouple one of a model's polynomial maps into univariate branches."""
    model = load_model(model_path)
    nl = model.state_nl if target == "state" else model.output_nl
    if nl is None:
        raise ValueError(f"model has no {target} nonlinearity")
    try:
        grid = tuple(float(v) for v in lambda_grid.split(","))
    except ValueError:
        raise ValueError(f"--lambda must be comma-separated numbers, got {lambda_grid!r}")
    records = _load_records(data_paths)
    opts = DecoupleOptions(r=r, n_points=npoints, lambda_grid=grid,
                           restarts=restarts, seed=seed)
    points = _trajectory_points(model, records, nl, opts, seed,
                                bound_factor=1e3)
    result = decouple(nl, points, opts)
    save_map(result.map, out)
    doc = {"r": result.r,
           "e_cpd": result.e_cpd,
           "kruskal_unique": result.kruskal,
           "e_f": _ef_doc(result.e_f),
           "rank_scan": ([[int(rr), float(e)] for rr, e in result.rank_scan]
                         if result.rank_scan else None),
           "diagnostics": {k: (v if not isinstance(v, np.generic) else v.item())
                           for k, v in result.diagnostics.items()}}
    diag_path = diag_path or str(Path(out).with_suffix("")) + ".diag.json"
    _write_json(doc, diag_path)
    click.echo(f"r={result.r}  e_cpd={result.e_cpd:.3e}  "
               f"e_f={result.e_f.aggregate_ef:.3e}")
    click.echo(str(out))


@main.command()
@click.option("--map", "map_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Decoupled map JSON.")
@click.option("--npoints", type=int, default=1000, show_default=True)
@click.option("--std", type=float, default=1.0, show_default=True,
              help="Standard deviation of the Gaussian evaluation points.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--max-iter", type=int, default=100, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--report", "report_path", type=click.Path(dir_okay=False),
              default=None)
@friendly
def unify(map_path, npoints, std, seed, max_iter, out, report_path):
    """Collapse all branches of a decoupled map onto one shared polynomial."""
    dec = load_map(map_path)
    if not hasattr(dec, "branches"):
        raise ValueError("unify needs a decoupled map, got a coupled one")
    points = _gaussian_points(dec.n_in, npoints, std, seed)
    unified, rep = unify_branches(dec, points.points, max_iter=max_iter)
    save_map(unified, out)
    if report_path is not None:
        _write_json({"candidate": rep.candidate,
                     "alphas": list(np.asarray(rep.alphas, dtype=float))
                     if rep.alphas is not None else None,
                     "betas": list(np.asarray(rep.betas, dtype=float))
                     if rep.betas is not None else None,
                     "e_f_step1": _ef_doc(rep.e_f_step1),
                     "e_f": _ef_doc(rep.e_f),
                     "converged": rep.converged}, report_path)
    click.echo(f"unified e_f={rep.e_f.aggregate_ef:.3e}")
    click.echo(str(out))


@main.command()
@click.option("--map", "map_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Decoupled map JSON.")
@click.option("--to", "r_target", type=int, required=True,
              help="Branch count to reduce to.")
@click.option("--refit", type=click.Choice(["none", "linear", "nonlinear"]),
              default="linear", show_default=True)
@click.option("--npoints", type=int, default=1000, show_default=True)
@click.option("--std", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--report", "report_path", type=click.Path(dir_okay=False),
              default=None)
@friendly
def reduce(map_path, r_target, refit, npoints, std, seed, out, report_path):
    """Remove branches one at a time down to a target count."""
    dec = load_map(map_path)
    if not hasattr(dec, "branches"):
        raise ValueError("reduce needs a decoupled map, got a coupled one")
    points = _gaussian_points(dec.n_in, npoints, std, seed)
    reduced, reports = reduce_to(dec, points.points, r_target, schedule=refit)
    save_map(reduced, out)
    if report_path is not None:
        steps = [{"removed_index": rep.removed_index,
                  "refit": rep.refit,
                  "e_f": _ef_doc(rep.e_f),
                  "candidates": [{"index": c.index,
                                  "e_f_plain": _ef_doc(c.e_f_plain),
                                  "e_f_refit": _ef_doc(c.e_f_refit)}
                                 for c in rep.candidates]}
                 for rep in reports]
        _write_json({"steps": steps}, report_path)
    for rep in reports:
        click.echo(f"removed branch {rep.removed_index}: "
                   f"e_f={rep.e_f.aggregate_ef:.3e}")
    click.echo(str(out))


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--data", "data_paths", type=click.Path(exists=True, dir_okay=False),
              multiple=True, required=True, help="Training dataset CSV(s).")
@click.option("--val-data", "val_paths", type=click.Path(exists=True, dir_okay=False),
              multiple=True, help="Validation dataset CSV(s), reported only.")
@click.option("--max-iter", type=int, default=100, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False),
              default=None, help="Per-iteration trace CSV.")
@friendly
def finetune(model_path, data_paths, val_paths, max_iter, out, trace_path):
    """Minimize simulation error over all model parameters."""
    model = load_model(model_path)
    train = _load_records(data_paths)
    val = _load_records(val_paths) if val_paths else None
    opts = LmOptions(max_iter=max_iter, validation=val)
    best, trace = levenberg_marquardt(model, train, opts)
    save_model(best, out)
    if trace_path is not None:
        trace_to_csv(trace, trace_path)
    msg = f"e_rms_train={trace.e_rms_train:.6e}"
    if trace.e_rms_val is not None:
        msg += f"  e_rms_val={trace.e_rms_val:.6e}"
    click.echo(msg)
    if trace.flagged_params:
        click.echo(f"warning: {len(trace.flagged_params)} parameter directions "
                   "destabilized the finite-difference probes", err=True)
    click.echo(str(out))


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--include-accel", is_flag=True, default=False,
              help="Add an acceleration regressor.")
@friendly
def classify(model_path, data_path, include_accel):
    """Interpret a one-branch model's nonlinearity as spring, damper or mixed."""
    model = load_model(model_path)
    ds = load_dataset(data_path)
    res = classify_model(model, ds, ClassifyOptions(include_accel=include_accel))
    click.echo(json.dumps({
        "label": res.label,
        "precision": res.precision,
        "theta_z": list(np.asarray(res.theta_z, dtype=float)),
        "theta_raw": list(np.asarray(res.theta_raw, dtype=float)),
        "thresholds": {"conclusive": res.thresholds.conclusive_threshold,
                       "component": res.thresholds.component_threshold}},
        indent=1))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Pipeline config JSON.")
@click.option("--deterministic", is_flag=True, default=False,
              help="Limit numeric libraries to one thread for bit-stable runs.")
@friendly
def pipeline(config_path, deterministic):
    """Run the configured decouple/unify/reduce pipeline."""
    try:
        doc = json.loads(Path(config_path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config is not valid JSON: {exc}") from None
    config = PipelineConfig.from_dict(doc)

    def execute():
        return run_pipeline(config)

    if deterministic:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=1):
            report = execute()
    else:
        report = execute()

    for rec in report.records:
        parts = [f"{rec.stage:<9} {rec.target:<7}",
                 f"r_x={rec.r_x if rec.r_x is not None else '-'}",
                 f"r_y={rec.r_y if rec.r_y is not None else '-'}",
                 f"e_rms_train={rec.e_rms_train:.6e}"]
        if rec.e_rms_val is not None:
            parts.append(f"e_rms_val={rec.e_rms_val:.6e}")
        if rec.dof is not None:
            parts.append(f"dof={rec.dof}")
        click.echo("  ".join(parts))
    click.echo(f"stop_reason={report.stop_reason}")
    if report.final_model_path is not None:
        click.echo(report.final_model_path)
    if report.stop_reason == "instability":
        _fail(EXIT_UNSTABLE, "a stage went unstable; kept the last good model")


@main.command()
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Spectrum CSV path.")
@friendly
def spectrum(data_path, out):
    """Export the output spectrum of a dataset as CSV."""
    ds = load_dataset(data_path)
    freqs, _ = export_spectrum(ds.y, ds.sample_rate, out)
    click.echo(f"{freqs.size} bins up to {freqs[-1]:g} Hz")
    click.echo(str(out))


if __name__ == "__main__":
    main()
