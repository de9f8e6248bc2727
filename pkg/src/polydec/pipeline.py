"""End-to-end reduction: decouple the polynomial maps, embed, fine-tune,
optionally unify, then remove branches one at a time with a model-level
re-optimization after every step.

When a model carries both nonlinear maps the output map is decoupled
and reduced first, so the later state-map work tunes fewer parameters.
Operating points are refreshed from the current model's simulated
trajectories before every function-level stage (configurable).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .benchmarks import (BoucWenParams, DuffingParams, MultisineSpec, VdpParams,
                         add_output_noise, multisine, simulate_bouc_wen,
                         simulate_duffing, simulate_vdp, vdp_truth)
from .decoupling import DecoupleOptions, decouple, sample_operating_points
from .finetune import LmOptions, _stacked_e_rms, levenberg_marquardt, trace_to_csv
from .model import (Dataset, DecoupledMap, PolynomialMap, StateSpaceModel,
                    count_dof, simulate)
from .persist import load_dataset, load_model, save_model
from .reduction import remove_branch, unify_branches

__all__ = [
    "PipelineConfig", "StepRecord", "ReductionReport",
    "run_pipeline", "generate_records", "export_spectrum",
]


@dataclass
class PipelineConfig:
    """Inputs and knobs for one reduction run.

    model and the data fields accept in-memory objects, file paths, or
    generator/benchmark spec dicts; stop_threshold bounds the validation
    e_rms (training e_rms when no validation data is given) past which
    the last removal is rolled back and the loop stops.
    """
    model: object = None
    train: object = None
    validation: object = None
    out_dir: object = None
    decouple: object = None
    unify: bool = False
    target_r: int = 1
    target_r_y: int = 1
    stop_threshold: float | None = None
    refresh_points: bool = True
    finetune: object = None
    finetune_max_iter: int = 100
    removal_max_iter: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.target_r < 1 or self.target_r_y < 1:
            raise ValueError("branch targets must be at least 1")
        if self.stop_threshold is not None and self.stop_threshold <= 0:
            raise ValueError("stop_threshold must be positive")

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ValueError("pipeline config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown pipeline config keys: {sorted(extra)}")
        return cls(**doc)


@dataclass
class StepRecord:
    stage: str           # decouple | finetune | unify | remove
    target: str          # which map the stage acted on: state | output | model
    r_x: int | None
    r_y: int | None
    e_rms_train: float
    e_rms_val: float | None
    dof: int | None
    e_cpd: float | None = None
    e_f: float | None = None
    model_path: str | None = None


@dataclass
class ReductionReport:
    records: list = field(default_factory=list)
    final_model: StateSpaceModel | None = None
    final_model_path: str | None = None
    stop_reason: str = "target_reached"


class _StageInstability(Exception):
    pass


def _as_opts(value, cls):
    if value is None:
        return cls()
    if isinstance(value, cls):
        return value
    if isinstance(value, dict):
        return cls(**value)
    raise TypeError(f"expected {cls.__name__}, dict or None, got {type(value).__name__}")


def _resolve_model(spec):
    if isinstance(spec, StateSpaceModel):
        return spec
    if isinstance(spec, (str, Path)):
        return load_model(spec)
    if isinstance(spec, dict):
        system = spec.get("system")
        if system == "vdp":
            return vdp_truth(VdpParams(**spec.get("params", {})))
        raise ValueError(f"no closed-form truth model for system {system!r}")
    raise TypeError("model must be a StateSpaceModel, a path, or a benchmark spec")


def _resolve_records(spec):
    if spec is None:
        return None
    if isinstance(spec, Dataset):
        return [spec]
    if isinstance(spec, (str, Path)):
        return [load_dataset(spec)]
    if isinstance(spec, dict):
        return generate_records(spec)
    out = []
    for item in spec:
        out.extend(_resolve_records(item))
    return out


def generate_records(spec):
    """Build excitation/response records from a generator spec dict.

    Keys: system (vdp | boucwen | duffing), f0, fs, lines, max_line,
    rms or amplitude, realizations, seed, settle_periods, snr_db,
    params (system parameter overrides).  Returns a list of Datasets,
    one per realization.
    """
    spec = dict(spec)
    system = spec.pop("system")
    params = spec.pop("params", {})
    snr_db = spec.pop("snr_db", None)
    settle = spec.pop("settle_periods", 1)
    seed = spec.pop("seed", 0)
    if system == "vdp":
        vp = VdpParams(**params)
        fs = spec.pop("fs", 1.0 / vp.ts)
        if abs(fs * vp.ts - 1.0) > 1e-9:
            vp = VdpParams(epsilon=vp.epsilon, omega0=vp.omega0, ts=1.0 / fs)
    else:
        if "fs" not in spec:
            raise ValueError(f"fs is required for system {system!r}")
        fs = spec.pop("fs")
    ms = MultisineSpec(fs=fs, seed=seed, **spec)
    u_all = multisine(ms)
    records = []
    for i, u in enumerate(u_all):
        if system == "vdp":
            ds, _ = simulate_vdp(vp, u, settle_periods=settle)
        elif system == "boucwen":
            ds = simulate_bouc_wen(BoucWenParams(**params), u, fs,
                                   settle_periods=settle)
        elif system == "duffing":
            ds = simulate_duffing(DuffingParams(**params), u, fs,
                                  settle_periods=settle)
        else:
            raise ValueError(f"unknown system {system!r}")
        if snr_db is not None:
            ds = add_output_noise(ds, snr_db, seed=seed + 7919 + i)
        records.append(ds)
    return records


def _with_nl(model, which, nl):
    kw = {"state_nl": model.state_nl, "output_nl": model.output_nl}
    kw[which + "_nl"] = nl
    return StateSpaceModel(model.A, model.B, model.C, model.D,
                           sample_period=model.sample_period, **kw)


def _trajectory_points(model, records, nl, opts, seed, bound_factor):
    """Operating points from the model's own trajectories on the
    training records."""
    rows = []
    for ds in records:
        x0 = ds.x0 if (ds.x0 is not None and ds.x0.size == model.n) else None
        ref = float(np.sqrt(np.mean(ds.y ** 2)))
        res = simulate(model, ds.u, x0=x0,
                       y_bound=bound_factor * ref if ref > 0 else None)
        if not res.stable:
            raise _StageInstability("operating-point refresh hit an unstable simulation")
        vals = res.x if nl.n_in == model.n else np.hstack([res.x, ds.u])
        rows.append(vals)
    return sample_operating_points(np.vstack(rows), n_points=opts.n_points,
                                   mode=opts.point_mode, seed=seed)


def run_pipeline(config):
    """Run the full reduction and return a ReductionReport.

    Every stage appends a record with the model's current branch counts,
    errors and DOF, and (with out_dir set) persists the stage's model.
    An unstable stage aborts the run: the report keeps the records so
    far, stop_reason reads "instability" and the last good model is the
    final one.  A stop_threshold breach rolls the last removal back.
    """
    model = _resolve_model(config.model)
    train = _resolve_records(config.train)
    if not train:
        raise ValueError("pipeline needs training data")
    val = _resolve_records(config.validation)
    dec_base = _as_opts(config.decouple, DecoupleOptions)
    lm_base = _as_opts(config.finetune, LmOptions)
    out = None
    if config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)

    probe = train[0]
    if probe.n_samples > 512:
        probe = Dataset(probe.u[:512], probe.y[:512], probe.sample_rate,
                        x0=probe.x0)

    report = ReductionReport()
    stage_no = 0
    points_cache = {}

    def errors(m):
        tr = _stacked_e_rms(m, train, lm_base.settle_samples, lm_base.periodic,
                            lm_base.bound_factor)
        va = None
        if val is not None:
            va = _stacked_e_rms(m, val, lm_base.settle_samples, lm_base.periodic,
                                lm_base.bound_factor)
        return tr, va

    def safe_dof(m):
        try:
            return count_dof(m, probe)
        except (ValueError, FloatingPointError):
            return None

    def branch_counts(m):
        r_x = m.state_nl.r if isinstance(m.state_nl, DecoupledMap) else None
        r_y = m.output_nl.r if isinstance(m.output_nl, DecoupledMap) else None
        return r_x, r_y

    def push(stage, target, m, e_cpd=None, e_f=None, trace=None):
        nonlocal stage_no
        tr, va = errors(m)
        r_x, r_y = branch_counts(m)
        path = None
        if out is not None:
            path = str(out / f"{stage_no:02d}_{stage}_{target}.json")
            save_model(m, path)
            if trace is not None and trace.rows:
                trace_to_csv(trace, out / f"{stage_no:02d}_{stage}_{target}_trace.csv")
        rec = StepRecord(stage=stage, target=target, r_x=r_x, r_y=r_y,
                         e_rms_train=tr, e_rms_val=va, dof=safe_dof(m),
                         e_cpd=e_cpd, e_f=e_f, model_path=path)
        report.records.append(rec)
        stage_no += 1
        return rec

    def next_seed():
        return config.seed + 1013 * stage_no

    def points_for(m, which):
        nl = m.state_nl if which == "state" else m.output_nl
        if not config.refresh_points and which in points_cache:
            return points_cache[which]
        pts = _trajectory_points(m, train, nl, dec_base, next_seed(),
                                 lm_base.bound_factor)
        points_cache[which] = pts
        return pts

    def finetune(m, max_iter):
        lm = replace(lm_base, max_iter=max_iter, validation=val)
        return levenberg_marquardt(m, train, lm)

    def threshold_metric(rec):
        return rec.e_rms_val if rec.e_rms_val is not None else rec.e_rms_train

    tr0, _ = errors(model)
    if not np.isfinite(tr0):
        raise ValueError("initial model simulation is unstable on the training data")
    push("initial", "model", model)

    try:
        for which, target_r in (("output", config.target_r_y),
                                ("state", config.target_r)):
            nl = model.output_nl if which == "output" else model.state_nl
            if nl is None:
                continue
            if isinstance(nl, PolynomialMap):
                pts = points_for(model, which)
                dec_opts = replace(dec_base, seed=next_seed())
                result = decouple(nl, pts, dec_opts)
                model_c = _with_nl(model, which, result.map)
                push("decouple", which, model_c, e_cpd=result.e_cpd,
                     e_f=result.e_f.aggregate_ef)
                model_c, trace = finetune(model_c, config.finetune_max_iter)
                push("finetune", which, model_c, trace=trace)
                model = model_c
            if which == "state" and config.unify:
                dm = model.state_nl
                if isinstance(dm, DecoupledMap) and not dm.unified:
                    pts = points_for(model, "state")
                    uni, rep = unify_branches(dm, pts.points)
                    model_c = _with_nl(model, "state", uni)
                    push("unify", "state", model_c, e_f=rep.e_f.aggregate_ef)
                    model_c, trace = finetune(model_c, config.finetune_max_iter)
                    push("finetune", "state", model_c, trace=trace)
                    model = model_c
            dm = model.output_nl if which == "output" else model.state_nl
            while isinstance(dm, DecoupledMap) and dm.r > target_r:
                pts = points_for(model, which)
                reduced, rep = remove_branch(dm, pts.points, refit="linear")
                model_c = _with_nl(model, which, reduced)
                push("remove", which, model_c, e_f=rep.e_f.aggregate_ef)
                model_c, trace = finetune(model_c, config.removal_max_iter)
                rec = push("finetune", which, model_c, trace=trace)
                if (config.stop_threshold is not None
                        and threshold_metric(rec) > config.stop_threshold):
                    report.stop_reason = "threshold"
                    break
                model = model_c
                dm = model.output_nl if which == "output" else model.state_nl
            if report.stop_reason == "threshold":
                break
    except _StageInstability:
        report.stop_reason = "instability"
    except ValueError as exc:
        if "unstable" in str(exc):
            report.stop_reason = "instability"
        else:
            raise

    report.final_model = model
    if out is not None:
        report.final_model_path = str(out / "final.json")
        save_model(model, report.final_model_path)
        rows = [vars(r).copy() for r in report.records]
        (out / "report.json").write_text(json.dumps(
            {"stop_reason": report.stop_reason, "records": rows}, indent=1) + "\n")
    return report


# ---------------------------------------------------------------------------
# spectrum export

def export_spectrum(y_seq, fs, path=None):
    """One-sided spectrum of each channel: (freqs, magnitudes in dB).

    Magnitudes follow the half-amplitude convention |fft(y)/N|, so a
    cosine of amplitude 2 shows magnitude 1 (0 dB) at its bin.  Zero
    bins map to -inf.  With path given, rows (freq_hz, mag_db per
    channel) are written as CSV up to fs/2.
    """
    y = np.asarray(y_seq, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    n = y.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples")
    spec = np.abs(np.fft.rfft(y, axis=0)) / n
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(spec)
    if path is not None:
        header = ",".join(["freq_hz"] + [f"mag_db_y{j + 1}"
                                         for j in range(y.shape[1])])
        with open(path, "w", newline="") as fh:
            fh.write(header + "\n")
            for i in range(freqs.size):
                fh.write(",".join([repr(float(freqs[i]))]
                                  + [repr(float(v)) for v in db[i]]) + "\n")
    return freqs, db
