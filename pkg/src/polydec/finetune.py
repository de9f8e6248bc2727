"""Full-model output-error minimization.

Residuals are simulation errors stacked over one or more records, the
Jacobian is a forward finite difference over the packed parameter
vector, and the Levenberg-Marquardt loop rejects any step whose
simulation leaves the stable envelope.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._lm import LmInfo, minimize_lm
from .model import Dataset, ParamVector, _sim_input, pack, simulate, unpack

__all__ = [
    "LmOptions", "FinetuneTrace", "ParamVector", "stability_guard",
    "output_jacobian", "levenberg_marquardt", "trace_to_csv",
]


@dataclass
class LmOptions:
    """Knobs for the model-level optimizer.

    lambda_down is a multiplier below one (applied after an accepted
    step); validation is a Dataset or list used for reporting only and
    never influences the optimization.
    """
    max_iter: int = 100
    lambda_init: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    gtol: float = 1e-14
    steptol: float = 1e-12
    fd_step: float = 1e-7
    bound_factor: float = 1e3
    settle_samples: int = 0
    periodic: bool = False
    validation: object = None

    def __post_init__(self):
        if not (self.lambda_up > 1.0 > self.lambda_down > 0.0):
            raise ValueError("need lambda_up > 1 > lambda_down > 0")
        if self.lambda_init <= 0 or self.fd_step <= 0:
            raise ValueError("lambda_init and fd_step must be positive")


@dataclass
class FinetuneTrace:
    """Per-accepted-iteration rows plus the optimizer summary."""
    rows: list = field(default_factory=list)
    info: LmInfo | None = None
    e_rms_train: float = np.nan
    e_rms_val: float | None = None
    flagged_params: list = field(default_factory=list)


def stability_guard(y_sim, reference_rms, bound_factor=1e3):
    """True iff the simulated output stays within bound_factor times the
    reference rms (inclusive) and contains no non-finite values."""
    y = np.asarray(y_sim, dtype=float)
    if not np.all(np.isfinite(y)):
        return False
    if y.size == 0:
        return True
    return bool(np.abs(y).max() <= bound_factor * reference_rms)


def _records(data):
    if isinstance(data, Dataset):
        return [data]
    recs = list(data)
    if not recs or not all(isinstance(d, Dataset) for d in recs):
        raise TypeError("expected a Dataset or a non-empty list of Datasets")
    return recs


def _score_sim(model, dataset, settle, periodic, bound_factor):
    """Simulate one record and align it with the measured output.

    Returns (y_sim, y_ref) over the scored samples, or None when the
    simulation leaves the stable envelope.
    """
    u, s = _sim_input(dataset, model, settle, periodic)
    x0 = dataset.x0 if (dataset.x0 is not None and dataset.x0.size == model.n) else None
    ref = float(np.sqrt(np.mean(dataset.y ** 2)))
    res = simulate(model, u, x0=x0,
                   y_bound=bound_factor * ref if ref > 0 else None)
    if not res.stable:
        return None
    y = res.y[s:]
    y_ref = dataset.y if periodic else dataset.y[s:]
    return y, y_ref


def _stacked_residual(model, records, settle, periodic, bound_factor):
    parts = []
    for ds in records:
        pair = _score_sim(model, ds, settle, periodic, bound_factor)
        if pair is None:
            return None
        y, y_ref = pair
        parts.append((y_ref - y).ravel())
    return np.concatenate(parts)


def _stacked_e_rms(model, records, settle, periodic, bound_factor):
    num = den = 0.0
    for ds in records:
        pair = _score_sim(model, ds, settle, periodic, bound_factor)
        if pair is None:
            return float("inf")
        y, y_ref = pair
        num += float(np.sum((y - y_ref) ** 2))
        den += float(np.sum(y_ref ** 2))
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return float(np.sqrt(num / den))


def output_jacobian(model, data, theta=None, fd_step=1e-7, settle_samples=0,
                    periodic=False, bound_factor=1e3):
    """Forward-difference Jacobian of the stacked simulated outputs with
    respect to the packed parameters.

    Step per parameter is fd_step * max(1, |theta_i|).  Returns
    (J, flagged): J has one row per scored sample and output, stacked
    over records; a perturbation that destabilizes the simulation leaves
    a zero column whose index lands in flagged.

    Raises ValueError when the baseline model itself is unstable.
    """
    records = _records(data)
    if theta is None:
        theta = pack(model).values
    else:
        theta = np.asarray(theta, dtype=float).ravel()
    m0 = unpack(model, theta)
    base = []
    for ds in records:
        pair = _score_sim(m0, ds, settle_samples, periodic, bound_factor)
        if pair is None:
            raise ValueError("baseline model is unstable on the data")
        base.append(pair[0].ravel())
    y0 = np.concatenate(base)

    J = np.zeros((y0.size, theta.size))
    flagged = []
    for i in range(theta.size):
        h = fd_step * max(1.0, abs(theta[i]))
        tp = theta.copy()
        tp[i] += h
        mp = unpack(model, tp)
        cols = []
        for ds in records:
            pair = _score_sim(mp, ds, settle_samples, periodic, bound_factor)
            if pair is None:
                cols = None
                break
            cols.append(pair[0].ravel())
        if cols is None:
            flagged.append(i)
            continue
        J[:, i] = (np.concatenate(cols) - y0) / h
    return J, flagged


def levenberg_marquardt(model, train, opts=None):
    """Minimize the summed squared simulation error over the packed
    parameters.

    A candidate step is accepted only when the cost decreases and every
    training record simulates inside the stable envelope; otherwise
    lambda grows and the step is re-solved.  Returns (best_model, trace)
    where the trace rows carry iter, V_LS (mean squared error per
    sample), lambda and relative rms errors on train and validation
    data.  Validation data never influences the optimization.
    """
    opts = opts or LmOptions()
    records = _records(train)
    val_records = _records(opts.validation) if opts.validation is not None else None
    template = model
    th0 = pack(model).values

    ref_sse = 0.0
    n_total = 0
    for ds in records:
        y_ref = ds.y if opts.periodic else ds.y[opts.settle_samples:]
        ref_sse += float(np.sum(y_ref ** 2))
        n_total += y_ref.shape[0]
    if ref_sse == 0.0:
        raise ValueError("training output is identically zero")

    def residual(th):
        return _stacked_residual(unpack(template, th), records,
                                 opts.settle_samples, opts.periodic,
                                 opts.bound_factor)

    trace = FinetuneTrace()
    flagged_seen = set()

    def jacobian(th):
        J, flagged = output_jacobian(template, records, theta=th,
                                     fd_step=opts.fd_step,
                                     settle_samples=opts.settle_samples,
                                     periodic=opts.periodic,
                                     bound_factor=opts.bound_factor)
        flagged_seen.update(flagged)
        return -J

    if residual(th0) is None:
        raise ValueError("initial model simulation is unstable on the training data")

    def on_accept(it, th, cost, lam):
        row = {"iter": it, "V_LS": cost / n_total, "lambda": lam,
               "e_rms_train": float(np.sqrt(cost / ref_sse)),
               "e_rms_val": None}
        if val_records is not None:
            row["e_rms_val"] = _stacked_e_rms(unpack(template, th), val_records,
                                              opts.settle_samples, opts.periodic,
                                              opts.bound_factor)
        trace.rows.append(row)

    x, info = minimize_lm(residual, jacobian, th0, max_iter=opts.max_iter,
                          lam0=opts.lambda_init, lam_up=opts.lambda_up,
                          lam_down=1.0 / opts.lambda_down, gtol=opts.gtol,
                          steptol=opts.steptol, on_accept=on_accept)
    best = unpack(template, x)
    trace.info = info
    trace.e_rms_train = float(np.sqrt(info.cost / ref_sse))
    if val_records is not None:
        trace.e_rms_val = _stacked_e_rms(best, val_records, opts.settle_samples,
                                         opts.periodic, opts.bound_factor)
    trace.flagged_params = sorted(flagged_seen)
    return best, trace


def trace_to_csv(trace, path):
    """Write the per-iteration rows as CSV with a fixed column order."""
    cols = ["iter", "V_LS", "lambda", "e_rms_train", "e_rms_val"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in trace.rows:
            w.writerow(["" if row[c] is None else row[c] for c in cols])
