"""Mechanical reading of single-branch models.

The branch input z of a one-branch model is regressed on the simulated
output and its time derivative; the coefficient direction tells whether
the nonlinearity acts on position (spring), velocity (damper) or both.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DecoupledMap, simulate

__all__ = [
    "ClassifyOptions", "ClassificationResult",
    "finite_difference_derivative", "decompose_z", "classify", "classify_model",
]


@dataclass
class ClassifyOptions:
    conclusive_threshold: float = 0.95
    component_threshold: float = 0.05
    include_accel: bool = False


@dataclass
class ClassificationResult:
    """Raw regression numbers plus the thresholded label."""
    theta_z: np.ndarray
    theta_raw: np.ndarray
    precision: float
    label: str
    thresholds: ClassifyOptions = field(default_factory=ClassifyOptions)


def finite_difference_derivative(y, fs):
    """Time derivative of a sampled signal: central differences inside,
    one-sided at both ends."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 3:
        raise ValueError("need at least 3 samples for a derivative estimate")
    dy = np.empty_like(y)
    dy[1:-1] = (y[2:] - y[:-2]) * (fs / 2.0)
    dy[0] = (y[1] - y[0]) * fs
    dy[-1] = (y[-1] - y[-2]) * fs
    return dy


def _regress(z_seq, y_seq, fs, include_accel):
    z = np.asarray(z_seq, dtype=float)
    if z.ndim == 2:
        if z.shape[1] != 1:
            raise ValueError("z must be a single branch signal")
        z = z[:, 0]
    y = np.asarray(y_seq, dtype=float)
    if y.ndim == 2:
        if y.shape[1] != 1:
            raise ValueError("y must be a single output")
        y = y[:, 0]
    if z.size != y.size:
        raise ValueError(f"z has {z.size} samples, y has {y.size}")
    if z.size < 3:
        raise ValueError("need at least 3 samples")
    dy = finite_difference_derivative(y, fs)
    cols = [y, dy]
    if include_accel:
        cols.append(finite_difference_derivative(dy, fs))
    X = np.column_stack(cols)[1:]
    zt = z[1:]
    rms_z = float(np.sqrt(np.mean(zt ** 2)))
    if rms_z == 0.0:
        raise ValueError("branch signal is identically zero")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("regressor is rank deficient (collinear columns)")
    theta, *_ = np.linalg.lstsq(X, zt, rcond=None)
    resid = zt - X @ theta
    precision = 1.0 - float(np.sqrt(np.mean(resid ** 2))) / rms_z
    return theta, precision


def decompose_z(z_seq, y_seq, fs, include_accel=False):
    """Regress the branch input on [y, dy/dt] (optionally d2y/dt2).

    The first sample is dropped so the regression runs over L-1 rows
    where the derivative stencil is two-sided or backward.  Returns
    (theta_z, precision): theta_z is the unit-norm coefficient vector
    and precision = 1 - rms(z - X theta)/rms(z).

    Raises on multi-column z, short signals, an identically zero z, or a
    rank-deficient regressor (y and its derivative collinear).
    """
    theta, precision = _regress(z_seq, y_seq, fs, include_accel)
    norm = np.linalg.norm(theta)
    theta_z = theta / norm if norm > 0 else theta.copy()
    return theta_z, precision


def classify(theta_z, precision, opts=None):
    """Label a decomposition: below the conclusive precision threshold
    nothing is claimed; otherwise a near-zero derivative coefficient
    means spring, a near-zero position coefficient means damper."""
    opts = opts or ClassifyOptions()
    theta_z = np.asarray(theta_z, dtype=float).ravel()
    if theta_z.size < 2:
        raise ValueError("theta_z needs position and velocity components")
    if precision < opts.conclusive_threshold:
        return "inconclusive"
    if abs(theta_z[1]) < opts.component_threshold:
        return "spring"
    if abs(theta_z[0]) < opts.component_threshold:
        return "damper"
    return "mixed"


def classify_model(model, dataset, opts=None):
    """Simulate a one-branch model on a record and classify its branch
    input; uses the simulated output, not the measured one."""
    opts = opts or ClassifyOptions()
    nl = model.state_nl
    if not isinstance(nl, DecoupledMap) or nl.r != 1:
        raise ValueError("classification needs a single-branch decoupled state map")
    if model.output_nl is not None:
        raise ValueError("classification expects a linear output equation")
    if model.p != 1:
        raise ValueError("classification needs a scalar output")
    x0 = dataset.x0 if (dataset.x0 is not None and dataset.x0.size == model.n) else None
    res = simulate(model, dataset.u, x0=x0)
    if not res.stable:
        raise ValueError("model simulation is unstable on this record")
    z = res.z_x[:, 0]
    theta_raw, precision = _regress(z, res.y[:, 0], dataset.sample_rate,
                                    opts.include_accel)
    norm = np.linalg.norm(theta_raw)
    theta_z = theta_raw / norm if norm > 0 else theta_raw.copy()
    label = classify(theta_z, precision, opts)
    return ClassificationResult(theta_z=theta_z, theta_raw=theta_raw,
                                precision=precision, label=label, thresholds=opts)
