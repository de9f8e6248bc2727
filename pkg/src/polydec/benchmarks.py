"""Synthetic benchmark systems and multisine excitation.

Three nonlinear systems with known structure:

- a discrete-time Van der Pol oscillator (polynomial state space by
  construction, so decoupling targets are exact),
- a continuous-time hysteretic Bouc-Wen oscillator integrated by RK4,
- a continuous-time Duffing oscillator integrated by RK4.

The ODE generators treat the excitation record as one period of a periodic
signal: sub-sample values come from Fourier resampling, settle periods are
discarded and the retained steady window is decimated by Fourier truncation
(exact band-limitation, no aliasing).  With settle_periods=0 the transient
response is kept and stride-decimated instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.signal import resample

from .model import Dataset, MonomialBasis, PolynomialMap, StateSpaceModel


@dataclass
class MultisineSpec:
    """Random-phase multisine description.

    lines selects the excited harmonics of f0: "all" or "odd" up to
    max_line, or an explicit array of harmonic numbers.  Exactly one of
    rms (target rms, exact per realization) and amplitude (per-line
    amplitude, no rescale) must be set.
    """
    f0: float
    fs: float
    lines: object = "all"
    max_line: int | None = None
    rms: float | None = 1.0
    amplitude: float | None = None
    seed: int = 0
    periods: int = 1
    realizations: int = 1


def _line_numbers(spec):
    if isinstance(spec.lines, str):
        if spec.max_line is None:
            raise ValueError("max_line is required with lines='all'/'odd'")
        if spec.lines == "all":
            ln = np.arange(1, spec.max_line + 1)
        elif spec.lines == "odd":
            ln = np.arange(1, spec.max_line + 1, 2)
        else:
            raise ValueError(f"unknown line set {spec.lines!r}")
    else:
        ln = np.asarray(spec.lines, dtype=int).ravel()
        if ln.size == 0 or (ln < 1).any():
            raise ValueError("explicit lines must be positive harmonic numbers")
    if ln.max() * spec.f0 >= spec.fs / 2:
        raise ValueError("excited lines reach the Nyquist frequency")
    return ln


def multisine(spec):
    """Generate random-phase multisine realizations.

    Returns an array of shape (realizations, periods*N) holding
    spec.periods identical copies of one N = fs/f0 sample period each.
    Phases are uniform on [0, 2*pi) from a generator seeded with
    spec.seed; realizations consume consecutive draws.
    """
    if spec.f0 <= 0 or spec.fs <= 0:
        raise ValueError("f0 and fs must be positive")
    if spec.periods < 1:
        raise ValueError("periods must be at least 1")
    n_pp = spec.fs / spec.f0
    if abs(n_pp - round(n_pp)) > 1e-9 * n_pp:
        raise ValueError(f"fs/f0 = {n_pp} is not an integer period length")
    n_pp = int(round(n_pp))
    if (spec.rms is None) == (spec.amplitude is None):
        raise ValueError("set exactly one of rms and amplitude")
    ln = _line_numbers(spec)
    rng = np.random.default_rng(spec.seed)
    t = np.arange(n_pp) / spec.fs
    out = np.empty((spec.realizations, n_pp))
    for r in range(spec.realizations):
        phases = rng.uniform(0.0, 2.0 * np.pi, ln.size)
        u = np.cos(2.0 * np.pi * spec.f0 * ln[:, None] * t[None, :]
                   + phases[:, None]).sum(axis=0)
        if spec.amplitude is not None:
            u *= spec.amplitude
        else:
            u *= spec.rms / np.sqrt(np.mean(u ** 2))
        out[r] = u
    if spec.periods > 1:
        out = np.tile(out, (1, int(spec.periods)))
    return out


def add_output_noise(dataset, snr_db, seed=0):
    """Add white Gaussian noise to the outputs at the given per-channel SNR."""
    if not np.isfinite(snr_db):
        return Dataset(dataset.u.copy(), dataset.y.copy(), dataset.sample_rate,
                       x0=dataset.x0)
    rng = np.random.default_rng(seed)
    y = dataset.y.copy()
    for ch in range(y.shape[1]):
        sigma = np.sqrt(np.mean(y[:, ch] ** 2)) * 10.0 ** (-snr_db / 20.0)
        y[:, ch] += rng.normal(0.0, sigma, y.shape[0])
    return Dataset(dataset.u.copy(), y, dataset.sample_rate, x0=dataset.x0)


# ---------------------------------------------------------------------------
# Van der Pol (discrete-time truth)

@dataclass
class VdpParams:
    epsilon: float = 0.03
    omega0: float = 2.0 * np.pi
    ts: float = 0.01


def vdp_truth(params=None):
    """Discrete-time Van der Pol model (forward Euler of the oscillator).

    x1(k+1) = x1 + ts*x2
    x2(k+1) = -omega0^2*ts*x1 + (eps*ts+1)*x2 - eps*ts*x1^2*x2 + ts*u
    y = x1
    """
    p = params or VdpParams()
    A = np.array([[1.0, p.ts],
                  [-p.omega0 ** 2 * p.ts, p.epsilon * p.ts + 1.0]])
    B = np.array([[0.0], [p.ts]])
    C = np.array([[1.0, 0.0]])
    D = np.array([[0.0]])
    basis = MonomialBasis(2, [[2, 1]])
    E = np.array([[0.0], [-p.epsilon * p.ts]])
    return StateSpaceModel(A, B, C, D, state_nl=PolynomialMap(basis, E),
                           sample_period=p.ts)


def simulate_vdp(params, u_seq, settle_periods=1):
    """Simulate the Van der Pol truth over one period of excitation.

    u_seq is one period; settle_periods copies are run first (from zero
    state) and discarded.  The returned Dataset stores the state at the
    start of the retained window, so re-simulating the truth from
    dataset.x0 reproduces y exactly.

    Returns (dataset, truth_model).
    """
    p = params or VdpParams()
    u = np.asarray(u_seq, dtype=float).ravel()
    n = u.size
    a11, a12 = 1.0, p.ts
    a21, a22 = -p.omega0 ** 2 * p.ts, p.epsilon * p.ts + 1.0
    e2 = -p.epsilon * p.ts
    x1 = x2 = 0.0
    for _ in range(int(settle_periods)):
        for k in range(n):
            x1, x2 = (a11 * x1 + a12 * x2,
                      a21 * x1 + a22 * x2 + e2 * x1 * x1 * x2 + p.ts * u[k])
    x0 = np.array([x1, x2])
    y = np.empty(n)
    for k in range(n):
        y[k] = x1
        x1, x2 = (a11 * x1 + a12 * x2,
                  a21 * x1 + a22 * x2 + e2 * x1 * x1 * x2 + p.ts * u[k])
    ds = Dataset(u, y, 1.0 / p.ts, x0=x0)
    return ds, vdp_truth(p)


# ---------------------------------------------------------------------------
# continuous-time systems, fixed-step RK4

@njit(cache=True)
def _bw_steps(u2, h, m, c, k, alpha, gamma, delta, x0, n_steps, keep):
    # u2 holds samples at h/2 spacing; step i uses u2[2i], u2[2i+1], u2[2i+2]
    x1, x2, x3 = x0[0], x0[1], x0[2]
    out = np.empty(keep)
    for i in range(n_steps):
        if i >= n_steps - keep:
            out[i - (n_steps - keep)] = x1
        ua, um, ub = u2[2 * i], u2[2 * i + 1], u2[2 * i + 2]
        k11 = x2
        k12 = (ua - c * x2 - k * x1 - x3) / m
        k13 = alpha * x2 - gamma * abs(x2) * x3 - delta * x2 * abs(x3)
        p1 = x1 + 0.5 * h * k11
        p2 = x2 + 0.5 * h * k12
        p3 = x3 + 0.5 * h * k13
        k21 = p2
        k22 = (um - c * p2 - k * p1 - p3) / m
        k23 = alpha * p2 - gamma * abs(p2) * p3 - delta * p2 * abs(p3)
        p1 = x1 + 0.5 * h * k21
        p2 = x2 + 0.5 * h * k22
        p3 = x3 + 0.5 * h * k23
        k31 = p2
        k32 = (um - c * p2 - k * p1 - p3) / m
        k33 = alpha * p2 - gamma * abs(p2) * p3 - delta * p2 * abs(p3)
        p1 = x1 + h * k31
        p2 = x2 + h * k32
        p3 = x3 + h * k33
        k41 = p2
        k42 = (ub - c * p2 - k * p1 - p3) / m
        k43 = alpha * p2 - gamma * abs(p2) * p3 - delta * p2 * abs(p3)
        x1 += h * (k11 + 2 * k21 + 2 * k31 + k41) / 6.0
        x2 += h * (k12 + 2 * k22 + 2 * k32 + k42) / 6.0
        x3 += h * (k13 + 2 * k23 + 2 * k33 + k43) / 6.0
    return out, np.array([x1, x2, x3])


@njit(cache=True)
def _duffing_steps(u2, h, m, c, alpha, beta, x0, n_steps, keep):
    x1, x2 = x0[0], x0[1]
    out = np.empty(keep)
    for i in range(n_steps):
        if i >= n_steps - keep:
            out[i - (n_steps - keep)] = x1
        ua, um, ub = u2[2 * i], u2[2 * i + 1], u2[2 * i + 2]
        k11 = x2
        k12 = (ua - c * x2 - alpha * x1 - beta * x1 ** 3) / m
        p1 = x1 + 0.5 * h * k11
        p2 = x2 + 0.5 * h * k12
        k21 = p2
        k22 = (um - c * p2 - alpha * p1 - beta * p1 ** 3) / m
        p1 = x1 + 0.5 * h * k21
        p2 = x2 + 0.5 * h * k22
        k31 = p2
        k32 = (um - c * p2 - alpha * p1 - beta * p1 ** 3) / m
        p1 = x1 + h * k31
        p2 = x2 + h * k32
        k41 = p2
        k42 = (ub - c * p2 - alpha * p1 - beta * p1 ** 3) / m
        x1 += h * (k11 + 2 * k21 + 2 * k31 + k41) / 6.0
        x2 += h * (k12 + 2 * k22 + 2 * k32 + k42) / 6.0
    return out, np.array([x1, x2])


def _run_periodic_ode(step_fn, args, n_states, u, fs, oversample, settle_periods):
    u = np.asarray(u, dtype=float).ravel()
    n = u.size
    ov = int(oversample)
    if ov < 1:
        raise ValueError("oversample must be >= 1")
    # double-fine grid supplies exact RK4 midpoint samples
    u2p = resample(u, 2 * ov * n)
    reps = int(settle_periods) + 1
    u2 = np.concatenate([np.tile(u2p, reps), u2p[:1]])
    h = 1.0 / (fs * ov)
    x1_fine, _ = step_fn(u2, h, *args, np.zeros(n_states), n * ov * reps, n * ov)
    if not np.all(np.isfinite(x1_fine)):
        raise FloatingPointError("ODE integration diverged")
    if settle_periods > 0:
        y = resample(x1_fine, n)
    else:
        y = x1_fine[::ov]
    return Dataset(u, y, fs)


@dataclass
class BoucWenParams:
    """Hysteretic oscillator m*y'' + c*y' + k*y + x3 = u with the
    hysteresis state x3' = alpha*y' - gamma*|y'|*x3 - delta*y'*|x3|."""
    m: float = 2.0
    c: float = 10.0
    k: float = 5.0e4
    alpha: float = 5.0e4
    gamma: float = 0.8
    delta: float = -1.1


def simulate_bouc_wen(params, u_seq, fs, oversample=20, settle_periods=1):
    """Integrate the Bouc-Wen oscillator over a periodic excitation record.

    Returns a Dataset with y = displacement sampled at fs.
    """
    p = params or BoucWenParams()
    return _run_periodic_ode(_bw_steps, (p.m, p.c, p.k, p.alpha, p.gamma, p.delta),
                             3, u_seq, fs, oversample, settle_periods)


def bouc_wen_linear(params, fs):
    """Zero-order-hold discretization of the linearized Bouc-Wen system
    (hysteresis slope alpha at the origin).  Used to seed linear parts."""
    from scipy.signal import cont2discrete
    p = params or BoucWenParams()
    Ac = np.array([[0.0, 1.0, 0.0],
                   [-p.k / p.m, -p.c / p.m, -1.0 / p.m],
                   [0.0, p.alpha, 0.0]])
    Bc = np.array([[0.0], [1.0 / p.m], [0.0]])
    Cc = np.array([[1.0, 0.0, 0.0]])
    Dc = np.array([[0.0]])
    A, B, C, D, _ = cont2discrete((Ac, Bc, Cc, Dc), 1.0 / fs, method="zoh")
    return StateSpaceModel(A, B, C, D, sample_period=1.0 / fs)


@dataclass
class DuffingParams:
    """Hardening spring m*y'' + c*y' + alpha*y + beta*y^3 = u."""
    m: float = 1.0
    c: float = 5.0
    alpha: float = 1.0e4
    beta: float = 5.0e9


def simulate_duffing(params, u_seq, fs, oversample=20, settle_periods=1):
    """Integrate the Duffing oscillator over a periodic excitation record."""
    p = params or DuffingParams()
    return _run_periodic_ode(_duffing_steps, (p.m, p.c, p.alpha, p.beta),
                             2, u_seq, fs, oversample, settle_periods)
