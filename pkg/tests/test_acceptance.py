"""End-to-end acceptance checks, one test per numbered check.

Run with -v for a per-check pass/fail scorecard; each test also prints
its measured numbers (visible with -s or on failure).  The expensive
system-level checks (02, 03) sit at the end so the cheap ones report
first.
"""
import subprocess
import sys
import time
from itertools import product

import numpy as np
import pytest

import polydec as pd


def report(msg):
    print(f"\n[acceptance] {msg}")


# ---------------------------------------------------------------------------
# 01: a function of known branch structure is recovered exactly at the
# correct branch count and provably not at one below it.

def test_01_exact_decoupling_rank3_and_rank2_floor():
    t0 = time.monotonic()
    basis = pd.MonomialBasis(2, np.array([[2, 1]]))
    f = pd.PolynomialMap(basis, np.array([[1.0]]))  # f(x1, x2) = x1^2 x2

    rng = np.random.default_rng(0)
    pts = pd.OperatingPointSet(rng.standard_normal((1000, 2)),
                               source="gaussian", seed=0)
    gx = np.linspace(-2.0, 2.0, 21)
    GX, GY = np.meshgrid(gx, gx)
    grid = np.column_stack([GX.ravel(), GY.ravel()])
    q_true = pd.eval_nl(f, grid)

    res3 = pd.decouple(f, pts, pd.DecoupleOptions(
        r=3, seed=0, lambda_grid=(0.0,), restarts=5))
    err3 = float(np.abs(pd.eval_nl(res3.map, grid) - q_true).max())

    # The rank-2 floor is a property of the decomposition stage: the
    # function is a limit of two-branch models (near-parallel directions
    # with cancelling coefficients), so the direct function-space polish
    # can push e_f arbitrarily low and is disabled here.
    res2 = pd.decouple(f, pts, pd.DecoupleOptions(
        r=2, seed=0, lambda_grid=(0.0,), restarts=20, polish=False))
    ef2 = float(res2.e_f.aggregate_ef)

    elapsed = time.monotonic() - t0
    report(f"01 r=3 max grid err {err3:.2e} (<1e-6), "
           f"r=2 best-of-20 e_f {ef2:.3f} (>1e-2), {elapsed:.1f}s (<10s)")
    assert err3 < 1e-6
    assert ef2 > 1e-2
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# 04: numerically counted degrees of freedom of four reference model
# structures.  All share a generic stable linear part; the nonlinear
# parts are, in order: complete quadratic+cubic state polynomial, one
# branch with quadratic and cubic terms reading both states and the
# input, complete cubic state polynomial, one pure-cubic branch reading
# the states only.

def _dof_structures(seed=7):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((2, 2))
    A *= 0.6 / np.abs(np.linalg.eigvals(A)).max()
    B = rng.standard_normal((2, 1))
    C = rng.standard_normal((1, 2))
    D = rng.standard_normal((1, 1))
    b23 = pd.MonomialBasis.complete(2, [2, 3])
    coupled_23 = pd.StateSpaceModel(A, B, C, D, state_nl=pd.PolynomialMap(
        b23, 0.05 * rng.standard_normal((2, b23.n_mono))))
    branch_23 = pd.StateSpaceModel(A, B, C, D, state_nl=pd.DecoupledMap(
        0.1 * rng.standard_normal((2, 1)), rng.standard_normal((3, 1)),
        [pd.BranchPolynomial(0.03 * rng.standard_normal(2), lowest_power=2)]))
    b3 = pd.MonomialBasis.complete(2, [3])
    coupled_3 = pd.StateSpaceModel(A, B, C, D, state_nl=pd.PolynomialMap(
        b3, 0.05 * rng.standard_normal((2, b3.n_mono))))
    branch_3 = pd.StateSpaceModel(A, B, C, D, state_nl=pd.DecoupledMap(
        0.1 * rng.standard_normal((2, 1)), rng.standard_normal((2, 1)),
        [pd.BranchPolynomial(0.03 * rng.standard_normal(1), lowest_power=3)]))
    return coupled_23, branch_23, coupled_3, branch_3


def test_04_dof_counts_reference_structures():
    rng = np.random.default_rng(1)
    u = 0.3 * rng.standard_normal((300, 1))
    got = []
    for mdl in _dof_structures():
        probe = pd.Dataset(u, np.zeros((300, mdl.p)), 1.0)
        got.append(pd.count_dof(mdl, probe))
    report(f"04 dof counts {got} (expect [19, 10, 13, 8])")
    assert got == [19, 10, 13, 8]


# ---------------------------------------------------------------------------
# 05: the two-output three-branch example function: unification keeps
# the per-output function error at or below 1%, and the W-update
# compensation beats plain branch deletion by at least 5x.

def _example_function():
    V = np.array([[0.87, 0.35, 0.56], [0.11, 0.24, 0.61]])
    W = np.array([[0.60, 0.52, 0.69], [0.60, 0.01, 0.95]])
    branches = [pd.BranchPolynomial([0.5, 0.3], 2),
                pd.BranchPolynomial([-0.48, -0.28], 2),
                pd.BranchPolynomial([0.45, 0.25], 2)]
    return pd.DecoupledMap(W, V, branches)


def test_05_two_output_function_unify_and_removal():
    t0 = time.monotonic()
    dec = _example_function()
    pts = np.random.default_rng(12345).standard_normal((1000, 2))
    uni, urep = pd.unify_branches(dec, pts)
    per = np.asarray(urep.e_f.per_output_ef)

    pts_small = np.random.default_rng(0).standard_normal((1000, 2)) * 0.2
    _, rrep = pd.remove_branch(_example_function(), pts_small, refit="linear")
    win = [c for c in rrep.candidates if c.index == rrep.removed_index][0]
    ratio = win.e_f_plain.aggregate_ef / win.e_f_refit.aggregate_ef

    elapsed = time.monotonic() - t0
    report(f"05 unified per-output e_f {per.round(4)} (<=0.01 each), "
           f"removal plain/refit ratio {ratio:.1f} (>=5), {elapsed:.1f}s (<30s)")
    assert uni.unified
    assert np.all(per <= 0.01)
    assert ratio >= 5.0
    assert elapsed < 30.0


# ---------------------------------------------------------------------------
# 06: the uniqueness predicate agrees with its defining inequality
# min(n_out, r) + min(n_in, r) >= r + 2 everywhere on [1, 8]^3, and the
# (2, 2, 4) counterexample comes out non-unique.

def test_06_kruskal_uniqueness_predicate():
    assert pd.kruskal_ok(2, 2, 4) is False
    assert min(2, 4) + min(2, 4) == 4 < 4 + 2
    mismatches = sum(
        pd.kruskal_ok(n_out, n_in, r) != (min(n_out, r) + min(n_in, r) >= r + 2)
        for n_out, n_in, r in product(range(1, 9), repeat=3))
    report(f"06 (2,2,4) non-unique, truth table mismatches {mismatches}/512")
    assert mismatches == 0


# ---------------------------------------------------------------------------
# 07: the whole invariant/property suite passes quickly in a clean
# interpreter.

def test_07_property_suites_under_60s():
    t0 = time.monotonic()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "tests/test_properties.py", "-q"],
        capture_output=True, text=True)
    elapsed = time.monotonic() - t0
    report(f"07 property suites rc={proc.returncode} in {elapsed:.1f}s (<60s)")
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert elapsed < 60.0


# ---------------------------------------------------------------------------
# 08: mechanical reading of one-branch models.  A resonator with a
# position-fed cubic branch reads as a spring; a hardening-oscillator
# surrogate discretized so its cubic term sits on the displacement state
# gives a z direction with no velocity component; z = y^2 defeats the
# linear regression and must come back inconclusive.

def _spring_resonator():
    wn, zeta, ts = 2.0 * np.pi * 2.0, 0.1, 1.0 / 100.0
    A = np.array([[1.0, ts], [-wn ** 2 * ts, 1.0 - 2.0 * zeta * wn * ts]])
    B = np.array([[0.0], [ts]])
    C = np.array([[1.0, 0.0]])
    D = np.array([[0.0]])
    dec = pd.DecoupledMap(np.array([[0.0], [-50.0 * ts]]),
                          np.array([[1.0], [0.0]]),
                          [pd.BranchPolynomial([0.0, 1.0], lowest_power=2)])
    return pd.StateSpaceModel(A, B, C, D, state_nl=dec, sample_period=ts)


def _duffing_surrogate(fs=4096.0):
    p = pd.DuffingParams()
    ts = 1.0 / fs
    m, c, al, be = p.m, p.c, p.alpha, p.beta
    A = np.array([[1.0 - al * ts ** 2 / m, ts - c * ts ** 2 / m],
                  [-al * ts / m, 1.0 - c * ts / m]])
    B = np.array([[ts ** 2 / m], [ts / m]])
    C = np.array([[1.0, 0.0]])
    D = np.array([[0.0]])
    E = np.array([[-be * ts ** 2 / m], [-be * ts / m]])
    nl = pd.PolynomialMap(pd.MonomialBasis(2, [[3, 0]]), E)
    return pd.StateSpaceModel(A, B, C, D, state_nl=nl, sample_period=ts)


def test_08_branch_classification():
    # constructed spring
    spring = _spring_resonator()
    t = np.arange(2000) / 100.0
    u = np.sin(2 * np.pi * 1.3 * t) + 0.5 * np.sin(2 * np.pi * 0.4 * t)
    res = pd.simulate(spring, u)
    assert res.stable
    rep_s = pd.classify_model(spring, pd.Dataset(u, res.y, 100.0))

    # hardening surrogate: simulate, decouple to one branch, classify
    surr = _duffing_surrogate()
    fs = 4096.0
    u2 = pd.multisine(pd.MultisineSpec(f0=1.0, fs=fs, lines=np.arange(5, 41),
                                       rms=20.0, seed=3))[0]
    res2 = pd.simulate(surr, u2)
    assert res2.stable
    pts = pd.sample_operating_points(res2.x, n_points=500, seed=0)
    dec = pd.decouple(surr.state_nl, pts, pd.DecoupleOptions(
        r=1, seed=0, lambda_grid=(0.0,), restarts=3))
    mdl1 = pd.StateSpaceModel(surr.A, surr.B, surr.C, surr.D, state_nl=dec.map,
                              sample_period=surr.sample_period)
    rep_d = pd.classify_model(mdl1, pd.Dataset(u2, res2.y, fs))

    # quadratic-in-output counterexample
    y = res2.y[:, 0]
    theta, prec = pd.decompose_z(y ** 2, y, fs)
    label_sq = pd.classify(theta, prec)

    report(f"08 spring label={rep_s.label} precision={rep_s.precision:.4f} "
           f"(>0.99); surrogate |theta_z,2|={abs(rep_d.theta_z[1]):.2e} "
           f"(<0.05); y^2 -> {label_sq}")
    assert rep_s.label == "spring"
    assert rep_s.precision > 0.99
    assert abs(rep_d.theta_z[1]) < 0.05
    assert label_sq == "inconclusive"


# ---------------------------------------------------------------------------
# 02: self-oscillating benchmark end to end.  Starting from the known
# model, three branches represent it to simulation accuracy; continuing
# down to a single branch stays within 2% validation error.

def test_02_vdp_reduction_end_to_end():
    t0 = time.monotonic()
    recs = pd.generate_records({"system": "vdp", "f0": 0.01, "lines": "all",
                                "max_line": 400, "rms": 50.0,
                                "realizations": 5, "seed": 0})
    train, val = recs[:4], recs[4:]

    cfg = pd.PipelineConfig(model=pd.vdp_truth(), train=train, validation=val,
                            decouple={"r": 3, "lambda_grid": (0.0,),
                                      "restarts": 5},
                            target_r=3, seed=0)
    rep3 = pd.run_pipeline(cfg)
    val3 = rep3.records[-1].e_rms_val

    cfg1 = pd.PipelineConfig(model=rep3.final_model, train=train,
                             validation=val, target_r=1, seed=1)
    rep1 = pd.run_pipeline(cfg1)
    val1 = rep1.records[-1].e_rms_val
    r_final = rep1.records[-1].r_x

    elapsed = time.monotonic() - t0
    report(f"02 r=3 val e_rms {val3:.2e} (<1e-6), r={r_final} val e_rms "
           f"{val1:.4f} (<=0.02), {elapsed:.0f}s (<600s)")
    assert rep3.stop_reason == "target_reached"
    assert val3 < 1e-6
    assert r_final == 1
    assert val1 <= 0.02
    assert elapsed < 600.0


# ---------------------------------------------------------------------------
# 03: hysteretic benchmark at desk scale.  A coupled cubic model fitted
# from the origin linearization reaches 6% validation error on reduced
# data, and the unified three-branch reduction stays within 1.5x of it.

def test_03_bouc_wen_coupled_fit_and_unified_within_factor():
    t0 = time.monotonic()
    fs = 750.0
    base = {"system": "boucwen", "fs": fs, "f0": 1.0,
            "lines": list(range(5, 151)), "rms": 50.0, "seed": 0}
    train = pd.generate_records({**base, "realizations": 2, "snr_db": 40.0})
    val = pd.generate_records({**base, "realizations": 3})[2:]

    lin = pd.bouc_wen_linear(pd.BoucWenParams(), fs)
    basis = pd.MonomialBasis.complete(4, [2, 3])
    start = pd.StateSpaceModel(lin.A, lin.B, lin.C, lin.D,
                               state_nl=pd.PolynomialMap(
                                   basis, np.zeros((3, basis.n_mono))),
                               sample_period=lin.sample_period)
    fit, trace = pd.levenberg_marquardt(
        start, train, pd.LmOptions(max_iter=300, validation=val))
    coupled_val = trace.e_rms_val

    cfg = pd.PipelineConfig(model=fit, train=train, validation=val,
                            decouple={"r": 3, "lambda_grid": (0.0,),
                                      "restarts": 5},
                            unify=True, target_r=3, seed=0)
    rep = pd.run_pipeline(cfg)
    unified_val = rep.records[-1].e_rms_val

    elapsed = time.monotonic() - t0
    report(f"03 coupled val e_rms {coupled_val:.4f} (<=0.06), unified "
           f"{unified_val:.4f} (<= {1.5 * coupled_val:.4f}), "
           f"{elapsed:.0f}s (<1800s)")
    assert coupled_val <= 0.06
    assert rep.stop_reason == "target_reached"
    assert unified_val <= 1.5 * coupled_val
    assert elapsed < 1800.0
