"""Branch unification and branch removal for decoupled maps, plus the
function-space error metrics and optimizer shared with decoupling.

All operations compare candidate maps against reference outputs q at a
set of operating points; errors are relative rms per output.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._lm import minimize_lm
from .model import BranchPolynomial, DecoupledMap, eval_branches, eval_nl


def _pts(points):
    if hasattr(points, "points"):
        points = points.points
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D array (N, n_in)")
    return pts


@dataclass
class FunctionErrorReport:
    """Relative rms function error per output and aggregated."""
    per_output_ef: np.ndarray
    aggregate_ef: float

    def __repr__(self):
        per = ", ".join(f"{v:.3g}" for v in self.per_output_ef)
        return f"FunctionErrorReport(per_output=[{per}], aggregate={self.aggregate_ef:.3g})"


def function_outputs(map_, points):
    """Evaluate the map at the operating points; returns (N, n_out)."""
    return eval_nl(map_, _pts(points))


def function_error(map_, points, q_ref):
    """Per-output e_f = rms(q_ref_j - q_j) / rms(q_ref_j) and the
    aggregate over all outputs."""
    q = function_outputs(map_, points)
    return _error_report(q_ref, q)


def _error_report(q_ref, q):
    q_ref = np.asarray(q_ref, dtype=float)
    diff2 = np.mean((q - q_ref) ** 2, axis=0)
    ref2 = np.mean(q_ref ** 2, axis=0)
    per = np.empty(q_ref.shape[1])
    for j in range(per.size):
        if ref2[j] == 0.0:
            per[j] = 0.0 if diff2[j] == 0.0 else np.inf
        else:
            per[j] = np.sqrt(diff2[j] / ref2[j])
    total_ref = ref2.sum()
    if total_ref == 0.0:
        agg = 0.0 if diff2.sum() == 0.0 else np.inf
    else:
        agg = float(np.sqrt(diff2.sum() / total_ref))
    return FunctionErrorReport(per_output_ef=per, aggregate_ef=agg)


# ---------------------------------------------------------------------------
# function-space Levenberg-Marquardt over (W, V, theta)

def _theta_stack(branches, shared):
    if shared:
        return branches[0].coeffs.copy()
    return np.concatenate([b.coeffs for b in branches])


def _function_lm(points, q, W0, V0, branches0, shared, max_iter=100,
                 lam0=1e-3, gtol=1e-14, steptol=1e-14):
    """Minimize ||q - W g(V^T p)||_F^2 over W, V and branch coefficients.

    With shared set, all branches use one coefficient vector (the
    unified parametrization); otherwise each branch is free.  Returns
    (W, V, branches, info).  Branch degree structure is fixed by
    branches0.
    """
    P = _pts(points)
    q = np.asarray(q, dtype=float)
    N, nv = P.shape
    p = q.shape[1]
    r = W0.shape[1]
    low = branches0[0].lowest_power
    nc = branches0[0].coeffs.size
    for b in branches0:
        if b.lowest_power != low or b.coeffs.size != nc:
            raise ValueError("branches must share one degree structure")
    powers = np.arange(low, low + nc)
    dpowers = np.maximum(powers - 1, 0)  # d=0 term has zero derivative

    nW, nV = p * r, nv * r
    nT = nc if shared else r * nc

    def split(x):
        W = x[:nW].reshape(p, r)
        V = x[nW:nW + nV].reshape(nv, r)
        th = x[nW + nV:]
        theta = np.tile(th, (r, 1)) if shared else th.reshape(r, nc)
        return W, V, theta

    def branch_vals(V, theta):
        Z = P @ V
        Zp = Z[:, :, None] ** powers[None, None, :]           # (N, r, nc)
        G = np.einsum("kid,id->ki", Zp, theta)
        Gd = np.einsum("kid,id->ki", Z[:, :, None] ** dpowers[None, None, :],
                       theta * powers[None, :])
        return Z, Zp, G, Gd

    def residual(x):
        W, V, theta = split(x)
        if not np.all(np.isfinite(W)) or not np.all(np.isfinite(V)):
            return None
        _, _, G, _ = branch_vals(V, theta)
        R = q - G @ W.T
        return R.ravel()

    eye_p = np.eye(p)

    def jacobian(x):
        W, V, theta = split(x)
        Z, Zp, G, Gd = branch_vals(V, theta)
        JW = -np.einsum("jl,ki->kjli", eye_p, G).reshape(N * p, nW)
        JV = -np.einsum("ji,ki,kv->kjvi", W, Gd, P).reshape(N * p, nV)
        if shared:
            JT = -np.einsum("ji,kid->kjd", W, Zp).reshape(N * p, nc)
        else:
            JT = -np.einsum("ji,kid->kjid", W, Zp).reshape(N * p, r * nc)
        return np.hstack([JW, JV, JT])

    x0 = np.concatenate([W0.ravel(), V0.ravel(), _theta_stack(branches0, shared)])
    x, info = minimize_lm(residual, jacobian, x0, max_iter=max_iter, lam0=lam0,
                          gtol=gtol, steptol=steptol)
    W, V, theta = split(x)
    if shared:
        bp = BranchPolynomial(theta[0].copy(), low)
        branches = [bp] * r
    else:
        branches = [BranchPolynomial(theta[i].copy(), low) for i in range(r)]
    return W, V, branches, info


# ---------------------------------------------------------------------------
# unification

@dataclass
class UnifyReport:
    candidate: int | None
    alphas: np.ndarray | None
    betas: np.ndarray | None
    e_f_step1: FunctionErrorReport | None
    e_f: FunctionErrorReport
    converged: bool = True


ALPHA_GRID = tuple(s * 2.0 ** j for s in (1.0, -1.0) for j in range(-3, 4))


def unify_branches(dec, points, max_iter=100):
    """Replace all branch polynomials by one shared polynomial.

    Step 1 screens each branch b as the shared-shape candidate: every
    other branch i is approximated as beta_i * g_b(alpha_i * z_i) with
    alpha_i from a coarse +-2^j grid and beta_i in closed form, the
    scalings absorbed into the V and W columns.  The candidate with the
    lowest aggregate function error wins.  Step 2 optimizes (W, V,
    shared theta) jointly from that start.

    Returns (unified_map, UnifyReport) with errors measured against the
    input map's outputs at the points.
    """
    P = _pts(points)
    q = function_outputs(dec, points)
    if dec.unified:
        rep = function_error(dec, points, q)
        return (DecoupledMap(dec.W.copy(), dec.V.copy(),
                             [BranchPolynomial(dec.branches[0].coeffs.copy(),
                                               dec.branches[0].lowest_power)] * dec.r,
                             unified=True),
                UnifyReport(candidate=None, alphas=None, betas=None,
                            e_f_step1=None, e_f=rep))
    low = dec.branches[0].lowest_power
    nc = dec.branches[0].coeffs.size
    for b in dec.branches:
        if b.lowest_power != low or b.coeffs.size != nc:
            raise ValueError("unification requires a common branch degree structure")
    Z = P @ dec.V
    Gvals = eval_branches(dec, Z)
    best = None
    for cand in range(dec.r):
        gb = dec.branches[cand]
        alphas = np.ones(dec.r)
        betas = np.ones(dec.r)
        for i in range(dec.r):
            ci = Gvals[:, i]
            sse_best, a_best, b_best = None, 1.0, 0.0
            for a in ALPHA_GRID:
                d = gb(a * Z[:, i])
                dd = float(d @ d)
                bi = float(ci @ d) / dd if dd > 0 else 0.0
                sse = float(ci @ ci) - 2 * bi * float(ci @ d) + bi * bi * dd
                if sse_best is None or sse < sse_best:
                    sse_best, a_best, b_best = sse, a, bi
            alphas[i], betas[i] = a_best, b_best
        Vc = dec.V * alphas[None, :]
        Wc = dec.W * betas[None, :]
        cand_map = DecoupledMap(Wc, Vc, [BranchPolynomial(gb.coeffs.copy(), low)] * dec.r,
                                unified=True)
        rep = function_error(cand_map, P, q)
        if best is None or rep.aggregate_ef < best[1].aggregate_ef:
            best = (cand, rep, cand_map, alphas.copy(), betas.copy())
    cand, rep1, cand_map, alphas, betas = best
    W, V, branches, info = _function_lm(P, q, cand_map.W, cand_map.V,
                                        cand_map.branches, shared=True,
                                        max_iter=max_iter)
    unified = DecoupledMap(W, V, branches, unified=True)
    rep = function_error(unified, P, q)
    if rep.aggregate_ef > rep1.aggregate_ef:
        # optimizer never worsens the screened start
        unified, rep = cand_map, rep1
    return unified, UnifyReport(candidate=cand, alphas=alphas, betas=betas,
                                e_f_step1=rep1, e_f=rep,
                                converged=info.status != "no_accept")


# ---------------------------------------------------------------------------
# branch removal

@dataclass
class RemovalCandidate:
    index: int
    e_f_plain: FunctionErrorReport
    e_f_refit: FunctionErrorReport


@dataclass
class RemovalReport:
    refit: str
    candidates: list = field(default_factory=list)
    removed_index: int = -1
    e_f: FunctionErrorReport | None = None


def _drop_branch(dec, b):
    keep = [i for i in range(dec.r) if i != b]
    branches = [dec.branches[i] for i in keep]
    return DecoupledMap(dec.W[:, keep], dec.V[:, keep], branches,
                        unified=dec.unified and len(keep) > 0)


def remove_branch(dec, points, refit="linear", max_iter=50):
    """Remove the branch whose removal hurts least.

    refit selects the compensation level: "none" deletes the column
    pair, "linear" re-solves W against the full map's outputs (the
    optimal linear compensation), "nonlinear" additionally runs the
    function-space optimizer with free branch coefficients on the
    winning candidate.  Candidates are compared after linear
    compensation (after plain deletion for refit="none"); ties pick the
    smaller index.

    Returns (reduced_map, RemovalReport).
    """
    if refit not in ("none", "linear", "nonlinear"):
        raise ValueError(f"unknown refit level {refit!r}")
    if dec.r < 2:
        raise ValueError("cannot remove a branch from a single-branch map")
    P = _pts(points)
    q = function_outputs(dec, P)
    report = RemovalReport(refit=refit)
    best = None
    for b in range(dec.r):
        cand = _drop_branch(dec, b)
        rep_plain = function_error(cand, P, q)
        G = eval_branches(cand, P @ cand.V)
        Wt, *_ = np.linalg.lstsq(G, q, rcond=None)
        cand_lin = DecoupledMap(Wt.T, cand.V, cand.branches, unified=cand.unified)
        rep_lin = function_error(cand_lin, P, q)
        if rep_lin.aggregate_ef > rep_plain.aggregate_ef + 1e-12:
            raise RuntimeError("linear compensation worsened the fit")
        report.candidates.append(RemovalCandidate(index=b, e_f_plain=rep_plain,
                                                  e_f_refit=rep_lin))
        score = rep_plain.aggregate_ef if refit == "none" else rep_lin.aggregate_ef
        chosen = cand if refit == "none" else cand_lin
        if best is None or score < best[0]:
            best = (score, b, chosen)
    _, b, out = best
    rep = function_error(out, P, q)
    if refit == "nonlinear":
        branches0 = [BranchPolynomial(br.coeffs.copy(), br.lowest_power)
                     for br in out.branches]
        W, V, branches, _ = _function_lm(P, q, out.W, out.V, branches0,
                                         shared=False, max_iter=max_iter)
        better = DecoupledMap(W, V, branches, unified=False)
        rep_nl = function_error(better, P, q)
        if rep_nl.aggregate_ef <= rep.aggregate_ef:
            out, rep = better, rep_nl
    report.removed_index = b
    report.e_f = rep
    return out, report


def reduce_to(dec, points, r_target, schedule="linear"):
    """Remove branches one at a time down to r_target.

    schedule is one refit level for every step or a list with one entry
    per removal.  Returns (map, [RemovalReport, ...]).
    """
    if r_target < 1:
        raise ValueError("r_target must be at least 1")
    if r_target > dec.r:
        raise ValueError(f"map has r={dec.r}, cannot grow to {r_target}")
    steps = dec.r - r_target
    if isinstance(schedule, str):
        schedule = [schedule] * steps
    if len(schedule) != steps:
        raise ValueError(f"schedule needs {steps} entries, got {len(schedule)}")
    reports = []
    cur = dec
    for refit in schedule:
        cur, rep = remove_branch(cur, points, refit=refit)
        reports.append(rep)
    return cur, reports
