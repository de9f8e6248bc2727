"""Jacobian-tensor decoupling: operating points, analytic Jacobians,
smoothness-regularized CP decomposition and branch recovery.

The Jacobian of a polynomial map, stacked over N operating points, forms
a third-order tensor whose CP decomposition J(:,:,k) = W diag(h(k)) V^T
exposes a decoupled structure: V mixes inputs into scalar branch inputs,
H samples the branch derivatives, W mixes branch outputs.  Branch
polynomials are recovered by regression of H against the branch inputs
and integration.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky_banded, cho_solve_banded
from scipy.sparse.linalg import LinearOperator, cg

from .model import (BranchPolynomial, DecoupledMap, PolynomialMap,
                    eval_branches, eval_monomials)
from .reduction import (FunctionErrorReport, _error_report, _function_lm,
                        function_error, function_outputs)


@dataclass
class OperatingPointSet:
    """Points (N, n_in) at which Jacobians are evaluated."""
    points: np.ndarray
    source: str = "given"
    seed: int | None = None

    @property
    def n_points(self):
        return self.points.shape[0]


def sample_operating_points(source, n_points=1000, mode="gaussian", seed=0):
    """Draw operating points from simulation samples or summary statistics.

    source is either a sample matrix (M, n_in) or a (mean, std) pair of
    per-coordinate statistics.  mode "gaussian" draws from a normal with
    the source's mean and standard deviation; mode "sampled" draws rows
    from the sample matrix (without replacement when it is large enough).
    """
    rng = np.random.default_rng(seed)
    if isinstance(source, tuple) and len(source) == 2:
        mean = np.asarray(source[0], dtype=float).ravel()
        std = np.asarray(source[1], dtype=float).ravel()
        if mode != "gaussian":
            raise ValueError("statistics input requires mode='gaussian'")
        pts = rng.standard_normal((n_points, mean.size)) * std + mean
        return OperatingPointSet(pts, source="gaussian", seed=seed)
    samples = np.asarray(source, dtype=float)
    if samples.ndim != 2:
        raise ValueError("source must be (M, n_in) samples or a (mean, std) pair")
    if mode == "gaussian":
        mean = samples.mean(axis=0)
        std = samples.std(axis=0)
        pts = rng.standard_normal((n_points, mean.size)) * std + mean
        return OperatingPointSet(pts, source="gaussian", seed=seed)
    if mode == "sampled":
        idx = rng.choice(samples.shape[0], size=n_points,
                         replace=samples.shape[0] < n_points)
        return OperatingPointSet(samples[idx].copy(), source="sampled", seed=seed)
    raise ValueError(f"unknown mode {mode!r}")


def analytic_jacobian(map_, points):
    """Exact Jacobian of the map at each point; returns (n_out, n_in, N)."""
    if hasattr(points, "points"):
        points = points.points
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[1] != map_.n_in:
        raise ValueError(f"points must have shape (N, {map_.n_in})")
    N = P.shape[0]
    J = np.empty((map_.n_out, map_.n_in, N))
    if isinstance(map_, PolynomialMap):
        expo = map_.basis.exponents
        for v in range(map_.n_in):
            ev = expo.copy()
            ev[:, v] = np.maximum(ev[:, v] - 1, 0)
            mono = np.prod(P[:, None, :] ** ev[None, :, :], axis=2)
            dcoef = map_.coeffs * expo[:, v][None, :]
            J[:, v, :] = dcoef @ mono.T
        return J
    if isinstance(map_, DecoupledMap):
        Z = P @ map_.V
        Gd = eval_branches(map_, Z, deriv=True)
        return np.einsum("oi,ki,vi->ovk", map_.W, Gd, map_.V)
    raise TypeError(f"not a nonlinear map: {type(map_).__name__}")


@dataclass
class JacobianTensor:
    """Jacobian slices stacked along the third axis, (n_out, n_in, N)."""
    data: np.ndarray
    points: OperatingPointSet

    @property
    def shape(self):
        return self.data.shape


def build_jacobian_tensor(map_, points):
    if not isinstance(points, OperatingPointSet):
        points = OperatingPointSet(np.asarray(points, dtype=float))
    return JacobianTensor(data=analytic_jacobian(map_, points.points), points=points)


# ---------------------------------------------------------------------------
# CP decomposition

@dataclass
class CpdOptions:
    max_iter: int = 300
    tol: float = 1e-12
    restarts: int = 5
    seed: int = 0
    lambda_smooth: float = 0.0


@dataclass
class CpdFactors:
    """CP factors with V columns normalized to unit norm (sign fixed by
    the largest-magnitude entry), scales absorbed into H."""
    W: np.ndarray
    V: np.ndarray
    H: np.ndarray
    e_cpd: float
    iterations: int
    converged: bool
    lambda_smooth: float = 0.0
    seed: int = 0
    objective_trace: list = field(default_factory=list)

    @property
    def r(self):
        return self.W.shape[1]


def _tensor_data(tensor):
    if isinstance(tensor, JacobianTensor):
        return tensor.data, tensor.points.points
    data = np.asarray(tensor, dtype=float)
    if data.ndim != 3:
        raise ValueError("tensor must be 3-way")
    return data, None


def _cp_model(W, V, H):
    return np.einsum("oi,ji,ki->ojk", W, V, H)


def _solve_gram(G, M):
    # solve X @ G = M rows-wise; min-norm solution survives rank deficiency
    return np.linalg.lstsq(G, M.T, rcond=None)[0].T


def _second_diff(h, order):
    hs = h[order]
    return hs[:-2] - 2.0 * hs[1:-1] + hs[2:]


def _second_diff_adjoint(d, order, out):
    # out += D^T d in the natural index order, D the second-difference
    # matrix acting on the sorted sequence; order is a permutation so the
    # fancy-indexed add hits each slot once
    buf = np.zeros(out.size)
    buf[:-2] += d
    buf[1:-1] -= 2.0 * d
    buf[2:] += d
    out[order] += buf


def _banded_dtD(N, lam, shift):
    # lower banded storage of shift*I + lam*D^T D (pentadiagonal in the
    # sorted index order); row k of D hits columns k, k+1, k+2
    ab = np.zeros((3, N))
    c = np.zeros(N)
    c[:N - 2] += 1.0
    c[1:N - 1] += 4.0
    c[2:] += 1.0
    ab[0] = shift + lam * c
    s1 = np.zeros(max(N - 1, 0))
    s1[:N - 2] += -2.0
    s1[1:] += -2.0
    ab[1, :N - 1] = lam * s1
    ab[2, :N - 2] = lam
    return ab


def _solve_h_regularized(GH, MH, orders, lam, H0):
    """Solve (GH kron I_N + lam blockdiag(D_i^T D_i)) vec(H) = vec(MH)
    with matrix-free CG.  A direct factorization fills in badly (each
    penalty block is banded only in its own sort order), and the penalty
    conditioning grows like N^4, so CG is preconditioned with the exact
    banded inverse of the block-diagonal part."""
    N, r = MH.shape

    def matvec(x):
        X = x.reshape(r, N)
        out = GH @ X
        for i in range(r):
            _second_diff_adjoint(lam * _second_diff(X[i], orders[i]),
                                 orders[i], out[i])
        return out.ravel()

    diagGH = np.diag(GH)
    shift_floor = max(1e-12 * diagGH.max(), 1e-30)
    factors = []
    for i in range(r):
        ab = _banded_dtD(N, lam, max(diagGH[i], shift_floor))
        factors.append(cholesky_banded(ab, lower=True))

    def precond(x):
        X = x.reshape(r, N)
        out = np.empty_like(X)
        for i in range(r):
            out[i, orders[i]] = cho_solve_banded((factors[i], True),
                                                 X[i, orders[i]])
        return out.ravel()

    A = LinearOperator((r * N, r * N), matvec=matvec)
    M = LinearOperator((r * N, r * N), matvec=precond)
    rhs = MH.T.ravel()
    sol, info = cg(A, rhs, x0=H0.T.ravel(), M=M, maxiter=500,
                   atol=0.0, rtol=1e-12)
    if info != 0:
        # near-singular GH stalls CG; a modest residual is still an
        # adequate subproblem solve (the dense route lands near 1e-8
        # itself), otherwise fall back to a ridged dense solve
        res = np.linalg.norm(matvec(sol) - rhs)
        if res > 1e-5 * max(np.linalg.norm(rhs), 1e-300):
            Af = np.kron(GH, np.eye(N))
            for i in range(r):
                E = np.zeros((N - 2, N))
                E[np.arange(N - 2), orders[i][:-2]] += 1.0
                E[np.arange(N - 2), orders[i][1:-1]] += -2.0
                E[np.arange(N - 2), orders[i][2:]] += 1.0
                sl = slice(i * N, (i + 1) * N)
                Af[sl, sl] += lam * (E.T @ E)
            Af[np.diag_indices_from(Af)] += 1e-12 * np.abs(Af).max()
            sol = np.linalg.solve(Af, rhs)
    return sol.reshape(r, N).T


def _als_single(T, P, r, opts, seed):
    no, ni, N = T.shape
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((no, r))
    V = rng.standard_normal((ni, r))
    H = rng.standard_normal((N, r))
    T2 = float(np.sum(T * T))
    lam = float(opts.lambda_smooth)

    def fidelity():
        R = T - _cp_model(W, V, H)
        return float(np.sum(R * R))

    trace = []
    prev_obj = np.inf
    prev_fid = np.inf
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        HtH = H.T @ H
        W = _solve_gram((V.T @ V) * HtH, np.einsum("ojk,ji,ki->oi", T, V, H))
        fid = fidelity()
        trace.append(fid)
        if lam == 0.0 and fid > prev_fid + 1e-8 * max(T2, 1e-300):
            raise RuntimeError("ALS objective increased at the W update")
        prev_fid = fid
        V = _solve_gram((W.T @ W) * HtH, np.einsum("ojk,oi,ki->ji", T, W, H))
        fid = fidelity()
        trace.append(fid)
        if lam == 0.0 and fid > prev_fid + 1e-8 * max(T2, 1e-300):
            raise RuntimeError("ALS objective increased at the V update")
        prev_fid = fid
        GH = (W.T @ W) * (V.T @ V)
        MH = np.einsum("ojk,oi,ji->ki", T, W, V)
        penalty = 0.0
        if lam > 0.0:
            # sorted second differences per branch, resorted after each V update
            Z = P @ V
            orders = [np.argsort(Z[:, i], kind="stable") for i in range(r)]
            H = _solve_h_regularized(GH, MH, orders, lam, H)
            for i in range(r):
                d = _second_diff(H[:, i], orders[i])
                penalty += lam * float(d @ d)
        else:
            H = _solve_gram(GH, MH)
        fid = fidelity()
        trace.append(fid)
        if lam == 0.0 and fid > prev_fid + 1e-8 * max(T2, 1e-300):
            raise RuntimeError("ALS objective increased at the H update")
        prev_fid = fid
        obj = fid + penalty
        if abs(prev_obj - obj) <= opts.tol * max(T2, 1e-300):
            converged = True
            break
        prev_obj = obj
    # normalize: unit V columns, sign by largest entry, scale into H
    for i in range(r):
        s = np.linalg.norm(V[:, i])
        if s > 0:
            V[:, i] /= s
            H[:, i] *= s
        j = np.argmax(np.abs(V[:, i]))
        if V[j, i] < 0:
            V[:, i] = -V[:, i]
            H[:, i] = -H[:, i]
    fid = fidelity()
    fac = CpdFactors(W=W, V=V, H=H, e_cpd=fid / T2 if T2 > 0 else 0.0,
                     iterations=it, converged=converged,
                     lambda_smooth=lam, seed=seed, objective_trace=trace)
    fac._objective = fid + (penalty if lam > 0 else 0.0)
    return fac


def cpd_als(tensor, r, opts=None):
    """CP decomposition by alternating least squares.

    With lambda_smooth > 0 the H update carries a second-difference
    penalty on each column, evaluated in the ordering of its branch
    input z_i = P v_i (recomputed every sweep); the tensor must then be
    a JacobianTensor so the operating points are available.  Restarts
    re-run from fresh seeded initializations and keep the best final
    objective.
    """
    opts = opts or CpdOptions()
    if r < 1:
        raise ValueError("rank must be at least 1")
    T, P = _tensor_data(tensor)
    if opts.lambda_smooth > 0 and P is None:
        raise ValueError("smoothness regularization needs operating points")
    best = None
    for j in range(max(1, opts.restarts)):
        fac = _als_single(T, P, r, opts, seed=opts.seed + j)
        if best is None or fac._objective < best._objective:
            best = fac
    return best


def e_cpd(tensor, factors):
    """Relative squared reconstruction error of a CP model."""
    T, _ = _tensor_data(tensor)
    T2 = float(np.sum(T * T))
    R = T - _cp_model(factors.W, factors.V, factors.H)
    if T2 == 0.0:
        return 0.0 if float(np.sum(R * R)) == 0.0 else np.inf
    return float(np.sum(R * R)) / T2


def kruskal_ok(n_out, n_in, r):
    """Sufficient uniqueness condition for a CP decomposition whose third
    factor has generic full column rank: k_W + k_V + k_H >= 2r + 2 with
    k_H = min(N, r) and generic k_W = min(n_out, r), k_V = min(n_in, r)."""
    return min(int(n_out), int(r)) + min(int(n_in), int(r)) >= int(r) + 2


# ---------------------------------------------------------------------------
# branch recovery

def fit_branches(factors, points, degree, lowest_power=2, q=None, refine=0):
    """Turn CP factors into a DecoupledMap with polynomial branches.

    Each H column is regressed on powers lowest_power-1 .. degree-1 of
    its branch input and integrated term-wise (zero constant).  With
    reference outputs q the output factor W is re-solved by least
    squares against the branch values; refine > 0 alternates joint
    coefficient and W refits that many extra rounds.
    """
    if hasattr(points, "points"):
        points = points.points
    P = np.asarray(points, dtype=float)
    if degree < lowest_power:
        raise ValueError("degree must be at least lowest_power")
    Z = P @ factors.V
    r = factors.r
    N = P.shape[0]
    dpow = np.arange(lowest_power - 1, degree)
    branches = []
    for i in range(r):
        X = Z[:, i][:, None] ** dpow[None, :]
        if np.linalg.matrix_rank(X) < dpow.size:
            raise ValueError(
                f"branch {i}: too few distinct inputs for {dpow.size} coefficients")
        coef, *_ = np.linalg.lstsq(X, factors.H[:, i], rcond=None)
        g_coef = coef / (dpow + 1.0)
        branches.append(BranchPolynomial(g_coef, lowest_power))
    W = factors.W.copy()
    if q is not None:
        q = np.asarray(q, dtype=float)
        powers = np.arange(lowest_power, degree + 1)
        for round_ in range(refine + 1):
            G = np.empty((N, r))
            for i in range(r):
                G[:, i] = branches[i](Z[:, i])
            W = np.linalg.lstsq(G, q, rcond=None)[0].T
            if round_ == refine:
                break
            # joint coefficient refit at fixed W
            Zp = Z[:, :, None] ** powers[None, None, :]
            A = np.einsum("ji,kid->kjid", W, Zp).reshape(N * q.shape[1],
                                                         r * powers.size)
            th = np.linalg.lstsq(A, q.ravel(), rcond=None)[0].reshape(r, powers.size)
            branches = [BranchPolynomial(th[i].copy(), lowest_power) for i in range(r)]
    return DecoupledMap(W, factors.V.copy(), branches)


# ---------------------------------------------------------------------------
# end-to-end decoupling

@dataclass
class DecoupleOptions:
    r: int | None = None
    r_max: int | None = None
    n_points: int = 1000
    point_mode: str = "gaussian"
    seed: int = 0
    lambda_grid: tuple = (0.0, 1e-4, 1e-2, 1.0)
    restarts: int = 5
    als_max_iter: int = 300
    als_tol: float = 1e-12
    degree: int | None = None
    lowest_power: int = 2
    refine: int = 2
    polish: bool = True
    polish_max_iter: int = 100


@dataclass
class DecoupleResult:
    map: DecoupledMap
    factors: CpdFactors
    tensor: JacobianTensor
    points: OperatingPointSet
    r: int
    e_cpd: float
    e_f: FunctionErrorReport
    kruskal: bool
    rank_scan: list | None = None
    diagnostics: dict = field(default_factory=dict)


def _default_degree(map_):
    if isinstance(map_, PolynomialMap):
        return int(map_.basis.degrees.max())
    return max(b.degree for b in map_.branches)


def estimate_rank(tensor, opts):
    """Scan candidate ranks; the smallest with e_cpd < 1e-8 wins, or the
    largest relative error drop (elbow) if none reaches it."""
    T, _ = _tensor_data(tensor)
    r_max = opts.r_max or min(T.shape[0] * T.shape[1], 10)
    scan = []
    cpd_opts = CpdOptions(max_iter=opts.als_max_iter, tol=opts.als_tol,
                          restarts=opts.restarts, seed=opts.seed, lambda_smooth=0.0)
    for r in range(1, r_max + 1):
        fac = cpd_als(tensor, r, cpd_opts)
        scan.append((r, fac.e_cpd))
        if fac.e_cpd < 1e-8:
            return r, scan
    errs = np.array([e for _, e in scan])
    if errs.size == 1:
        return 1, scan
    ratios = errs[:-1] / np.maximum(errs[1:], 1e-300)
    return int(np.argmax(ratios)) + 2, scan


def decouple(map_, stats, opts=None):
    """Decouple a polynomial map into univariate branches.

    stats supplies the operating-point distribution: an OperatingPointSet
    is used as given, otherwise sample_operating_points(stats, ...) draws
    n_points according to point_mode.  Ranks come from opts.r or a scan.
    Candidates from the smoothing-parameter grid x restarts are fitted to
    branches and compared by function error against the input map; the
    best is optionally polished by the function-space optimizer.
    """
    opts = opts or DecoupleOptions()
    if isinstance(stats, OperatingPointSet):
        points = stats
    else:
        points = sample_operating_points(stats, opts.n_points, opts.point_mode,
                                         opts.seed)
    if points.points.shape[1] != map_.n_in:
        raise ValueError(f"operating points have {points.points.shape[1]} columns, "
                         f"map has {map_.n_in} inputs")
    tensor = build_jacobian_tensor(map_, points)
    degree = opts.degree or _default_degree(map_)
    q = function_outputs(map_, points)

    norm_t = float(np.sum(tensor.data ** 2))
    if norm_t == 0.0:
        r = opts.r or 1
        V = np.zeros((map_.n_in, r))
        V[0, :] = 1.0
        zero = DecoupledMap(np.zeros((map_.n_out, r)), V,
                            [BranchPolynomial([0.0], opts.lowest_power)
                             for _ in range(r)])
        fac = CpdFactors(W=zero.W.copy(), V=zero.V.copy(),
                         H=np.zeros((points.n_points, r)), e_cpd=0.0,
                         iterations=0, converged=True)
        return DecoupleResult(map=zero, factors=fac, tensor=tensor, points=points,
                              r=r, e_cpd=0.0,
                              e_f=_error_report(q, function_outputs(zero, points)),
                              kruskal=kruskal_ok(map_.n_out, map_.n_in, r),
                              diagnostics={"zero_map": True})

    rank_scan = None
    r = opts.r
    if r is None:
        r, rank_scan = estimate_rank(tensor, opts)

    best = None
    for li, lam in enumerate(opts.lambda_grid):
        for s in range(max(1, opts.restarts)):
            seed = opts.seed + 1009 * li + s
            cpd_opts = CpdOptions(max_iter=opts.als_max_iter, tol=opts.als_tol,
                                  restarts=1, seed=seed, lambda_smooth=lam)
            fac = cpd_als(tensor, r, cpd_opts)
            try:
                dm = fit_branches(fac, points, degree, opts.lowest_power,
                                  q=q, refine=opts.refine)
            except ValueError:
                continue
            if opts.polish:
                W, V, branches, _ = _function_lm(points.points, q, dm.W, dm.V,
                                                 dm.branches, shared=False,
                                                 max_iter=opts.polish_max_iter)
                cand = DecoupledMap(W, V, branches)
                rep_c = function_error(cand, points, q)
                rep_d = function_error(dm, points, q)
                if rep_c.aggregate_ef <= rep_d.aggregate_ef:
                    dm, rep = cand, rep_c
                else:
                    rep = rep_d
            else:
                rep = function_error(dm, points, q)
            if best is None or rep.aggregate_ef < best[0].aggregate_ef:
                best = (rep, dm, fac)
    if best is None:
        raise ValueError("no decomposition candidate could be fitted")
    rep, dm, fac = best
    return DecoupleResult(map=dm, factors=fac, tensor=tensor, points=points,
                          r=r, e_cpd=fac.e_cpd, e_f=rep,
                          kruskal=kruskal_ok(map_.n_out, map_.n_in, r),
                          rank_scan=rank_scan,
                          diagnostics={"lambda": fac.lambda_smooth,
                                       "seed": fac.seed})
