"""Core model types: polynomial state-space models, evaluation, simulation,
state transforms, error metrics and parameter packing.

The model family is

    x(k+1) = A x(k) + B u(k) + E zeta(x(k), u(k))
    y(k)   = C x(k) + D u(k) + F eta(x(k), u(k))

where zeta/eta are either coupled multivariate monomial maps (PolynomialMap)
or decoupled maps W g(V^T vals) with univariate branch polynomials g_i
(DecoupledMap).  The nonlinearity input vals is the state alone or the
state stacked with the input, chosen per map via its input dimension.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from . import _kernels


def _as_matrix(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


class MonomialBasis:
    """Set of multivariate monomials given by an integer exponent matrix.

    Parameters
    ----------
    n_vars : int
        Number of input variables.
    exponents : array_like, shape (n_mono, n_vars)
        Non-negative integer exponents, one row per monomial.
    """

    def __init__(self, n_vars, exponents):
        exponents = np.asarray(exponents)
        if exponents.ndim != 2 or exponents.shape[1] != int(n_vars):
            raise ValueError("exponents must have shape (n_mono, n_vars)")
        if exponents.size and (exponents < 0).any():
            raise ValueError("exponents must be non-negative")
        if not np.issubdtype(exponents.dtype, np.integer):
            rounded = np.rint(exponents)
            if exponents.size and np.abs(rounded - exponents).max() > 0:
                raise ValueError("exponents must be integers")
            exponents = rounded
        self.n_vars = int(n_vars)
        self.exponents = exponents.astype(np.int64)
        seen = set()
        for row in map(tuple, self.exponents):
            if row in seen:
                raise ValueError(f"duplicate monomial {row}")
            seen.add(row)

    @property
    def n_mono(self):
        return self.exponents.shape[0]

    @property
    def degrees(self):
        return self.exponents.sum(axis=1)

    @classmethod
    def complete(cls, n_vars, degrees, allow_low=False):
        """All monomials in n_vars variables whose total degree is listed.

        Degrees below 2 duplicate the linear state-space part and are
        rejected unless allow_low is set.
        """
        degs = sorted(set(int(d) for d in np.atleast_1d(degrees)))
        if not allow_low:
            kept = [d for d in degs if d >= 2]
            if not kept:
                raise ValueError("degrees below 2 need allow_low=True")
            degs = kept
        if any(d < 0 for d in degs):
            raise ValueError("degrees must be non-negative")
        rows = []
        for d in degs:
            for combo in itertools.combinations_with_replacement(range(n_vars), d):
                e = [0] * n_vars
                for i in combo:
                    e[i] += 1
                rows.append(e)
        return cls(n_vars, np.array(rows, dtype=np.int64).reshape(len(rows), n_vars))

    def __eq__(self, other):
        return (isinstance(other, MonomialBasis)
                and self.n_vars == other.n_vars
                and self.exponents.shape == other.exponents.shape
                and (self.exponents == other.exponents).all())

    def __repr__(self):
        return f"MonomialBasis(n_vars={self.n_vars}, n_mono={self.n_mono})"


def eval_monomials(basis, points):
    """Evaluate all basis monomials at one point (n_vars,) or a batch
    (N, n_vars).  Returns (n_mono,) or (N, n_mono)."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.shape[1] != basis.n_vars:
        raise ValueError(f"points have {pts.shape[1]} vars, basis needs {basis.n_vars}")
    out = np.prod(pts[:, None, :] ** basis.exponents[None, :, :], axis=2)
    return out[0] if single else out


class PolynomialMap:
    """Coupled polynomial map: f(vals) = coeffs @ monomials(vals).

    coeffs has shape (n_out, n_mono).
    """

    def __init__(self, basis, coeffs):
        coeffs = _as_matrix(coeffs, "coeffs")
        if coeffs.shape[1] != basis.n_mono:
            raise ValueError(
                f"coeffs has {coeffs.shape[1]} columns, basis has {basis.n_mono} monomials")
        self.basis = basis
        self.coeffs = coeffs

    @property
    def n_in(self):
        return self.basis.n_vars

    @property
    def n_out(self):
        return self.coeffs.shape[0]

    def __repr__(self):
        return f"PolynomialMap(n_in={self.n_in}, n_out={self.n_out}, n_mono={self.basis.n_mono})"


class BranchPolynomial:
    """Univariate polynomial g(z) = sum_d coeffs[d - lowest_power] z**d.

    Coefficients are stored for ascending powers starting at lowest_power
    (default 2; powers 0 and 1 duplicate the linear part).
    """

    def __init__(self, coeffs, lowest_power=2):
        coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if coeffs.ndim != 1 or coeffs.size == 0:
            raise ValueError("coeffs must be a non-empty vector")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("coeffs contains non-finite entries")
        if lowest_power < 0:
            raise ValueError("lowest_power must be non-negative")
        self.coeffs = coeffs
        self.lowest_power = int(lowest_power)

    @property
    def degree(self):
        return self.lowest_power + self.coeffs.size - 1

    def dense(self):
        """Coefficients by power 0..degree."""
        out = np.zeros(self.degree + 1)
        out[self.lowest_power:] = self.coeffs
        return out

    def __call__(self, z):
        return npoly.polyval(np.asarray(z, dtype=float), self.dense())

    def deriv(self):
        d = npoly.polyder(self.dense())
        low = max(self.lowest_power - 1, 0)
        return BranchPolynomial(d[low:], low)

    def integ(self):
        """Antiderivative with zero constant term."""
        d = npoly.polyint(self.dense())
        low = self.lowest_power + 1
        return BranchPolynomial(d[low:], low)

    def __repr__(self):
        return f"BranchPolynomial(lowest_power={self.lowest_power}, degree={self.degree})"


class DecoupledMap:
    """Decoupled map f(vals) = W g(V^T vals) with univariate branches g_i.

    W is (n_out, r), V is (n_in, r), branches a list of r BranchPolynomial.
    unified marks that all branches share one coefficient vector; parameter
    packing then exposes a single shared vector.
    """

    def __init__(self, W, V, branches, unified=False):
        W = _as_matrix(W, "W")
        V = _as_matrix(V, "V")
        if W.shape[1] != V.shape[1]:
            raise ValueError(f"W has {W.shape[1]} columns, V has {V.shape[1]}")
        if len(branches) != W.shape[1]:
            raise ValueError(f"{len(branches)} branches for {W.shape[1]} columns")
        if unified and len(branches) > 0:
            b0 = branches[0]
            for b in branches[1:]:
                if (b.lowest_power != b0.lowest_power
                        or b.coeffs.shape != b0.coeffs.shape
                        or not np.array_equal(b.coeffs, b0.coeffs)):
                    raise ValueError("unified map requires identical branches")
        self.W = W
        self.V = V
        self.branches = list(branches)
        self.unified = bool(unified)

    @property
    def n_in(self):
        return self.V.shape[0]

    @property
    def n_out(self):
        return self.W.shape[0]

    @property
    def r(self):
        return self.W.shape[1]

    def branch_matrix(self, deriv=False):
        """Dense coefficient matrix (r, d_max+1) indexed by power."""
        polys = [b.deriv() if deriv else b for b in self.branches]
        dmax = max((p.degree for p in polys), default=0)
        out = np.zeros((self.r, dmax + 1))
        for i, p in enumerate(polys):
            out[i, :p.degree + 1] = p.dense()
        return out

    def __repr__(self):
        return (f"DecoupledMap(n_in={self.n_in}, n_out={self.n_out}, r={self.r}, "
                f"unified={self.unified})")


def eval_branches(map_, z, deriv=False):
    """Evaluate branch values g_i(z_i) (or derivatives) for z of shape
    (r,) or (N, r)."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zz = z[None, :] if single else z
    out = np.empty_like(zz)
    for i, b in enumerate(map_.branches):
        p = b.deriv() if deriv else b
        out[:, i] = p(zz[:, i])
    return out[0] if single else out


def eval_nl(map_, points):
    """Evaluate a coupled or decoupled nonlinear map at one point or a batch.

    points is (n_in,) or (N, n_in); the result is (n_out,) or (N, n_out).
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.shape[1] != map_.n_in:
        raise ValueError(f"points have {pts.shape[1]} vars, map needs {map_.n_in}")
    if isinstance(map_, PolynomialMap):
        out = eval_monomials(map_.basis, pts) @ map_.coeffs.T
    elif isinstance(map_, DecoupledMap):
        z = pts @ map_.V
        out = eval_branches(map_, z) @ map_.W.T
    else:
        raise TypeError(f"not a nonlinear map: {type(map_).__name__}")
    return out[0] if single else out


class StateSpaceModel:
    """Polynomial nonlinear state-space model.

    state_nl / output_nl are PolynomialMap, DecoupledMap or None.  Their
    input dimension must be n (state only) or n + m (state and input);
    state_nl maps to n outputs, output_nl to p outputs.
    """

    def __init__(self, A, B, C, D, state_nl=None, output_nl=None, sample_period=1.0):
        A = _as_matrix(A, "A")
        B = _as_matrix(B, "B")
        C = _as_matrix(C, "C")
        D = _as_matrix(D, "D")
        n = A.shape[0]
        if A.shape[1] != n:
            raise ValueError("A must be square")
        if B.shape[0] != n:
            raise ValueError("B row count must match A")
        if C.shape[1] != n:
            raise ValueError("C column count must match A")
        m = B.shape[1]
        p = C.shape[0]
        if D.shape != (p, m):
            raise ValueError(f"D must have shape ({p}, {m})")
        for nl, n_out, what in ((state_nl, n, "state_nl"), (output_nl, p, "output_nl")):
            if nl is None:
                continue
            if nl.n_in not in (n, n + m):
                raise ValueError(f"{what} input dimension {nl.n_in} is neither n nor n+m")
            if nl.n_out != n_out:
                raise ValueError(f"{what} output dimension {nl.n_out} != {n_out}")
        if sample_period <= 0:
            raise ValueError("sample_period must be positive")
        self.A, self.B, self.C, self.D = A, B, C, D
        self.state_nl = state_nl
        self.output_nl = output_nl
        self.sample_period = float(sample_period)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    def copy(self):
        return unpack(self, pack(self).values)

    def __repr__(self):
        def tag(nl):
            if nl is None:
                return "none"
            if isinstance(nl, PolynomialMap):
                return f"coupled({nl.basis.n_mono})"
            return f"decoupled(r={nl.r}{', unified' if nl.unified else ''})"
        return (f"StateSpaceModel(n={self.n}, m={self.m}, p={self.p}, "
                f"state_nl={tag(self.state_nl)}, output_nl={tag(self.output_nl)})")


class Dataset:
    """Input/output record sampled at a fixed rate.

    u is (N, m), y is (N, p); 1-D arrays are treated as single channels.
    x0 optionally records the state at the first sample.
    """

    def __init__(self, u, y, sample_rate, x0=None):
        u = np.asarray(u, dtype=float)
        y = np.asarray(y, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if u.ndim != 2 or y.ndim != 2:
            raise ValueError("u and y must be 1-D or 2-D")
        if u.shape[0] != y.shape[0]:
            raise ValueError(f"u has {u.shape[0]} samples, y has {y.shape[0]}")
        if not np.all(np.isfinite(u)) or not np.all(np.isfinite(y)):
            raise ValueError("dataset contains non-finite samples")
        if sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        self.u = u
        self.y = y
        self.sample_rate = float(sample_rate)
        self.x0 = None if x0 is None else np.asarray(x0, dtype=float).ravel()

    @property
    def n_samples(self):
        return self.u.shape[0]

    def __repr__(self):
        return (f"Dataset(N={self.n_samples}, m={self.u.shape[1]}, "
                f"p={self.y.shape[1]}, fs={self.sample_rate})")


@dataclass
class SimResult:
    y: np.ndarray
    x: np.ndarray
    z_x: np.ndarray | None
    z_y: np.ndarray | None
    stable: bool
    n_valid: int


_EMPTY_I = np.zeros((0, 0), dtype=np.int64)


def _kernel_args(nl, n_out):
    if nl is None:
        return (_kernels.NL_NONE, _EMPTY_I, np.zeros((n_out, 0)),
                np.zeros((n_out, 0)), np.zeros((0, 0)), np.zeros((0, 1)))
    if isinstance(nl, PolynomialMap):
        return (_kernels.NL_COUPLED, np.ascontiguousarray(nl.basis.exponents),
                np.ascontiguousarray(nl.coeffs),
                np.zeros((n_out, 0)), np.zeros((0, 0)), np.zeros((0, 1)))
    if isinstance(nl, DecoupledMap):
        return (_kernels.NL_DECOUPLED, _EMPTY_I, np.zeros((n_out, 0)),
                np.ascontiguousarray(nl.W), np.ascontiguousarray(nl.V),
                np.ascontiguousarray(nl.branch_matrix()))
    raise TypeError(f"not a nonlinear map: {type(nl).__name__}")


def simulate(model, u_seq, x0=None, y_bound=None):
    """Simulate the model over an input sequence.

    Parameters
    ----------
    model : StateSpaceModel
    u_seq : array_like, (N, m) or (N,)
    x0 : array_like, optional
        Initial state, zeros when omitted.
    y_bound : float, optional
        Output magnitude bound; crossing it (or any non-finite value)
        stops the recursion, zero-fills the remainder and clears the
        stable flag.

    Returns
    -------
    SimResult
        y (N, p), x (N, n), branch inputs z_x / z_y (N, r) for decoupled
        maps (None otherwise), the stable flag and the number of valid
        output samples.
    """
    u = np.asarray(u_seq, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[1] != model.m:
        raise ValueError(f"u has {u.shape[1]} channels, model has {model.m} inputs")
    if x0 is None:
        x0v = np.zeros(model.n)
    else:
        x0v = np.asarray(x0, dtype=float).ravel()
        if x0v.size != model.n:
            raise ValueError(f"x0 has {x0v.size} entries, model has {model.n} states")
    bound = np.inf if y_bound is None else float(y_bound)
    kx, xe, xc, wx, vx, tx = _kernel_args(model.state_nl, model.n)
    ky, ye, yc, wy, vy, ty = _kernel_args(model.output_nl, model.p)
    y, x, zx, zy, n_valid, stable = _kernels.simulate_loop(
        np.ascontiguousarray(model.A), np.ascontiguousarray(model.B),
        np.ascontiguousarray(model.C), np.ascontiguousarray(model.D),
        np.ascontiguousarray(u), x0v, bound,
        kx, xe, xc, wx, vx, tx, ky, ye, yc, wy, vy, ty)
    return SimResult(y=y, x=x,
                     z_x=zx if kx == _kernels.NL_DECOUPLED else None,
                     z_y=zy if ky == _kernels.NL_DECOUPLED else None,
                     stable=bool(stable), n_valid=int(n_valid))


# ---------------------------------------------------------------------------
# state transforms

def _expand_composed(basis, T, n):
    """Expansion matrix M with zeta_old(T x, u) = M @ zeta_new(x, u).

    Returns (new_basis, M) where M has shape (n_mono_old, n_mono_new).
    Only the first n variables (the state block) are transformed.
    """
    nv = basis.n_vars

    def mul(pa, pb):
        out = {}
        for ea, ca in pa.items():
            for eb, cb in pb.items():
                key = tuple(a + b for a, b in zip(ea, eb))
                out[key] = out.get(key, 0.0) + ca * cb
        return out

    one = {(0,) * nv: 1.0}
    lin = []
    for i in range(n):
        row = {}
        for l in range(n):
            if T[i, l] != 0.0:
                e = [0] * nv
                e[l] = 1
                row[tuple(e)] = T[i, l]
        lin.append(row if row else {(0,) * nv: 0.0})
    expansions = []
    for row in basis.exponents:
        poly = one
        for i in range(n):
            for _ in range(row[i]):
                poly = mul(poly, lin[i])
        if nv > n:
            shift = tuple([0] * n + list(row[n:]))
            poly = {tuple(a + b for a, b in zip(e, shift)): c for e, c in poly.items()}
        expansions.append(poly)
    keys = sorted({e for poly in expansions for e in poly},
                  key=lambda e: (sum(e), e))
    index = {e: j for j, e in enumerate(keys)}
    M = np.zeros((basis.n_mono, len(keys)))
    for jold, poly in enumerate(expansions):
        for e, c in poly.items():
            M[jold, index[e]] = c
    new_basis = MonomialBasis(nv, np.array(keys, dtype=np.int64).reshape(len(keys), nv))
    return new_basis, M


def apply_state_transform(model, T, cond_limit=1e12):
    """Change state coordinates, x = T x_new.

    Coupled maps are re-expanded on the monomial basis of the transformed
    variables; decoupled maps keep their branches and transform V (state
    rows) by T^T and state-equation W by inv(T).  The input/output behavior
    is unchanged.
    """
    T = _as_matrix(T, "T")
    n = model.n
    if T.shape != (n, n):
        raise ValueError(f"T must have shape ({n}, {n})")
    cond = np.linalg.cond(T)
    if not np.isfinite(cond) or cond > cond_limit:
        raise ValueError(f"T is ill-conditioned (cond={cond:.3g})")
    Ti = np.linalg.inv(T)

    def move(nl, left):
        # left: matrix applied to the map output (inv(T) for state eq)
        if nl is None:
            return None
        if isinstance(nl, PolynomialMap):
            new_basis, M = _expand_composed(nl.basis, T, n)
            return PolynomialMap(new_basis, left @ nl.coeffs @ M)
        Vn = nl.V.copy()
        Vn[:n, :] = T.T @ nl.V[:n, :]
        return DecoupledMap(left @ nl.W, Vn,
                            [BranchPolynomial(b.coeffs.copy(), b.lowest_power)
                             for b in nl.branches], unified=nl.unified)

    return StateSpaceModel(
        Ti @ model.A @ T, Ti @ model.B, model.C @ T, model.D,
        state_nl=move(model.state_nl, Ti),
        output_nl=move(model.output_nl, np.eye(model.p)),
        sample_period=model.sample_period)


# ---------------------------------------------------------------------------
# metrics

def e_rms(y_ref, y):
    """Relative rms error sqrt(sum ||y - y_ref||^2 / sum ||y_ref||^2)."""
    y_ref = np.asarray(y_ref, dtype=float)
    y = np.asarray(y, dtype=float)
    if y_ref.shape != y.shape:
        raise ValueError(f"shape mismatch {y_ref.shape} vs {y.shape}")
    denom = np.sum(y_ref ** 2)
    if denom == 0.0:
        raise ValueError("reference signal is identically zero")
    return float(np.sqrt(np.sum((y - y_ref) ** 2) / denom))


def _sim_input(dataset, model, settle_samples, periodic):
    u = dataset.u
    if settle_samples > 0 and periodic:
        s = min(int(settle_samples), u.shape[0])
        u = np.vstack([u[-s:], u])
        return u, s
    return u, int(settle_samples)


def cost_vls(model, dataset, settle_samples=0, periodic=False, bound_factor=1e3):
    """Mean squared output error (1/N) sum ||y(k) - y_meas(k)||^2.

    The first settle_samples of the simulation are dropped; with periodic
    set, the tail of u is prepended instead so the full record is scored.
    Unstable simulations return the penalty 1e6 * mean ||y_meas||^2.
    """
    u, s = _sim_input(dataset, model, settle_samples, periodic)
    x0 = dataset.x0 if (dataset.x0 is not None and dataset.x0.size == model.n) else None
    ref = np.sqrt(np.mean(dataset.y ** 2))
    res = simulate(model, u, x0=x0, y_bound=bound_factor * ref if ref > 0 else None)
    if not res.stable:
        return 1e6 * float(np.mean(np.sum(dataset.y ** 2, axis=1)))
    y = res.y[s:]
    ref_y = dataset.y if periodic else dataset.y[s:]
    return float(np.mean(np.sum((y - ref_y) ** 2, axis=1)))


# ---------------------------------------------------------------------------
# parameter packing

@dataclass
class ParamVector:
    """Flat parameter vector plus the (name, shape) layout to rebuild it."""
    values: np.ndarray
    layout: tuple = field(default_factory=tuple)

    @property
    def n_params(self):
        return self.values.size


def _nl_segments(nl, tag):
    # tag is "x" or "y"
    segs = []
    if nl is None:
        return segs
    if isinstance(nl, PolynomialMap):
        segs.append(("E" if tag == "x" else "F", nl.coeffs))
        return segs
    segs.append((f"W_{tag}", nl.W))
    segs.append((f"V_{tag}", nl.V))
    if nl.unified:
        segs.append((f"theta_g{tag}", nl.branches[0].coeffs))
    else:
        sizes = {b.coeffs.size for b in nl.branches}
        lows = {b.lowest_power for b in nl.branches}
        if len(sizes) > 1 or len(lows) > 1:
            raise ValueError("packing requires branches of equal shape")
        segs.append((f"theta_g{tag}", np.vstack([b.coeffs for b in nl.branches])))
    return segs


def pack(model):
    """Flatten all model parameters into a ParamVector.

    Order: A, B, C, D, then coupled coefficient blocks (state, output),
    then W/V factors and branch coefficients.  Unified decoupled maps
    contribute one shared branch coefficient vector.
    """
    segs = [("A", model.A), ("B", model.B), ("C", model.C), ("D", model.D)]
    segs += _nl_segments(model.state_nl, "x")
    segs += _nl_segments(model.output_nl, "y")
    layout = tuple((name, np.asarray(arr).shape) for name, arr in segs)
    values = np.concatenate([np.asarray(arr, dtype=float).ravel() for _, arr in segs])
    return ParamVector(values=values, layout=layout)


def unpack(template, values):
    """Rebuild a model like template from a flat parameter vector."""
    values = np.asarray(values, dtype=float).ravel()
    pv = pack(template)
    if values.size != pv.n_params:
        raise ValueError(f"expected {pv.n_params} parameters, got {values.size}")
    parts = {}
    pos = 0
    for name, shape in pv.layout:
        size = int(np.prod(shape, dtype=int))
        parts[name] = values[pos:pos + size].reshape(shape)
        pos += size

    def rebuild(nl, tag):
        if nl is None:
            return None
        if isinstance(nl, PolynomialMap):
            return PolynomialMap(nl.basis, parts["E" if tag == "x" else "F"])
        theta = parts[f"theta_g{tag}"]
        if nl.unified:
            shared = BranchPolynomial(theta.copy(), nl.branches[0].lowest_power)
            branches = [shared] * nl.r
        else:
            branches = [BranchPolynomial(theta[i].copy(), nl.branches[i].lowest_power)
                        for i in range(nl.r)]
        return DecoupledMap(parts[f"W_{tag}"], parts[f"V_{tag}"], branches,
                            unified=nl.unified)

    return StateSpaceModel(parts["A"], parts["B"], parts["C"], parts["D"],
                           state_nl=rebuild(template.state_nl, "x"),
                           output_nl=rebuild(template.output_nl, "y"),
                           sample_period=template.sample_period)


def count_dof(model, probe, rel_step=2e-6, abs_floor=2e-6, tol_factor=1e5):
    """Number of identifiable parameters: the numerical rank of the
    Jacobian of the simulated output with respect to all packed parameters.

    probe is a Dataset supplying the excitation (and optional x0).  Each
    column is a Richardson-extrapolated central difference (steps h and
    h/2).  The rank cut tol_factor * eps * max(J.shape) * sigma_max must
    sit above the differencing noise floor (around 1e-9 * sigma_max for
    the default steps) and below genuine identifiable directions; the
    default keeps roughly two orders of margin to each side.
    """
    pv = pack(model)
    th0 = pv.values
    x0 = probe.x0 if (probe.x0 is not None and probe.x0.size == model.n) else None

    def central(i, h):
        tp = th0.copy()
        tp[i] += h
        rp = simulate(unpack(model, tp), probe.u, x0=x0)
        tm = th0.copy()
        tm[i] -= h
        rm = simulate(unpack(model, tm), probe.u, x0=x0)
        if not (rp.stable and rm.stable):
            raise ValueError(f"probe drives perturbed model unstable (parameter {i})")
        return (rp.y - rm.y).ravel() / (2.0 * h)

    cols = np.empty((probe.n_samples * model.p, pv.n_params))
    for i in range(pv.n_params):
        h = max(abs_floor, rel_step * abs(th0[i]))
        cols[:, i] = (4.0 * central(i, 0.5 * h) - central(i, h)) / 3.0
    if not np.all(np.isfinite(cols)):
        raise ValueError("non-finite Jacobian entries; probe unsuitable")
    s = np.linalg.svd(cols, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    tol = tol_factor * np.finfo(float).eps * max(cols.shape) * s[0]
    return int(np.count_nonzero(s > tol))
