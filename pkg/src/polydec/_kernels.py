"""Numba-compiled simulation loop shared by all state-space evaluations."""
import numpy as np
from numba import njit

# nonlinearity kinds
NL_NONE = 0
NL_COUPLED = 1
NL_DECOUPLED = 2


@njit(cache=True)
def _monomials_into(vals, expo, out):
    # vals may be longer than expo.shape[1]; only the leading entries are used
    for j in range(expo.shape[0]):
        acc = 1.0
        for v in range(expo.shape[1]):
            e = expo[j, v]
            if e > 0:
                b = vals[v]
                for _ in range(e):
                    acc *= b
        out[j] = acc


@njit(cache=True)
def simulate_loop(A, B, C, D, u, x0, y_bound,
                  kx, xe, xc, wx, vx, tx,
                  ky, ye, yc, wy, vy, ty):
    """Run the state recursion.

    kx/ky select the state/output nonlinearity kind (0 none, 1 coupled,
    2 decoupled).  Coupled maps use exponent matrix xe/ye and coefficients
    xc/yc; decoupled maps use factor matrices wx/vx (wy/vy) and dense
    branch coefficients tx/ty indexed by power (column d = coefficient of
    z**d).  Unused blocks must be passed as empty arrays.

    Returns (y, x, zx, zy, n_valid, stable).  On divergence the remaining
    samples stay zero and n_valid marks the count of valid output samples.
    """
    n = A.shape[0]
    m = B.shape[1]
    p = C.shape[0]
    N = u.shape[0]
    rx = wx.shape[1]
    ry = wy.shape[1]
    x = np.zeros((N, n))
    y = np.zeros((N, p))
    zx = np.zeros((N, rx))
    zy = np.zeros((N, ry))
    vals = np.empty(n + m)
    phix = np.empty(xc.shape[1])
    phiy = np.empty(yc.shape[1])
    gx = np.empty(rx)
    gy = np.empty(ry)
    state = x0.copy()
    stable = True
    n_valid = N
    for k in range(N):
        for i in range(n):
            x[k, i] = state[i]
            vals[i] = state[i]
        for j in range(m):
            vals[n + j] = u[k, j]
        yk = C.dot(state) + D.dot(u[k])
        if ky == NL_COUPLED:
            _monomials_into(vals, ye, phiy)
            yk += yc.dot(phiy)
        elif ky == NL_DECOUPLED:
            for i in range(ry):
                z = 0.0
                for v in range(vy.shape[0]):
                    z += vy[v, i] * vals[v]
                zy[k, i] = z
                acc = 0.0
                for d in range(ty.shape[1] - 1, -1, -1):
                    acc = acc * z + ty[i, d]
                gy[i] = acc
            yk += wy.dot(gy)
        ok = True
        for j in range(p):
            if not np.isfinite(yk[j]) or abs(yk[j]) > y_bound:
                ok = False
        if not ok:
            stable = False
            n_valid = k
            break
        for j in range(p):
            y[k, j] = yk[j]
        xn = A.dot(state) + B.dot(u[k])
        if kx == NL_COUPLED:
            _monomials_into(vals, xe, phix)
            xn += xc.dot(phix)
        elif kx == NL_DECOUPLED:
            for i in range(rx):
                z = 0.0
                for v in range(vx.shape[0]):
                    z += vx[v, i] * vals[v]
                zx[k, i] = z
                acc = 0.0
                for d in range(tx.shape[1] - 1, -1, -1):
                    acc = acc * z + tx[i, d]
                gx[i] = acc
            xn += wx.dot(gx)
        bad = False
        for i in range(n):
            if not np.isfinite(xn[i]):
                bad = True
        if bad:
            stable = False
            n_valid = k + 1
            break
        state = xn
    return y, x, zx, zy, n_valid, stable
