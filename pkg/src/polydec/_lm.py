"""Shared Levenberg-Marquardt core.

Minimizes sum(r(x)^2) with the Marquardt-scaled normal equations
(J'J + lam*diag(J'J)) delta = -J'r.  A rejected step raises lam and
re-solves with the same Jacobian; an accepted step lowers it.  The
residual callable may return None to veto a candidate (e.g. an unstable
simulation); an optional accept callback can veto on top of the
cost-decrease requirement.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LmInfo:
    converged: bool
    n_iter: int
    cost: float
    cost0: float
    status: str
    trace: list = field(default_factory=list)


def minimize_lm(residual, jacobian, x0, max_iter=100, lam0=1e-3, lam_up=10.0,
                lam_down=10.0, gtol=1e-14, steptol=1e-12, lam_max=1e12,
                accept=None, on_accept=None):
    """Run the iteration from x0; returns (x, LmInfo).

    residual(x) -> 1-D array or None (invalid candidate).
    jacobian(x) -> 2-D array (len(r), len(x)).
    accept(x_new, r_new) -> bool, extra veto on top of cost decrease.
    on_accept(it, x, cost, lam) is called after each accepted step.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = residual(x)
    if r is None:
        raise ValueError("residual undefined at the initial point")
    cost = float(r @ r)
    cost0 = cost
    lam = float(lam0)
    info = LmInfo(converged=False, n_iter=0, cost=cost, cost0=cost0, status="maxiter")
    accepted_any = False
    for it in range(1, max_iter + 1):
        info.n_iter = it
        J = jacobian(x)
        g = J.T @ r
        if np.abs(g).max() <= gtol:
            info.status = "gtol"
            info.converged = True
            break
        JtJ = J.T @ J
        dg = np.diag(JtJ).copy()
        if (dg <= 0).all():
            info.status = "zero_jacobian"
            break
        dg[dg <= 0] = dg[dg > 0].min()
        moved = False
        while True:
            try:
                delta = np.linalg.solve(JtJ + lam * np.diag(dg), -g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None and np.all(np.isfinite(delta)):
                xn = x + delta
                rn = residual(xn)
                if rn is not None:
                    cn = float(rn @ rn)
                    if cn < cost and (accept is None or accept(xn, rn)):
                        x, r, cost = xn, rn, cn
                        lam = max(lam / lam_down, 1e-14)
                        accepted_any = True
                        moved = True
                        info.trace.append((it, cost, lam))
                        if on_accept is not None:
                            on_accept(it, x, cost, lam)
                        if np.linalg.norm(delta) <= steptol * (np.linalg.norm(x) + steptol):
                            info.status = "steptol"
                            info.converged = True
                        break
            lam *= lam_up
            if lam > lam_max:
                info.status = "lambda_max"
                break
        if not moved or info.status in ("steptol", "lambda_max"):
            break
    if not accepted_any and info.status == "lambda_max":
        info.status = "no_accept"
    info.cost = cost
    return x, info
