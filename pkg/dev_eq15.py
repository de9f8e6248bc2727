"""Exact-recovery check: f(x1,x2) = x1^2 x2 decouples at r=3 but not r=2."""
import time
import numpy as np

from polydec.model import MonomialBasis, PolynomialMap, eval_nl
from polydec.decoupling import (DecoupleOptions, OperatingPointSet, decouple,
                                build_jacobian_tensor, cpd_als, CpdOptions)

basis = MonomialBasis(2, np.array([[2, 1]]))
f = PolynomialMap(basis, np.array([[1.0]]))

rng = np.random.default_rng(0)
pts = OperatingPointSet(rng.standard_normal((1000, 2)), source="gaussian", seed=0)

gx = np.linspace(-2, 2, 21)
GX, GY = np.meshgrid(gx, gx)
grid = np.column_stack([GX.ravel(), GY.ravel()])
q_true = eval_nl(f, grid)

t0 = time.time()
res3 = decouple(f, pts, DecoupleOptions(r=3, seed=0, lambda_grid=(0.0,), restarts=5))
t3 = time.time() - t0
q3 = eval_nl(res3.map, grid)
print(f"r=3: e_cpd={res3.e_cpd:.3e}  e_f={res3.e_f.aggregate_ef:.3e}  "
      f"max grid err={np.abs(q3 - q_true).max():.3e}  kruskal={res3.kruskal}  ({t3:.1f}s)")

t0 = time.time()
res2 = decouple(f, pts, DecoupleOptions(r=2, seed=0, lambda_grid=(0.0,), restarts=20))
t2 = time.time() - t0
print(f"r=2 best-of-20: e_f={res2.e_f.aggregate_ef:.4f}  ({t2:.1f}s)")
print(f"total {t3 + t2:.1f}s (budget 10s)")
