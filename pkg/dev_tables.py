"""Unification and branch-removal checks on the two worked examples."""
import time
import numpy as np

from polydec.model import BranchPolynomial, DecoupledMap
from polydec.reduction import (function_error, function_outputs, remove_branch,
                               unify_branches)

V = np.array([[0.87, 0.35, 0.56], [0.11, 0.24, 0.61]])
W = np.array([[0.60, 0.52, 0.69], [0.60, 0.01, 0.95]])
branches = [BranchPolynomial([0.5, 0.3], 2),
            BranchPolynomial([-0.48, -0.28], 2),
            BranchPolynomial([0.45, 0.25], 2)]
dec = DecoupledMap(W, V, branches)

rng = np.random.default_rng(12345)
pts = rng.standard_normal((1000, 2))
q = function_outputs(dec, pts)

# --- unification
t0 = time.time()
uni, urep = unify_branches(dec, pts)
t_uni = time.time() - t0
print(f"unify: candidate={urep.candidate} step1 e_f={urep.e_f_step1.per_output_ef} "
      f"post-opt e_f={urep.e_f.per_output_ef} agg={urep.e_f.aggregate_ef:.5f} ({t_uni:.2f}s)")
print(f"  unified: {uni.unified}, shared coeffs: {uni.branches[0].coeffs}")

# --- removal
t0 = time.time()
red, rrep = remove_branch(dec, pts, refit="linear")
t_rem = time.time() - t0
print(f"\nremove (linear refit): dropped branch {rrep.removed_index} ({t_rem:.2f}s)")
for c in rrep.candidates:
    print(f"  cand {c.index}: plain agg={c.e_f_plain.aggregate_ef:.5f} "
          f"refit agg={c.e_f_refit.aggregate_ef:.5f} per-out {c.e_f_refit.per_output_ef}")
best = [c for c in rrep.candidates if c.index == rrep.removed_index][0]
impr = best.e_f_plain.aggregate_ef / best.e_f_refit.aggregate_ef
print(f"  compensation improvement on winner: {impr:.1f}x (need >= 5)")
print(f"  result W =\n{red.W}")

red0, rrep0 = remove_branch(dec, pts, refit="none")
print(f"\nremove (no refit) picks {rrep0.removed_index}, agg {rrep0.e_f.aggregate_ef:.5f}")
rednl, rrepnl = remove_branch(dec, pts, refit="nonlinear")
print(f"remove (nonlinear) picks {rrepnl.removed_index}, agg {rrepnl.e_f.aggregate_ef:.6f}")
