"""Bouc-Wen rehearsal: coupled fit from the linearization, then decouple+unify."""
import time

import numpy as np

import polydec as pd

t0 = time.time()
fs = 750.0
lines = list(range(5, 151))
base = {"system": "boucwen", "fs": fs, "f0": 1.0, "lines": lines,
        "rms": 50.0, "seed": 0}
train = pd.generate_records({**base, "realizations": 2, "snr_db": 40.0})
val = pd.generate_records({**base, "realizations": 3})[2:]
print(f"gen {time.time()-t0:.1f}s N={train[0].n_samples} "
      f"y_rms={np.sqrt(np.mean(train[0].y**2)):.3e}", flush=True)

lin = pd.bouc_wen_linear(pd.BoucWenParams(), fs)
lin_val = pd.e_rms(val[0].y, pd.simulate(lin, val[0].u, x0=val[0].x0).y)
print(f"linear model val e_rms={lin_val:.4f}", flush=True)

basis = pd.MonomialBasis.complete(4, [2, 3])
start = pd.StateSpaceModel(lin.A, lin.B, lin.C, lin.D,
                           state_nl=pd.PolynomialMap(
                               basis, np.zeros((3, basis.n_mono))),
                           sample_period=lin.sample_period)
fit, trace = pd.levenberg_marquardt(
    start, train, pd.LmOptions(max_iter=300, validation=val))
print(f"coupled fit {time.time()-t0:.1f}s iters={len(trace.rows)} "
      f"train={trace.e_rms_train:.4f} val={trace.e_rms_val:.4f}", flush=True)
assert trace.e_rms_val <= 0.06, trace.e_rms_val

cfg = pd.PipelineConfig(model=fit, train=train, validation=val,
                        decouple={"r": 3, "lambda_grid": (0.0,), "restarts": 5},
                        unify=True, target_r=3, seed=0)
rep = pd.run_pipeline(cfg)
for r in rep.records:
    print(f"{r.stage:9s} {r.target:6s} r_x={r.r_x} train={r.e_rms_train:.3e} "
          f"val={r.e_rms_val:.3e} dof={r.dof}", flush=True)
final_val = rep.records[-1].e_rms_val
print(f"total {time.time()-t0:.1f}s stop={rep.stop_reason} "
      f"unified val={final_val:.4f} ratio={final_val/trace.e_rms_val:.2f}",
      flush=True)
assert final_val <= 1.5 * trace.e_rms_val, (final_val, trace.e_rms_val)
print("C3 rehearsal OK")
