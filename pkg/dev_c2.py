"""Van der Pol end-to-end rehearsal: truth -> r=3 -> r=1."""
import time

import polydec as pd

t0 = time.time()
recs = pd.generate_records({"system": "vdp", "f0": 0.01, "lines": "all",
                            "max_line": 400, "rms": 50.0, "realizations": 5,
                            "seed": 0})
train, val = recs[:4], recs[4:]
print(f"gen {time.time()-t0:.1f}s  N={train[0].n_samples}", flush=True)

cfg = pd.PipelineConfig(model=pd.vdp_truth(), train=train, validation=val,
                        decouple={"r": 3, "lambda_grid": (0.0,), "restarts": 5},
                        target_r=3, seed=0)
rep = pd.run_pipeline(cfg)
for r in rep.records:
    print(f"{r.stage:9s} {r.target:6s} r_x={r.r_x} train={r.e_rms_train:.3e} "
          f"val={r.e_rms_val:.3e} dof={r.dof}", flush=True)
t1 = time.time() - t0
print(f"phase1 {t1:.1f}s stop={rep.stop_reason}", flush=True)
assert rep.records[-1].e_rms_val < 1e-6, rep.records[-1].e_rms_val

cfg2 = pd.PipelineConfig(model=rep.final_model, train=train, validation=val,
                         target_r=1, seed=1)
rep2 = pd.run_pipeline(cfg2)
for r in rep2.records:
    print(f"{r.stage:9s} {r.target:6s} r_x={r.r_x} train={r.e_rms_train:.3e} "
          f"val={r.e_rms_val:.3e} dof={r.dof}", flush=True)
print(f"total {time.time()-t0:.1f}s stop={rep2.stop_reason} "
      f"final val={rep2.records[-1].e_rms_val:.5f}", flush=True)
assert rep2.records[-1].e_rms_val <= 0.02, rep2.records[-1].e_rms_val
print("C2 rehearsal OK")
