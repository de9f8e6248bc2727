"""Duffing surrogate classification rehearsal (semi-implicit Euler)."""
import numpy as np

import polydec as pd

p = pd.DuffingParams()
fs = 4096.0
ts = 1.0 / fs
m, c, al, be = p.m, p.c, p.alpha, p.beta
A = np.array([[1.0 - al * ts ** 2 / m, ts - c * ts ** 2 / m],
              [-al * ts / m, 1.0 - c * ts / m]])
B = np.array([[ts ** 2 / m], [ts / m]])
C = np.array([[1.0, 0.0]])
D = np.array([[0.0]])
E = np.array([[-be * ts ** 2 / m], [-be * ts / m]])
surr = pd.StateSpaceModel(A, B, C, D,
                          state_nl=pd.PolynomialMap(pd.MonomialBasis(2, [[3, 0]]), E),
                          sample_period=ts)

for rms in (20.0, 50.0, 100.0, 200.0):
    u = pd.multisine(pd.MultisineSpec(f0=1.0, fs=fs, lines=np.arange(5, 41),
                                      rms=rms, seed=3))[0]
    res = pd.simulate(surr, u)
    y_rms = np.sqrt(np.mean(res.y ** 2))
    print(f"rms={rms:6.1f} stable={res.stable} y_rms={y_rms:.3e} "
          f"cubic/linear={(y_rms**2 * be / al):.3f}")

rms = 100.0
u = pd.multisine(pd.MultisineSpec(f0=1.0, fs=fs, lines=np.arange(5, 41),
                                  rms=rms, seed=3))[0]
res = pd.simulate(surr, u)
pts = pd.sample_operating_points(res.x, n_points=500, seed=0)
dec = pd.decouple(surr.state_nl, pts,
                  pd.DecoupleOptions(r=1, seed=0, lambda_grid=(0.0,), restarts=3))
print(f"decouple e_cpd={dec.e_cpd:.2e} e_f={dec.e_f.aggregate_ef:.2e} "
      f"V={dec.map.V.ravel()}")
mdl1 = pd.StateSpaceModel(A, B, C, D, state_nl=dec.map, sample_period=ts)
ds = pd.Dataset(u, res.y, fs)
rep = pd.classify_model(mdl1, ds)
print(f"label={rep.label} precision={rep.precision:.4f} theta_z={rep.theta_z}")
assert abs(rep.theta_z[1]) < 0.05, rep.theta_z

theta, prec = pd.decompose_z(res.y[:, 0] ** 2, res.y[:, 0], fs)
print(f"y^2: precision={prec:.3f} label={pd.classify(theta, prec)}")
print("C8 rehearsal OK")
