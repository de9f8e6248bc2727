import numpy as np
import pytest

import polydec as pd
from polydec import benchmarks as bm


class TestMultisine:
    def test_rms_and_shape(self):
        spec = bm.MultisineSpec(f0=0.01, fs=100.0, lines="all", max_line=400,
                                rms=50.0, seed=7, realizations=3)
        u = bm.multisine(spec)
        assert u.shape == (3, 10000)
        for r in range(3):
            assert np.sqrt(np.mean(u[r] ** 2)) == pytest.approx(50.0, abs=1e-9)

    def test_energy_only_on_selected_lines(self):
        lines = np.array([3, 5, 11])
        spec = bm.MultisineSpec(f0=1.0, fs=64.0, lines=lines, rms=1.0, seed=0)
        u = bm.multisine(spec)[0]
        U = np.abs(np.fft.rfft(u))
        excited = np.zeros(U.size, dtype=bool)
        excited[lines] = True
        assert U[excited].min() > 1e-3
        assert U[~excited].max() < 1e-10

    def test_odd_selection(self):
        spec = bm.MultisineSpec(f0=1.0, fs=64.0, lines="odd", max_line=9, rms=1.0)
        u = bm.multisine(spec)[0]
        U = np.abs(np.fft.rfft(u))
        assert U[[1, 3, 5, 7, 9]].min() > 1e-3
        assert U[[2, 4, 6, 8]].max() < 1e-10

    def test_seed_reproducible_realizations_differ(self):
        spec = bm.MultisineSpec(f0=1.0, fs=64.0, lines="all", max_line=10,
                                rms=1.0, seed=5, realizations=2)
        a = bm.multisine(spec)
        b = bm.multisine(spec)
        np.testing.assert_array_equal(a, b)
        assert np.abs(a[0] - a[1]).max() > 1e-3

    def test_non_integer_period_rejected(self):
        with pytest.raises(ValueError):
            bm.multisine(bm.MultisineSpec(f0=0.3, fs=100.0, lines="all",
                                          max_line=5))

    def test_nyquist_guard(self):
        with pytest.raises(ValueError):
            bm.multisine(bm.MultisineSpec(f0=1.0, fs=64.0, lines="all",
                                          max_line=32))

    def test_per_line_amplitude_mode(self):
        spec = bm.MultisineSpec(f0=1.0, fs=64.0, lines=np.array([2]),
                                rms=None, amplitude=2.0, seed=1)
        u = bm.multisine(spec)[0]
        # a single cosine of amplitude 2: bin magnitude N*amp/2
        U = np.abs(np.fft.rfft(u))
        assert U[2] == pytest.approx(64.0 * 2.0 / 2.0, rel=1e-9)
        assert np.delete(U, 2).max() < 1e-9


class TestVdp:
    def test_generator_matches_model_simulation(self):
        spec = bm.MultisineSpec(f0=0.01, fs=100.0, lines="all", max_line=400,
                                rms=50.0, seed=7)
        u = bm.multisine(spec)[0]
        ds, truth = bm.simulate_vdp(bm.VdpParams(), u, settle_periods=1)
        res = pd.simulate(truth, ds.u, x0=ds.x0)
        scale = np.sqrt(np.mean(ds.y ** 2))
        assert np.abs(res.y - ds.y).max() / scale < 1e-13

    def test_truth_model_structure(self):
        truth = bm.vdp_truth()
        assert truth.n == 2 and truth.m == 1 and truth.p == 1
        assert truth.state_nl.basis.exponents.tolist() == [[2, 1]]
        assert truth.output_nl is None
        assert truth.A[0, 1] == pytest.approx(0.01)

    def test_zero_settle_starts_from_origin(self):
        u = bm.multisine(bm.MultisineSpec(f0=0.01, fs=100.0, lines="all",
                                          max_line=400, rms=50.0, seed=1))[0]
        ds, _ = bm.simulate_vdp(None, u, settle_periods=0)
        np.testing.assert_array_equal(ds.x0, [0.0, 0.0])
        assert ds.y[0, 0] == 0.0


def _band_multisine(fs, npp, lo_line, hi_line, rms, seed):
    f0 = fs / npp
    return bm.multisine(bm.MultisineSpec(
        f0=f0, fs=fs, lines=np.arange(lo_line, hi_line + 1), rms=rms, seed=seed))[0]


class TestBoucWen:
    def test_linear_limit_matches_analytic_frf(self):
        # gamma = delta = 0 collapses the hysteresis to a stiffness alpha
        p = bm.BoucWenParams(gamma=0.0, delta=0.0)
        fs, npp = 750.0, 2048
        lines = np.arange(14, 410)
        u = _band_multisine(fs, npp, 14, 409, 50.0, seed=3)
        ds = bm.simulate_bouc_wen(p, u, fs, oversample=40, settle_periods=3)
        U = np.fft.rfft(ds.u[:, 0])
        Y = np.fft.rfft(ds.y[:, 0])
        w = 2j * np.pi * (fs / npp) * lines
        H = 1.0 / (p.m * w ** 2 + p.c * w + (p.k + p.alpha))
        assert np.abs(Y[lines] / U[lines] - H).max() / np.abs(H).max() < 1e-6

    def test_step_halving_convergence(self):
        p = bm.BoucWenParams()
        fs = 750.0
        u = _band_multisine(fs, 2048, 14, 409, 50.0, seed=3)
        y20 = bm.simulate_bouc_wen(p, u, fs, oversample=20, settle_periods=2).y
        y40 = bm.simulate_bouc_wen(p, u, fs, oversample=40, settle_periods=2).y
        rel = np.sqrt(np.mean((y20 - y40) ** 2) / np.mean(y40 ** 2))
        assert rel < 1e-3

    def test_hysteresis_is_active(self):
        # nonlinear response differs from the linearized one
        fs = 750.0
        u = _band_multisine(fs, 2048, 14, 409, 50.0, seed=5)
        y_nl = bm.simulate_bouc_wen(bm.BoucWenParams(), u, fs, 20, 2).y
        y_l = bm.simulate_bouc_wen(bm.BoucWenParams(gamma=0.0, delta=0.0),
                                   u, fs, 20, 2).y
        assert pd.e_rms(y_nl, y_l) > 0.01

    def test_linear_seed_model(self):
        mdl = bm.bouc_wen_linear(bm.BoucWenParams(), 750.0)
        assert mdl.n == 3 and mdl.state_nl is None
        # discretization of a damped system stays strictly stable
        assert np.abs(np.linalg.eigvals(mdl.A)).max() < 1.0


class TestDuffing:
    def test_linear_limit_matches_analytic_frf(self):
        p = bm.DuffingParams(beta=0.0)
        fs, npp = 750.0, 2048
        lines = np.arange(14, 410)
        u = _band_multisine(fs, npp, 14, 409, 5.0, seed=4)
        ds = bm.simulate_duffing(p, u, fs, oversample=40, settle_periods=3)
        U = np.fft.rfft(ds.u[:, 0])
        Y = np.fft.rfft(ds.y[:, 0])
        w = 2j * np.pi * (fs / npp) * lines
        H = 1.0 / (p.m * w ** 2 + p.c * w + p.alpha)
        assert np.abs(Y[lines] / U[lines] - H).max() / np.abs(H).max() < 1e-6

    def test_static_equilibrium(self):
        # constant force settles to the root of alpha*y + beta*y^3 = u
        p = bm.DuffingParams()
        u = np.full(256, 3.0)
        ds = bm.simulate_duffing(p, u, 256.0, oversample=20, settle_periods=30)
        y_end = ds.y[-1, 0]
        assert p.alpha * y_end + p.beta * y_end ** 3 == pytest.approx(3.0, abs=1e-6)

    def test_cubic_distortion_present(self):
        fs = 750.0
        u = _band_multisine(fs, 2048, 14, 409, 5.0, seed=4)
        y_nl = bm.simulate_duffing(bm.DuffingParams(), u, fs, 20, 3).y
        y_l = bm.simulate_duffing(bm.DuffingParams(beta=0.0), u, fs, 20, 3).y
        assert pd.e_rms(y_nl, y_l) > 0.01


class TestOutputNoise:
    def test_snr_level(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal(200000)
        ds = pd.Dataset(np.zeros(200000), y, 1.0)
        noisy = bm.add_output_noise(ds, 40.0, seed=1)
        e = noisy.y - ds.y
        snr = 10 * np.log10(np.mean(ds.y ** 2) / np.mean(e ** 2))
        assert snr == pytest.approx(40.0, abs=0.1)

    def test_seed_reproducible(self):
        ds = pd.Dataset(np.zeros(100), np.ones(100), 1.0)
        a = bm.add_output_noise(ds, 20.0, seed=3)
        b = bm.add_output_noise(ds, 20.0, seed=3)
        np.testing.assert_array_equal(a.y, b.y)

    def test_infinite_snr_is_identity(self):
        ds = pd.Dataset(np.zeros(50), np.ones(50), 1.0)
        out = bm.add_output_noise(ds, np.inf)
        np.testing.assert_array_equal(out.y, ds.y)
