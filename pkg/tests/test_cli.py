import json

import numpy as np
import pytest
from click.testing import CliRunner

import polydec as pd
from polydec.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def table_map():
    W = np.array([[0.60, 0.52, 0.69], [0.60, 0.01, 0.95]])
    V = np.array([[0.87, 0.35, 0.56], [0.11, 0.24, 0.61]])
    branches = [pd.BranchPolynomial([0.5, 0.3], 2),
                pd.BranchPolynomial([-0.48, -0.28], 2),
                pd.BranchPolynomial([0.45, 0.25], 2)]
    return pd.DecoupledMap(W, V, branches)


def coupled_test_model():
    basis = pd.MonomialBasis(2, [[2, 0], [0, 2]])
    E = 0.02 * np.array([[0.5, -0.3], [0.2, 0.4]])
    return pd.StateSpaceModel(np.array([[0.5, 0.1], [-0.1, 0.4]]),
                              np.array([[1.0], [0.5]]),
                              np.array([[1.0, 0.3]]), np.array([[0.0]]),
                              state_nl=pd.PolynomialMap(basis, E))


def write_sim_dataset(model, path, seed=0, n=500, scale=1.0):
    u = scale * np.random.default_rng(seed).standard_normal(n)
    ds = pd.Dataset(u, pd.simulate(model, u).y, 1.0,
                    x0=np.zeros(model.n))
    pd.save_dataset(ds, path)
    return ds


class TestGenerate:
    def test_writes_datasets(self, runner, tmp_path):
        out = tmp_path / "data"
        res = runner.invoke(main, ["generate", "--system", "vdp",
                                   "--f0", "0.1", "--max-line", "10",
                                   "--rms", "20", "--realizations", "2",
                                   "--out", str(out)])
        assert res.exit_code == 0, res.output
        paths = res.output.strip().splitlines()
        assert len(paths) == 2
        ds = pd.load_dataset(paths[0])
        assert ds.sample_rate == pytest.approx(100.0)
        assert ds.n_samples == 1000

    def test_missing_fs_is_config_error(self, runner, tmp_path):
        res = runner.invoke(main, ["generate", "--system", "duffing",
                                   "--f0", "4", "--max-line", "8",
                                   "--rms", "10", "--out", str(tmp_path)])
        assert res.exit_code == 1
        assert "fs is required" in res.output

    def test_missing_flag_exits_one(self, runner):
        res = runner.invoke(main, ["generate", "--system", "vdp"])
        assert res.exit_code == 1


class TestDecoupleCommand:
    def test_decouples_state_map(self, runner, tmp_path):
        model = coupled_test_model()
        mpath = tmp_path / "model.json"
        dpath = tmp_path / "train.csv"
        pd.save_model(model, mpath)
        write_sim_dataset(model, dpath)
        out = tmp_path / "map.json"
        res = runner.invoke(main, ["decouple", "--model", str(mpath),
                                   "--data", str(dpath), "--r", "2",
                                   "--lambda", "0", "--restarts", "3",
                                   "--npoints", "400", "--out", str(out)])
        assert res.exit_code == 0, res.output
        dec = pd.load_map(out)
        assert dec.r == 2
        diag = json.loads((tmp_path / "map.diag.json").read_text())
        assert diag["r"] == 2
        assert diag["kruskal_unique"] is True
        assert diag["e_f"]["aggregate"] < 1e-6

    def test_missing_output_map_is_config_error(self, runner, tmp_path):
        model = coupled_test_model()
        mpath = tmp_path / "model.json"
        dpath = tmp_path / "train.csv"
        pd.save_model(model, mpath)
        write_sim_dataset(model, dpath)
        res = runner.invoke(main, ["decouple", "--model", str(mpath),
                                   "--data", str(dpath), "--target", "output",
                                   "--out", str(tmp_path / "m.json")])
        assert res.exit_code == 1
        assert "no output nonlinearity" in res.output

    def test_bad_lambda_grid(self, runner, tmp_path):
        model = coupled_test_model()
        mpath = tmp_path / "model.json"
        dpath = tmp_path / "train.csv"
        pd.save_model(model, mpath)
        write_sim_dataset(model, dpath)
        res = runner.invoke(main, ["decouple", "--model", str(mpath),
                                   "--data", str(dpath), "--lambda", "0,abc",
                                   "--out", str(tmp_path / "m.json")])
        assert res.exit_code == 1
        assert "--lambda" in res.output


class TestUnifyCommand:
    def test_unifies_table_map(self, runner, tmp_path):
        mpath = tmp_path / "map.json"
        out = tmp_path / "unified.json"
        rep = tmp_path / "report.json"
        pd.save_map(table_map(), mpath)
        res = runner.invoke(main, ["unify", "--map", str(mpath),
                                   "--out", str(out), "--report", str(rep)])
        assert res.exit_code == 0, res.output
        uni = pd.load_map(out)
        assert uni.unified
        assert uni.branches[0] is uni.branches[1]
        doc = json.loads(rep.read_text())
        assert doc["e_f"]["aggregate"] < 1e-8

    def test_rejects_coupled_map(self, runner, tmp_path):
        mpath = tmp_path / "map.json"
        pd.save_map(pd.PolynomialMap(pd.MonomialBasis(2, [[2, 0]]),
                                     np.array([[1.0]])), mpath)
        res = runner.invoke(main, ["unify", "--map", str(mpath),
                                   "--out", str(tmp_path / "o.json")])
        assert res.exit_code == 1
        assert "decoupled map" in res.output


class TestReduceCommand:
    def test_reduces_and_reports(self, runner, tmp_path):
        mpath = tmp_path / "map.json"
        out = tmp_path / "reduced.json"
        rep = tmp_path / "report.json"
        pd.save_map(table_map(), mpath)
        res = runner.invoke(main, ["reduce", "--map", str(mpath),
                                   "--to", "2", "--std", "0.2", "--seed", "0",
                                   "--out", str(out), "--report", str(rep)])
        assert res.exit_code == 0, res.output
        assert pd.load_map(out).r == 2
        doc = json.loads(rep.read_text())
        assert len(doc["steps"]) == 1
        assert doc["steps"][0]["removed_index"] == 1
        assert len(doc["steps"][0]["candidates"]) == 3


class TestFinetuneCommand:
    def test_recovers_linear_model(self, runner, tmp_path):
        A = np.array([[0.5]])
        B = np.array([[1.0]])
        C = np.array([[1.0]])
        D = np.array([[0.2]])
        truth = pd.StateSpaceModel(A, B, C, D)
        start = pd.StateSpaceModel(A * 1.05, B, C * 0.95, D)
        mpath = tmp_path / "start.json"
        tpath = tmp_path / "train.csv"
        vpath = tmp_path / "val.csv"
        out = tmp_path / "fit.json"
        trace = tmp_path / "trace.csv"
        pd.save_model(start, mpath)
        write_sim_dataset(truth, tpath, seed=1, n=300)
        write_sim_dataset(truth, vpath, seed=2, n=300)
        res = runner.invoke(main, ["finetune", "--model", str(mpath),
                                   "--data", str(tpath),
                                   "--val-data", str(vpath),
                                   "--out", str(out), "--trace", str(trace)])
        assert res.exit_code == 0, res.output
        assert "e_rms_val=" in res.output
        fit = pd.load_model(out)
        ds = pd.load_dataset(tpath)
        assert pd.e_rms(ds.y, pd.simulate(fit, ds.u, x0=ds.x0).y) < 1e-7
        header = trace.read_text().splitlines()[0]
        assert header == "iter,V_LS,lambda,e_rms_train,e_rms_val"

    def test_unstable_start_exits_two(self, runner, tmp_path):
        bad = pd.StateSpaceModel(np.array([[1.5]]), np.array([[1.0]]),
                                 np.array([[1.0]]), np.array([[0.0]]))
        good = pd.StateSpaceModel(np.array([[0.5]]), np.array([[1.0]]),
                                  np.array([[1.0]]), np.array([[0.0]]))
        mpath = tmp_path / "bad.json"
        dpath = tmp_path / "train.csv"
        pd.save_model(bad, mpath)
        write_sim_dataset(good, dpath)
        res = runner.invoke(main, ["finetune", "--model", str(mpath),
                                   "--data", str(dpath),
                                   "--out", str(tmp_path / "o.json")])
        assert res.exit_code == 2
        assert "unstable" in res.output


class TestClassifyCommand:
    def test_spring_model(self, runner, tmp_path):
        fs = 100.0
        ts = 1.0 / fs
        w0 = 2 * np.pi * 2.0
        A = np.array([[1.0, ts], [-w0 ** 2 * ts, 1.0 - 2 * 0.1 * w0 * ts]])
        B = np.array([[0.0], [ts]])
        C = np.array([[1.0, 0.0]])
        D = np.array([[0.0]])
        nl = pd.DecoupledMap(np.array([[0.0], [-50.0 * ts]]),
                             np.array([[1.0], [0.0]]),
                             [pd.BranchPolynomial([0.0, 1.0], 2)])
        model = pd.StateSpaceModel(A, B, C, D, state_nl=nl, sample_period=ts)
        mpath = tmp_path / "model.json"
        dpath = tmp_path / "data.csv"
        pd.save_model(model, mpath)
        t = np.arange(800) / fs
        u = np.sin(2 * np.pi * 1.3 * t) + 0.5 * np.sin(2 * np.pi * 0.4 * t)
        ds = pd.Dataset(u, pd.simulate(model, u).y, fs, x0=np.zeros(2))
        pd.save_dataset(ds, dpath)
        res = runner.invoke(main, ["classify", "--model", str(mpath),
                                   "--data", str(dpath)])
        assert res.exit_code == 0, res.output
        doc = json.loads(res.output)
        assert doc["label"] == "spring"
        assert doc["precision"] > 0.99
        assert abs(doc["theta_z"][1]) < 0.05


class TestPipelineCommand:
    def test_runs_config(self, runner, tmp_path):
        truth = pd.vdp_truth()
        mpath = tmp_path / "truth.json"
        pd.save_model(truth, mpath)
        out = tmp_path / "run"
        cfg = {"model": str(mpath),
               "train": {"system": "vdp", "f0": 0.1, "lines": "all",
                         "max_line": 40, "rms": 50.0, "realizations": 2,
                         "seed": 0},
               "validation": {"system": "vdp", "f0": 0.1, "lines": "all",
                              "max_line": 40, "rms": 50.0, "realizations": 1,
                              "seed": 99},
               "decouple": {"r": 3, "lambda_grid": [0.0], "restarts": 2},
               "target_r": 3, "out_dir": str(out), "seed": 0}
        cpath = tmp_path / "cfg.json"
        cpath.write_text(json.dumps(cfg))
        res = runner.invoke(main, ["pipeline", "--config", str(cpath),
                                   "--deterministic"])
        assert res.exit_code == 0, res.output
        assert "stop_reason=target_reached" in res.output
        assert (out / "final.json").exists()
        assert (out / "report.json").exists()
        report = json.loads((out / "report.json").read_text())
        assert [r["stage"] for r in report["records"]] == \
            ["initial", "decouple", "finetune"]

    def test_unknown_key_exits_one(self, runner, tmp_path):
        cpath = tmp_path / "cfg.json"
        cpath.write_text(json.dumps({"target_r": 1, "nonsense": True}))
        res = runner.invoke(main, ["pipeline", "--config", str(cpath)])
        assert res.exit_code == 1
        assert "unknown pipeline config keys" in res.output

    def test_bad_json_exits_one(self, runner, tmp_path):
        cpath = tmp_path / "cfg.json"
        cpath.write_text("{not json")
        res = runner.invoke(main, ["pipeline", "--config", str(cpath)])
        assert res.exit_code == 1
        assert "not valid JSON" in res.output

    def test_unstable_initial_exits_two(self, runner, tmp_path):
        bad = pd.StateSpaceModel(np.array([[1.5]]), np.array([[1.0]]),
                                 np.array([[1.0]]), np.array([[0.0]]))
        good = pd.StateSpaceModel(np.array([[0.5]]), np.array([[1.0]]),
                                  np.array([[1.0]]), np.array([[0.0]]))
        mpath = tmp_path / "bad.json"
        dpath = tmp_path / "train.csv"
        pd.save_model(bad, mpath)
        write_sim_dataset(good, dpath, n=100)
        cpath = tmp_path / "cfg.json"
        cpath.write_text(json.dumps({"model": str(mpath),
                                     "train": str(dpath)}))
        res = runner.invoke(main, ["pipeline", "--config", str(cpath)])
        assert res.exit_code == 2
        assert "unstable" in res.output


class TestSpectrumCommand:
    def test_writes_csv(self, runner, tmp_path):
        good = pd.StateSpaceModel(np.array([[0.5]]), np.array([[1.0]]),
                                  np.array([[1.0]]), np.array([[0.0]]))
        dpath = tmp_path / "data.csv"
        write_sim_dataset(good, dpath, n=256)
        out = tmp_path / "spec.csv"
        res = runner.invoke(main, ["spectrum", "--data", str(dpath),
                                   "--out", str(out)])
        assert res.exit_code == 0, res.output
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "freq_hz,mag_db_y1"
        assert len(lines) == 256 // 2 + 1 + 1
