import json
import subprocess
import sys

import numpy as np
import pytest

from gap_forge import data_io as io
from gap_forge.cli import main
from gap_forge.neural import Layer, init_network, make_rng
from gap_forge.probability import validate_joint
from gap_forge.trainer import PrivatizerArch, TrainedGAP, TrainingConfig, privatizer_network

from conftest import CANONICAL


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out.strip(), out.err


def kv(line):
    return dict(tok.split("=", 1) for tok in line.split())


@pytest.fixture
def joint_file(tmp_path):
    p = tmp_path / "joint.csv"
    io.save_joint(validate_joint(CANONICAL), p)
    return p


@pytest.fixture
def data_file(tmp_path):
    p = tmp_path / "data.csv"
    io.save_dataset(io.sample_dataset(validate_joint(CANONICAL), 10_000, seed=1), p, seed=1)
    return p


class TestSolve:
    def test_budget_zero(self, capsys, joint_file, tmp_path):
        out = tmp_path / "sol.json"
        code, line, _ = run(capsys, "solve", "--joint", joint_file, "--loss", "log", "--distortion", "hamming", "--budget", 0, "--out", out)
        assert code == 0
        assert set(kv(line)) == {"leakage", "distortion", "converged"}
        assert float(kv(line)["leakage"]) == pytest.approx(0.278072, abs=1e-6)
        assert json.loads(out.read_text())["meta"]["converged"] is True

    def test_negative_budget_is_usage_error(self, capsys, joint_file, tmp_path):
        code, _, _ = run(capsys, "solve", "--joint", joint_file, "--loss", "log", "--budget", -1, "--out", tmp_path / "o.json")
        assert code == 1

    def test_missing_joint(self, capsys, tmp_path):
        missing = tmp_path / "nope.csv"
        code, _, err = run(capsys, "solve", "--joint", missing, "--loss", "log", "--budget", 0, "--out", tmp_path / "o.json")
        assert code == 2 and str(missing) in err

    def test_not_converged_still_writes(self, capsys, joint_file, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"max_iters": 1}))
        out = tmp_path / "o.json"
        code, line, _ = run(capsys, "solve", "--joint", joint_file, "--loss", "log", "--budget", 0.2, "--config", cfg, "--out", out)
        assert code == 3 and kv(line)["converged"] == "false"
        assert json.loads(out.read_text())["meta"]["converged"] is False

    def test_squared_and_custom(self, capsys, joint_file, tmp_path):
        table = tmp_path / "d.csv"
        table.write_text("xhat,x,d\n0,0,0\n0,1,1\n1,0,1\n1,1,0\n")
        a = run(capsys, "solve", "--joint", joint_file, "--loss", "zero-one", "--distortion", f"custom:{table}", "--budget", 0.1, "--out", tmp_path / "a.json")
        b = run(capsys, "solve", "--joint", joint_file, "--loss", "zero-one", "--distortion", "squared", "--budget", 0.1, "--out", tmp_path / "b.json")
        assert a[0] == b[0] == 0
        # on a 0/1 embedding squared error is hamming
        assert kv(a[1])["leakage"] == kv(b[1])["leakage"] == "0.7"

    def test_bad_distortion(self, capsys, joint_file, tmp_path):
        code, _, _ = run(capsys, "solve", "--joint", joint_file, "--loss", "log", "--distortion", "l1", "--budget", 0.1, "--out", tmp_path / "o.json")
        assert code == 1


class TestCurve:
    def test_three_rows_monotone(self, capsys, joint_file, tmp_path):
        out = tmp_path / "c.csv"
        code, _, _ = run(capsys, "curve", "--joint", joint_file, "--budgets", "0:0.5:0.25", "--out", out)
        assert code == 0
        pts = io.load_curve(out)
        assert len(pts) == 3
        assert pts[0].leakage_zero_one >= pts[1].leakage_zero_one >= pts[2].leakage_zero_one
        assert pts[0].leakage_log >= pts[1].leakage_log >= pts[2].leakage_log

    def test_parallel_byte_identical(self, capsys, joint_file, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(capsys, "curve", "--joint", joint_file, "--budgets", "0:0.5:0.05", "--out", a, "--parallel", 1)
        run(capsys, "curve", "--joint", joint_file, "--budgets", "0:0.5:0.05", "--out", b, "--parallel", 8)
        assert a.read_bytes() == b.read_bytes()

    def test_reversed_range(self, capsys, joint_file, tmp_path):
        code, _, _ = run(capsys, "curve", "--joint", joint_file, "--budgets", "0.5:0:0.1", "--out", tmp_path / "c.csv")
        assert code == 1


class TestOracle:
    def test_binary_instance(self, capsys, joint_file):
        code, line, _ = run(capsys, "oracle", "--joint", joint_file, "--budget", 0.25, "--grid", 0.05, "--loss", "zero-one")
        v = kv(line)
        assert code == 0
        assert float(v["gap"]) <= float(v["bound"])

    def test_too_large(self, capsys, tmp_path):
        p = tmp_path / "j3.csv"
        io.save_joint(validate_joint(np.full((3, 3), 1 / 9)), p)
        code, _, err = run(capsys, "oracle", "--joint", p, "--budget", 0.1, "--grid", 1e-6, "--loss", "log")
        assert code == 2 and "evaluations" in err

    def test_budget_zero_pinned(self, capsys, joint_file):
        code, line, _ = run(capsys, "oracle", "--joint", joint_file, "--budget", 0, "--grid", 0.05, "--loss", "log")
        v = kv(line)
        assert code == 0 and v["oracle_leakage"] == v["solver_leakage"]
        assert float(v["solver_leakage"]) == pytest.approx(0.278072, abs=1e-6)


def _save_fixed_model(path, W, cfg=None):
    priv = privatizer_network([Layer(W, np.zeros(2))], 2, 2, 2)
    adv = init_network([2, 2], ["softmax"], make_rng(0))
    cfg = cfg or TrainingConfig(fresh_adversary_steps=800, fresh_lr=1e-2, samples_per_cell=500)
    io.save_model(TrainedGAP(priv, adv, [], cfg, PrivatizerArch("combine", (1,), 2)), path)


class TestEval:
    def test_constant_and_identity(self, capsys, data_file, tmp_path):
        const = np.zeros((2, 6))
        const[0, 4] = 0.0
        ident = np.zeros((2, 6))
        ident[:, :2] = 50 * np.eye(2)
        c, i = tmp_path / "c.json", tmp_path / "i.json"
        _save_fixed_model(c, const)
        _save_fixed_model(i, ident)
        code, line, _ = run(capsys, "eval", "--model", c, "--data", data_file)
        assert code == 0 and float(kv(line)["accuracy"]) == pytest.approx(0.5, abs=0.03)
        code, line, _ = run(capsys, "eval", "--model", i, "--data", data_file)
        assert code == 0 and float(kv(line)["accuracy"]) == pytest.approx(0.8, abs=0.03)
        assert float(kv(line)["distortion"]) == 0.0

    def test_dimension_mismatch(self, capsys, tmp_path):
        data = tmp_path / "d3.csv"
        data.write_text("x,y\n0,0\n1,1\n2,0\n2,1\n")
        m = tmp_path / "m.json"
        _save_fixed_model(m, np.zeros((2, 6)))
        code, _, _ = run(capsys, "eval", "--model", m, "--data", data)
        assert code == 2


class TestTrain:
    def test_unknown_arch(self, capsys, data_file, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{}")
        code, _, _ = run(capsys, "train", "--data", data_file, "--arch", "cnn", "--budget", 0.1, "--config", cfg, "--out", tmp_path / "m.json")
        assert code == 1

    def test_symbol_outside_config_alphabet(self, capsys, data_file, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"x_alphabet": ["0"], "y_alphabet": ["0", "1"]}))
        code, _, err = run(capsys, "train", "--data", data_file, "--arch", "combine", "--budget", 0.1, "--config", cfg, "--out", tmp_path / "m.json")
        assert code == 2 and "not in alphabet" in err

    def test_non_finite_loss_exit_code(self, capsys, data_file, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"rounds": 5, "penalty_init": 1e308, "penalty_max": 1e308}))
        code, _, err = run(capsys, "train", "--data", data_file, "--arch", "combine", "--budget", 0.0, "--config", cfg, "--out", tmp_path / "m.json")
        assert code == 3 and "round" in err

    @pytest.mark.slow
    def test_budget_half_is_prior_guessing(self, capsys, data_file, tmp_path):
        from test_acceptance import TRAIN_CONFIG

        cfg = tmp_path / "cfg.json"
        io.save_config(TrainingConfig(**TRAIN_CONFIG), cfg)
        out = tmp_path / "m.json"
        code, line, _ = run(capsys, "train", "--data", data_file, "--arch", "additive", "--budget", 0.5, "--config", cfg, "--out", out)
        assert code == 0
        assert float(kv(line)["accuracy"]) == pytest.approx(0.5, abs=0.03)
        assert (tmp_path / "m.history.csv").exists()


class TestGradcheck:
    def test_default_seed(self, capsys):
        code, line, _ = run(capsys, "gradcheck", "--seed", 0)
        v = kv(line)
        assert code == 0
        assert float(v["neural_max_rel_error"]) < 1e-5 and float(v["mi_max_rel_error"]) < 1e-5

    def test_corrupted_gradient(self, capsys):
        code, _, _ = run(capsys, "gradcheck", "--seed", 0, "--points", 3, "--corrupt")
        assert code == 4

    def test_repeatable(self, capsys):
        a = run(capsys, "gradcheck", "--seed", 3, "--points", 10)[1]
        b = run(capsys, "gradcheck", "--seed", 3, "--points", 10)[1]
        assert a == b


@pytest.mark.parametrize("cmd", ["solve", "curve", "oracle", "train", "eval", "gradcheck"])
def test_help(capsys, cmd):
    code = main([cmd, "--help"])
    text = capsys.readouterr().out
    assert code == 0
    assert "--" in text


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "gap_forge", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "gap-forge" in r.stdout


def test_no_command_is_usage_error(capsys):
    assert main([]) == 1
