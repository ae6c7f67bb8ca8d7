import json
import subprocess
import sys

import numpy as np
import pytest

from matchtu import io
from matchtu.cli import config_hash, main
from matchtu.model import BasisSystem, Margins, TypeSpace

TYPES = TypeSpace(("m1", "m2", "m3"), ("w1", "w2"))


@pytest.fixture
def market(tmp_path, rng):
    phi = rng.normal(size=(3, 2))
    io.write_matrix(tmp_path / "phi.csv", phi, TYPES)
    io.write_margins(tmp_path / "margins.csv", Margins([1.0, 2.0, 0.5], [1.5, 1.0]), TYPES)
    basis = BasisSystem(rng.normal(size=(2, 3, 2)), ("age", "edu"))
    io.write_basis(tmp_path / "basis.csv", basis, TYPES)
    return tmp_path, phi, basis


def run(*argv):
    return main([str(a) for a in argv])


def read_params(path):
    header, rows = io.read_table(path)
    return {(r[0], r[1]): (float(r[2]), float(r[3]) if r[3] else None) for r in rows}


def test_solve_algorithms_agree(market):
    d, _, _ = market
    for alg in ("ipfp", "gradient"):
        assert run("solve", "--phi", d / "phi.csv", "--margins", d / "margins.csv",
                   "--algorithm", alg, "--out", d / alg) == 0
    a = io.read_counts(d / "ipfp" / "mu.csv").mu_hat.as_vector()
    b = io.read_counts(d / "gradient" / "mu.csv").mu_hat.as_vector()
    np.testing.assert_allclose(a, b, atol=1e-6)
    summary = json.loads((d / "gradient" / "summary.json").read_text())
    assert summary["results"]["converged"] and summary["command"] == "solve"
    assert summary["config_hash"] == config_hash(summary["config"])


def test_identify_round_trip(market):
    d, phi, _ = market
    assert run("solve", "--phi", d / "phi.csv", "--margins", d / "margins.csv", "--out", d / "s") == 0
    assert run("identify", "--counts", d / "s" / "mu.csv", "--out", d / "i") == 0
    back, types = io.read_matrix(d / "i" / "phi.csv")
    assert types == TYPES
    np.testing.assert_allclose(back, phi, atol=1e-8)
    U, _ = io.read_matrix(d / "i" / "U.csv")
    V, _ = io.read_matrix(d / "i" / "V.csv")
    np.testing.assert_allclose(U + V, phi, atol=1e-8)


def test_simulate_is_deterministic(market):
    d, _, _ = market
    args = ["simulate", "--basis", d / "basis.csv", "--lambda", "0.7,-0.3", "--margins", d / "margins.csv",
            "--n-households", 5000, "--seed", 42]
    assert run(*args, "--out", d / "a") == 0
    assert run(*args, "--out", d / "b") == 0
    assert (d / "a" / "counts.csv").read_bytes() == (d / "b" / "counts.csv").read_bytes()
    assert io.read_counts(d / "a" / "counts.csv").n_households == 5000


def test_simulate_then_fit_within_three_standard_errors(market):
    d, _, _ = market
    lam0 = (0.7, -0.3)
    assert run("simulate", "--basis", d / "basis.csv", "--lambda", "0.7,-0.3",
               "--margins", d / "margins.csv", "--n-households", 100_000, "--seed", 1,
               "--out", d / "sim") == 0
    assert run("fit", "--counts", d / "sim" / "counts.csv", "--basis", d / "basis.csv", "--out", d / "fit") == 0
    params = read_params(d / "fit" / "parameters.csv")
    for name, true in zip(("age", "edu"), lam0):
        est, se = params[("lambda", name)]
        assert abs(est - true) <= 3 * se
    # standard errors from the se command match those reported by fit
    assert run("se", "--counts", d / "sim" / "counts.csv", "--basis", d / "basis.csv",
               "--params", d / "fit" / "parameters.csv", "--out", d / "se") == 0
    se_rows = read_params(d / "se" / "se.csv")
    assert len(se_rows) == 2 + 3 + 2
    for key, (_, se) in params.items():
        assert se_rows[key][1] == pytest.approx(se, rel=1e-6)
    header, cov = io.read_table(d / "se" / "covariance.csv")
    assert len(cov) == 7 and len(header) == 8


def test_exact_simulation_fits_back_exactly(market):
    d, _, _ = market
    assert run("simulate", "--basis", d / "basis.csv", "--lambda", "0.7,-0.3", "--mode", "exact",
               "--margins", d / "margins.csv", "--n-households", 100_000, "--out", d / "sim") == 0
    for alg in ("gradient", "coordinate-hybrid"):
        assert run("fit", "--counts", d / "sim" / "counts.csv", "--basis", d / "basis.csv",
                   "--algorithm", alg, "--out", d / alg) == 0
        params = read_params(d / alg / "parameters.csv")
        assert params[("lambda", "age")][0] == pytest.approx(0.7, abs=1e-6)
        assert params[("lambda", "edu")][0] == pytest.approx(-0.3, abs=1e-6)


def test_mle_and_moment_agree_on_saturated_basis(tmp_path, rng):
    types = TypeSpace(("a", "b"), ("c", "d"))
    phi = rng.normal(size=(2, 2))
    io.write_matrix(tmp_path / "phi.csv", phi, types)
    io.write_margins(tmp_path / "margins.csv", Margins([1.0, 1.5], [1.2, 0.8]), types)
    io.write_basis(tmp_path / "sat.csv", BasisSystem.saturated(2, 2), types)
    assert run("simulate", "--phi", tmp_path / "phi.csv", "--margins", tmp_path / "margins.csv",
               "--n-households", 20_000, "--seed", 3, "--out", tmp_path / "sim") == 0
    counts = tmp_path / "sim" / "counts.csv"
    assert run("fit", "--counts", counts, "--basis", tmp_path / "sat.csv", "--out", tmp_path / "mm") == 0
    cfg = tmp_path / "mle.json"
    cfg.write_text(json.dumps({"schema_version": 1, "counts": "sim/counts.csv", "basis": "sat.csv",
                               "estimator": "mle", "n_starts": 2, "out": "mle"}))
    assert run("fit", "--config", cfg) == 0
    mm = read_params(tmp_path / "mm" / "parameters.csv")
    mle = read_params(tmp_path / "mle" / "parameters.csv")
    for key, (val, _) in mm.items():
        if key[0] == "lambda":
            assert mle[key][0] == pytest.approx(val, abs=1e-3)


def test_max_score_runs(market):
    d, _, _ = market
    assert run("simulate", "--basis", d / "basis.csv", "--lambda", "0.7,-0.3", "--mode", "exact",
               "--margins", d / "margins.csv", "--out", d / "sim") == 0
    assert run("fit", "--counts", d / "sim" / "counts.csv", "--basis", d / "basis.csv",
               "--estimator", "max-score", "--out", d / "ms") == 0
    params = read_params(d / "ms" / "parameters.csv")
    direction = np.array([params[("lambda", "age")][0], params[("lambda", "edu")][0]])
    assert np.linalg.norm(direction) == pytest.approx(1.0)


def test_micro_mode_counts_heads(tmp_path, rng):
    types = TypeSpace(("a", "b"), ("c",))
    io.write_matrix(tmp_path / "phi.csv", rng.normal(size=(2, 1)), types)
    io.write_margins(tmp_path / "heads.csv", Margins([3, 2], [4]), types)
    assert run("simulate", "--phi", tmp_path / "phi.csv", "--margins", tmp_path / "heads.csv",
               "--mode", "micro", "--seed", 5, "--out", tmp_path / "o") == 0
    mu = io.read_counts(tmp_path / "o" / "counts.csv").mu_hat
    np.testing.assert_array_equal(mu.N_x, [3, 2])
    np.testing.assert_array_equal(mu.M_y, [4])
    res = json.loads((tmp_path / "o" / "summary.json").read_text())["results"]
    assert res["primal_value"] == pytest.approx(res["dual_value"], abs=1e-9)


# ---------------------------------------------------------------- exit codes

def test_missing_file_is_input_error(tmp_path):
    assert run("identify", "--counts", tmp_path / "none.csv", "--out", tmp_path / "o") == 2


def test_unknown_config_key_is_input_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"counts": "x.csv", "colour": "blue"}))
    assert run("identify", "--config", cfg) == 2
    cfg.write_text(json.dumps({"counts": "x.csv", "schema_version": 2}))
    assert run("identify", "--config", cfg) == 2
    cfg.write_text("{not json")
    assert run("identify", "--config", cfg) == 2


def test_zero_cell_is_data_error(tmp_path, caplog):
    (tmp_path / "c.csv").write_text("x_type,y_type,count\na,c,0\na,d,3\nb,c,2\nb,d,1\na,0,1\nb,0,1\n0,c,1\n0,d,1\n")
    assert run("identify", "--counts", tmp_path / "c.csv", "--out", tmp_path / "o") == 3
    assert "(a, c)" in caplog.text or "('a', 'c')" in caplog.text
    assert run("identify", "--counts", tmp_path / "c.csv", "--pseudo-count", "--out", tmp_path / "o") == 0
    io.write_basis(tmp_path / "sat.csv", BasisSystem.saturated(2, 2), TypeSpace(("a", "b"), ("c", "d")))
    assert run("fit", "--counts", tmp_path / "c.csv", "--basis", tmp_path / "sat.csv",
               "--out", tmp_path / "f") == 3


def test_duplicate_cell_is_data_error(tmp_path):
    (tmp_path / "c.csv").write_text("x_type,y_type,count\na,c,1\na,c,2\n")
    assert run("identify", "--counts", tmp_path / "c.csv", "--out", tmp_path / "o") == 3


def test_non_convergence_exit_code(market):
    d, _, _ = market
    assert run("solve", "--phi", d / "phi.csv", "--margins", d / "margins.csv",
               "--max-iter", 1, "--out", d / "o") == 4


def test_algorithm_with_non_moment_estimator_rejected(market):
    d, _, _ = market
    assert run("fit", "--counts", d / "x.csv", "--basis", d / "basis.csv", "--estimator", "mle",
               "--algorithm", "gradient", "--out", d / "o") == 2


def test_console_script_entry_point(market):
    d, _, _ = market
    proc = subprocess.run([sys.executable, "-m", "matchtu.cli", "solve", "--phi", str(d / "phi.csv"),
                           "--margins", str(d / "margins.csv"), "--out", str(d / "p")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (d / "p" / "utilities.csv").exists()
