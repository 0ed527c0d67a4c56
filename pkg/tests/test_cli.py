import csv
import io
import subprocess
import sys

import numpy as np
import pytest
import tomli

from oqsim import cli, config, micro
from oqsim.cli import EXIT_INVALID, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE

from test_config import ALL_FIXTURES


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.main([str(a) for a in argv], out, err)
    return code, out.getvalue(), err.getvalue()


def table(text):
    rows = list(csv.reader(text.splitlines()))
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]])


# -- validate -------------------------------------------------------------------------------

@pytest.mark.parametrize("name", ALL_FIXTURES)
def test_validate_fixture(fixtures_dir, name):
    code, out, _ = run("validate", "--model", fixtures_dir / f"{name}.toml")
    assert code == EXIT_OK
    assert out.startswith("ok:")


def test_validate_negative_rate(tmp_path):
    p = tmp_path / "neg.toml"
    p.write_text('[lindblad]\nh = "zero(2)"\n[[channel]]\ngamma = -1.0\na = "sigma_minus"\n')
    code, _, err = run("validate", "--model", p)
    assert code == EXIT_INVALID
    assert "gamma_i >= 0" in err and str(p) in err


def test_validate_non_hermitian(tmp_path):
    p = tmp_path / "h.toml"
    p.write_text("[lindblad]\nh = [[1, 0.5], [0, -1]]\n")
    code, _, err = run("validate", "--model", p)
    assert code == EXIT_INVALID
    assert "1e-12" in err


def test_validate_reports_trace_warning(tmp_path):
    p = tmp_path / "leaky.toml"
    p.write_text("[timelocal]\na = [[-0.5, 0], [0, -0.5]]\nb = [[-0.5, 0], [0, -0.5]]\n")
    code, _, err = run("validate", "--model", p)
    assert code == EXIT_OK
    assert "not trace preserving" in err


# -- usage errors -----------------------------------------------------------------------------

def test_unknown_command():
    assert run("bogus")[0] == EXIT_USAGE


def test_missing_required_flag(fixtures_dir):
    assert run("mcwf", "--model", fixtures_dir / "damped_qubit.toml", "--t-max", 1, "--steps", 10)[0] == EXIT_USAGE


def test_nonpositive_steps(fixtures_dir):
    assert run("evolve-lindblad", "--model", fixtures_dir / "damped_qubit.toml", "--t-max", 1, "--steps", 0)[0] \
        == EXIT_USAGE


def test_wrong_model_kind(fixtures_dir):
    code, _, err = run("evolve-lindblad", "--model", fixtures_dir / "cnot_probe.toml", "--t-max", 1, "--steps", 2)
    assert code in (EXIT_USAGE, EXIT_INVALID)
    assert err


def test_missing_model_file(tmp_path):
    code, _, err = run("evolve-lindblad", "--model", tmp_path / "none.toml", "--t-max", 1, "--steps", 2)
    assert code == EXIT_INVALID and "cannot read" in err


def test_console_entry_point(fixtures_dir):
    proc = subprocess.run([sys.executable, "-m", "oqsim", "validate", "--model", str(fixtures_dir / "damped_qubit.toml")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("ok:")


# -- deterministic evolution -------------------------------------------------------------------

def test_evolve_lindblad_csv(fixtures_dir):
    code, out, _ = run("evolve-lindblad", "--model", fixtures_dir / "damped_qubit.toml", "--t-max", 5, "--steps", 50)
    assert code == EXIT_OK
    head, data = table(out)
    assert head == ["t", "proj(0)", "proj(1)"]
    np.testing.assert_allclose(data[:, 0], np.linspace(0, 5, 51))
    np.testing.assert_allclose(data[:, 1], np.exp(-data[:, 0]), rtol=1e-6)


def test_evolve_custom_observables_and_initial_state(fixtures_dir):
    code, out, _ = run("evolve-lindblad", "--model", fixtures_dir / "damped_qubit.toml", "--t-max", 1, "--steps", 4,
                       "--observables", "pauli_x", "pauli_z", "--psi0", "plus")
    assert code == EXIT_OK
    head, data = table(out)
    assert head == ["t", "pauli_x", "pauli_z"]
    np.testing.assert_allclose(data[:, 1], np.exp(-data[:, 0] / 2), rtol=1e-6)


def test_evolve_output_file(fixtures_dir, tmp_path):
    dest = tmp_path / "out.csv"
    code, out, _ = run("evolve-tcl", "--model", fixtures_dir / "tcl_time_dependent_qubit.toml", "--t-max", 2,
                       "--steps", 4, "--output", dest)
    assert code == EXIT_OK and out == ""
    head, data = table(dest.read_text())
    assert data.shape == (5, 3)


def test_evolve_exact(fixtures_dir):
    code, out, _ = run("evolve-exact", "--model", fixtures_dir / "jaynes_cummings.toml", "--t-max", 2, "--steps", 8)
    assert code == EXIT_OK
    _, data = table(out)
    # resonant exchange with one photon: P_e = cos^2(alpha t)
    np.testing.assert_allclose(data[:, 1], np.cos(0.8 * data[:, 0]) ** 2, atol=1e-10)


# -- stochastic commands ---------------------------------------------------------------------------

def test_mcwf_reproducible(fixtures_dir):
    args = ("mcwf", "--model", fixtures_dir / "damped_qubit.toml", "--t-max", 2, "--steps", 10,
            "--trajectories", 300, "--seed", 42)
    a, b = run(*args), run(*args)
    assert a[0] == EXIT_OK
    assert a[1] == b[1]
    head, _ = table(a[1])
    assert head == ["t", "proj(0)_mean", "proj(0)_stderr", "proj(1)_mean", "proj(1)_stderr", "mean_jump_count"]


def test_mcwf_seed_changes_output(fixtures_dir):
    base = ("mcwf", "--model", fixtures_dir / "damped_qubit.toml", "--t-max", 2, "--steps", 10, "--trajectories", 300)
    assert run(*base, "--seed", 1)[1] != run(*base, "--seed", 2)[1]


def test_hnm_csv(fixtures_dir):
    code, out, _ = run("hnm", "--model", fixtures_dir / "doubled_asymmetric.toml", "--t-max", 1, "--steps", 4,
                       "--trajectories", 200, "--seed", 3)
    assert code == EXIT_OK
    head, data = table(out)
    assert head[:4] == ["t", "re(proj(0))", "im(proj(0))", "proj(0)_stderr"]
    assert head[-1] == "mean_jump_count"


def test_mcwf_rejects_timelocal_model(fixtures_dir):
    code = run("mcwf", "--model", fixtures_dir / "doubled_asymmetric.toml", "--t-max", 1, "--steps", 2,
               "--trajectories", 10, "--seed", 1)[0]
    assert code in (EXIT_USAGE, EXIT_INVALID)


def test_compare_lindblad_against_mcwf(fixtures_dir, tmp_path):
    ref, smp = tmp_path / "ref.csv", tmp_path / "smp.csv"
    model = fixtures_dir / "damped_qubit.toml"
    assert run("evolve-lindblad", "--model", model, "--t-max", 5, "--steps", 50, "--output", ref)[0] == EXIT_OK
    assert run("mcwf", "--model", model, "--t-max", 5, "--steps", 50, "--trajectories", 2000, "--seed", 7,
               "--output", smp)[0] == EXIT_OK
    code, out, _ = run("compare", "--reference", ref, "--sample", smp)
    assert code == EXIT_OK
    head, rows = list(csv.reader(out.splitlines()))[0], list(csv.reader(out.splitlines()))[1:]
    assert head == ["observable", "max_abs_delta_over_stderr"]
    assert all(float(r[1]) <= 5 for r in rows)


def test_compare_flags_disagreement(tmp_path):
    ref, smp = tmp_path / "ref.csv", tmp_path / "smp.csv"
    ref.write_text("t,x\n0.0,1.0\n1.0,0.5\n")
    smp.write_text("t,x_mean,x_stderr,mean_jump_count\n0.0,1.0,0.0,0.0\n1.0,0.9,0.01,0.4\n")
    code, _, err = run("compare", "--reference", ref, "--sample", smp)
    assert code == EXIT_NUMERIC and "exceeds" in err


# -- measure --------------------------------------------------------------------------------------

def test_measure_nonselective(fixtures_dir):
    code, out, _ = run("measure", "--probe", fixtures_dir / "cnot_probe.toml", "--rho", "plus", "--mode", "nonselective")
    assert code == EXIT_OK
    text, literal = out.split("\n\n", 1)
    rows = list(csv.reader(text.splitlines()))
    assert rows[0] == ["m", "r_m", "P(m)"]
    assert [float(r[2]) for r in rows[1:]] == pytest.approx([0.5, 0.5], abs=1e-12)
    rho = config.parse_operator(tomli.loads(literal)["rho"])
    np.testing.assert_allclose(rho, np.eye(2) / 2, atol=1e-12)


def test_measure_selective_post_state_file(fixtures_dir, tmp_path):
    dest = tmp_path / "post.toml"
    code, _, _ = run("measure", "--probe", fixtures_dir / "cnot_probe_pm.toml", "--rho", "plus", "--mode", "selective",
                     "--outcome", 1, "--post-state", dest)
    assert code == EXIT_OK
    rho = config.parse_operator(tomli.loads(dest.read_text())["rho"])
    # outcome -1 applies -sigma_z / sqrt(2): |+> -> |->
    np.testing.assert_allclose(rho, np.array([[0.5, -0.5], [-0.5, 0.5]]), atol=1e-12)


def test_measure_impossible_outcome(fixtures_dir):
    code, _, err = run("measure", "--probe", fixtures_dir / "cnot_probe.toml", "--rho", "ground", "--mode", "selective",
                       "--outcome", 1)
    assert code == EXIT_NUMERIC and err


def test_measure_from_total_system(fixtures_dir):
    code, out, _ = run("measure", "--probe", fixtures_dir / "qubit_2mode_probe.toml", "--rho", "excited",
                       "--mode", "nonselective")
    assert code == EXIT_OK
    rows = list(csv.reader(out.split("\n\n", 1)[0].splitlines()))[1:]
    assert sum(float(r[2]) for r in rows) == pytest.approx(1.0, abs=1e-10)


def test_measure_with_total_system_unitary(fixtures_dir):
    model = fixtures_dir / "jaynes_cummings.toml"
    code, out, _ = run("measure", "--probe", fixtures_dir / "cnot_probe.toml", "--model", model, "--tau", 0.7,
                       "--rho", "excited", "--mode", "nonselective")
    assert code == EXIT_OK
    rho = config.parse_operator(tomli.loads(out.split("\n\n", 1)[1])["rho"])
    total = config.parse_model(model)
    np.testing.assert_allclose(rho, micro.evolve_reduced_exact(total, np.diag([1.0, 0.0]), 0.7), atol=1e-12)


def test_measure_model_needs_tau(fixtures_dir):
    code, _, err = run("measure", "--probe", fixtures_dir / "cnot_probe.toml",
                       "--model", fixtures_dir / "jaynes_cummings.toml", "--rho", "excited")
    assert code == EXIT_INVALID and "--tau" in err
