import math

import numpy as np
import pytest
import tomli

from oqsim import config, qstate
from oqsim.errors import ConfigError
from oqsim.lindblad import LindbladModel
from oqsim.micro import TotalSystemModel
from oqsim.qops import ProbeModel
from oqsim.tcl import ProfileOperator, TableOperator, TimeLocalModel

from oracles import E, SM, SX, SZ

ALL_FIXTURES = [
    "damped_qubit", "driven_damped_qubit", "three_level_cascade", "damped_oscillator", "jaynes_cummings",
    "qubit_2mode", "qubit_2mode_probe", "cnot_probe", "cnot_probe_pm", "tcl_time_dependent_qubit",
    "doubled_asymmetric",
]
KIND = {
    "lindblad": LindbladModel, "total_system": TotalSystemModel, "timelocal": TimeLocalModel, "probe": ProbeModel,
}


@pytest.mark.parametrize("name", ALL_FIXTURES)
def test_fixture_parses(fixtures_dir, name):
    file = config.read_model_file(fixtures_dir / f"{name}.toml")
    assert isinstance(file.model, KIND[file.kind])


@pytest.mark.parametrize("name", [n for n in ALL_FIXTURES if "probe" not in n])
def test_round_trip(fixtures_dir, name):
    file = config.read_model_file(fixtures_dir / f"{name}.toml")
    text = config.dumps_model(file.model, file.initial)
    back = config.read_model_text(text)
    assert config.models_equal(file.model, back.model)
    if file.initial is not None:
        np.testing.assert_array_equal(back.initial, file.initial)


def test_round_trip_probe(fixtures_dir):
    probe = config.parse_model(fixtures_dir / "cnot_probe_pm.toml")
    back = config.read_model_text(config.dumps_model(probe)).model
    assert config.models_equal(probe, back)


def test_damped_qubit_contents(fixtures_dir):
    m = config.parse_model(fixtures_dir / "damped_qubit.toml")
    np.testing.assert_array_equal(m.h, np.zeros((2, 2)))
    assert len(m.channels) == 1
    gamma, a = m.channels[0]
    assert gamma == 1.0
    np.testing.assert_array_equal(a, SM)


def test_time_dependent_fixture_contents(fixtures_dir):
    m = config.parse_model(fixtures_dir / "tcl_time_dependent_qubit.toml")
    assert isinstance(m.a, ProfileOperator)
    t = 0.3
    gamma = 1 + math.sin(2 * t)
    np.testing.assert_allclose(m.a(t), -0.5 * gamma * np.diag([1.0, 0.0]), atol=1e-15)
    np.testing.assert_allclose(m.channels[0][0](t), math.sqrt(gamma) * SM, atol=1e-15)


def test_operator_grammar():
    np.testing.assert_array_equal(config.parse_operator("pauli_z"), SZ)
    np.testing.assert_array_equal(config.parse_operator({"op": "pauli_x", "scale": [0, 2]}), 2j * SX)
    np.testing.assert_array_equal(config.parse_operator({"dagger": "sigma_minus"}), SM.conj().T)
    np.testing.assert_array_equal(config.parse_operator({"sum": ["pauli_x", "pauli_z"]}), SX + SZ)
    np.testing.assert_array_equal(config.parse_operator({"kron": ["pauli_z", "identity(2)"]}),
                                  np.kron(SZ, np.eye(2)))
    np.testing.assert_array_equal(config.parse_operator("number", dim=3), np.diag([0.0, 1.0, 2.0]))
    np.testing.assert_array_equal(config.parse_operator([[1, [0, 1]], [[0, -1], 2]]),
                                  np.array([[1, 1j], [-1j, 2]]))


def test_state_grammar():
    np.testing.assert_array_equal(config.parse_state("excited"), E)
    np.testing.assert_array_equal(config.parse_state("fock(2, 4)"), qstate.basis(2, 4))
    np.testing.assert_allclose(config.parse_state([[0.6, 0], [0, 0.8]]), [0.6, 0.8j])


def test_table_time_operator():
    text = """
[timelocal]
a = { table = { times = [0.0, 1.0], matrices = ["zero(2)", { op = "pauli_z", scale = -1.0 }] } }
b = { table = { times = [0.0, 1.0], matrices = ["zero(2)", { op = "pauli_z", scale = -1.0 }] } }
"""
    with pytest.warns(UserWarning):
        m = config.read_model_text(text).model
    assert isinstance(m.a, TableOperator)
    np.testing.assert_allclose(m.a(0.5), -0.5 * SZ)
    assert m.interval == (0.0, 1.0)


# -- errors ---------------------------------------------------------------------------------

def _error(text):
    with pytest.raises(ConfigError) as info:
        config.read_model_text(text, "model.toml")
    return str(info.value)


def test_negative_rate_names_invariant():
    msg = _error('[lindblad]\nh = "zero(2)"\n[[channel]]\ngamma = -1.0\na = "sigma_minus"\n')
    assert "gamma_i >= 0" in msg and "model.toml" in msg


def test_non_hermitian_names_tolerance():
    msg = _error("[lindblad]\nh = [[1, 0.5], [0, -1]]\n")
    assert "not Hermitian" in msg and "1e-12" in msg


def test_syntax_error():
    assert "syntax error" in _error("[lindblad\n")


def test_missing_model_table():
    assert "exactly one model table" in _error("[initial]\npsi = 'excited'\n")


def test_unknown_builder_lists_known():
    msg = _error('[lindblad]\nh = "pauli_w"\n')
    assert "pauli_w" in msg and "pauli_z" in msg


def test_channel_dimension_mismatch():
    assert "model.toml" in _error('[lindblad]\nh = "zero(2)"\n[[channel]]\ngamma = 1.0\na = "identity(3)"\n')


def test_initial_state_dimension_mismatch():
    assert "dimension" in _error('[lindblad]\nh = "zero(2)"\n[initial]\npsi = "fock(0, 3)"\n')


def test_unnormalized_initial_state():
    assert "[initial].psi" in _error('[lindblad]\nh = "zero(2)"\n[initial]\npsi = [1, 1]\n')


def test_unknown_profile():
    text = '[timelocal]\na = { profile = { matrix = "zero(2)", scalar = "cosh(1)" } }\nb = "zero(2)"\n'
    assert "unknown time profile" in _error(text)


def test_probe_requires_ensemble():
    assert "probe_ensemble" in _error('[probe]\nu = "identity(4)"\n')


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        config.read_model_file(tmp_path / "nope.toml")


def test_density_literal_parses_back(rng):
    rho = qstate.random_density_matrix(3, rng)
    back = config.parse_operator(tomli.loads(config.dump_density_literal(rho))["rho"])
    np.testing.assert_array_equal(back, rho)
