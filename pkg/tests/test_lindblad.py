import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oqsim import lindblad, micro, qstate
from oqsim.errors import DimensionError, ValidationError
from oqsim.lindblad import LindbladModel

from oracles import E, G, SM, SZ, damped_qubit_rho, lindblad_rhs_loops

seeds = st.integers(0, 2**32 - 1)


def damped_qubit(gamma=1.0, omega0=0.0):
    return LindbladModel(0.5 * omega0 * SZ, ((gamma, SM),))


def random_model(d, n_channels, r):
    x = r.normal(size=(d, d)) + 1j * r.normal(size=(d, d))
    h = 0.5 * (x + x.conj().T)
    chans = tuple((float(r.uniform(0, 2)), r.normal(size=(d, d)) + 1j * r.normal(size=(d, d)))
                  for _ in range(n_channels))
    return LindbladModel(h, chans)


# -- model ------------------------------------------------------------------------

def test_model_rejects_negative_rate():
    with pytest.raises(ValidationError, match="gamma"):
        LindbladModel(np.zeros((2, 2)), ((-1.0, SM),))


def test_model_rejects_dimension_mismatch():
    with pytest.raises(DimensionError):
        LindbladModel(np.zeros((2, 2)), ((1.0, np.eye(3)),))


def test_model_rejects_non_hermitian_h():
    with pytest.raises(ValidationError):
        LindbladModel(SM, ())


# -- generator --------------------------------------------------------------------

def test_apply_zero_model(rng):
    m = LindbladModel(np.zeros((2, 2)), ((0.0, SM),))
    np.testing.assert_array_equal(lindblad.lindblad_apply(m, qstate.random_density_matrix(2, rng)),
                                  np.zeros((2, 2)))


def test_apply_damped_qubit_excited():
    gamma = 1.0
    rho = np.outer(E, E.conj())
    expected = gamma * (np.outer(G, G.conj()) - np.outer(E, E.conj()))
    np.testing.assert_allclose(lindblad_rhs_loops(np.zeros((2, 2)), [(gamma, SM)], rho), expected, atol=0)
    np.testing.assert_allclose(lindblad.lindblad_apply(damped_qubit(gamma), rho), expected, atol=1e-15)


def test_apply_damped_qubit_steady_state():
    rho = np.outer(G, G.conj())
    np.testing.assert_allclose(lindblad_rhs_loops(np.zeros((2, 2)), [(1.0, SM)], rho), 0, atol=0)
    np.testing.assert_allclose(lindblad.lindblad_apply(damped_qubit(), rho), 0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 5), st.integers(0, 3))
def test_generator_traceless_hermitian(seed, d, n_ch):
    r = np.random.default_rng(seed)
    m = random_model(d, n_ch, r)
    rho = qstate.random_density_matrix(d, r)
    out = lindblad.lindblad_apply(m, rho)
    scale = 1 + np.abs(out).max()
    assert abs(np.trace(out)) <= 1e-12 * scale
    np.testing.assert_allclose(out, out.conj().T, atol=1e-12 * scale)
    np.testing.assert_allclose(out, lindblad_rhs_loops(m.h, list(m.channels), rho), atol=1e-12 * scale)


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(1, 4), st.integers(0, 3))
def test_liouvillian_matches_generator(seed, d, n_ch):
    r = np.random.default_rng(seed)
    m = random_model(d, n_ch, r)
    rho = qstate.random_density_matrix(d, r)
    out = qstate.unstack(m.liouvillian @ qstate.stack(rho), d)
    np.testing.assert_allclose(out, lindblad.lindblad_apply(m, rho), atol=1e-11)


# -- integration --------------------------------------------------------------------

def test_integrate_damped_qubit_population():
    t = np.linspace(0, 5, 201)
    rhos = lindblad.integrate_master(damped_qubit(), np.outer(E, E.conj()), t)
    pop = np.array([r[0, 0].real for r in rhos])
    assert np.max(np.abs(pop / np.exp(-t) - 1)) <= 1e-6


def test_integrate_damped_qubit_coherence():
    gamma, omega0 = 0.8, 2.0
    psi = (E + G) / math.sqrt(2)
    rho0 = np.outer(psi, psi.conj())
    t = np.linspace(0, 4, 41)
    rhos = lindblad.integrate_master(damped_qubit(gamma, omega0), rho0, t)
    for tk, r in zip(t, rhos):
        ref = damped_qubit_rho(tk, gamma, omega0, rho0)
        np.testing.assert_allclose(r, ref, atol=1e-7)


def test_integrate_first_output_is_initial(rng):
    rho0 = qstate.random_density_matrix(3, rng)
    rhos = lindblad.integrate_master(random_model(3, 2, rng), rho0, [0.0, 0.5])
    np.testing.assert_allclose(rhos[0], rho0, atol=1e-15)


def test_integrate_outputs_are_states(rng):
    m = random_model(3, 2, rng)
    for r in lindblad.integrate_master(m, qstate.random_density_matrix(3, rng), np.linspace(0, 3, 16)):
        qstate.check_density_matrix(r, tol=1e-8)


def test_integrate_closed_system_matches_micro(rng):
    h = np.array([[0.4, 0.3 - 0.2j], [0.3 + 0.2j, -0.1]])
    m = LindbladModel(h, ((0.0, SM),))
    total = micro.TotalSystemModel(h, np.zeros((2, 2)), np.zeros((4, 4)), 0.0, np.diag([1.0, 0.0]))
    rho0 = qstate.random_density_matrix(2, rng)
    t = np.linspace(0, 3, 7)
    for tk, r in zip(t, lindblad.integrate_master(m, rho0, t)):
        np.testing.assert_allclose(r, micro.evolve_reduced_exact(total, rho0, tk), atol=1e-8)


def test_integrate_rejects_grid_not_at_zero():
    with pytest.raises(ValidationError):
        lindblad.integrate_master(damped_qubit(), np.eye(2) / 2, [0.5, 1.0])


# -- dynamical map ------------------------------------------------------------------

def test_map_at_zero_is_identity():
    np.testing.assert_allclose(lindblad.dynamical_map(damped_qubit(), 0.0), np.eye(4), atol=1e-15)


def test_map_matches_integration():
    m = damped_qubit(gamma=1.3)
    psi = (E + 0.5j * G) / math.sqrt(1.25)
    rho0 = np.outer(psi, psi.conj())
    t = 1 / 1.3
    via_map = lindblad.apply_map(lindblad.dynamical_map(m, t), rho0)
    via_ode = lindblad.integrate_master(m, rho0, [0.0, t])[-1]
    assert np.max(np.abs(via_map - via_ode)) <= 1e-8


@pytest.mark.parametrize("t", [0.2, 1.0, 3.5])
def test_map_trace_preserving(rng, t):
    v = lindblad.dynamical_map(random_model(3, 2, rng), t)
    row = qstate.stack(np.eye(3))
    np.testing.assert_allclose(row @ v, row, atol=1e-10)


def test_map_negative_time():
    with pytest.raises(ValueError):
        lindblad.dynamical_map(damped_qubit(), -0.1)


@pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 2.0, 5.0])
def test_map_completely_positive(rng, t):
    v = lindblad.dynamical_map(random_model(3, 3, rng), t)
    assert qstate.min_eigenvalue(qstate.choi_matrix(v)) >= -1e-8


# -- semigroup ----------------------------------------------------------------------

def test_semigroup_zero_first_time():
    assert lindblad.semigroup_residual(damped_qubit(), 0.0, 0.9) == pytest.approx(0.0, abs=1e-15)


def test_semigroup_damped_qubit():
    assert lindblad.semigroup_residual(damped_qubit(), 0.7, 0.7) <= 1e-9


def test_semigroup_random_three_level(rng):
    assert lindblad.semigroup_residual(random_model(3, 2, rng), 0.3, 1.1) <= 1e-9


# -- weak-coupling cross-check ----------------------------------------------------

def _weak_coupling_error(alpha, t_fit=0.5, t=2.0):
    """Trace distance between exact reduced dynamics and a fitted damped-qubit generator."""
    modes = [micro.BathMode(1.0, 1.0, 3), micro.BathMode(1.2, 0.8, 3), micro.BathMode(0.8, 0.6, 3)]
    model = micro.multimode_model(1.0, modes, alpha)
    p_e = micro.evolve_reduced_exact(model, np.diag([1.0, 0.0]), t_fit)[0, 0].real
    gamma = -math.log(p_e) / t_fit
    fitted = LindbladModel(model.h_s, ((gamma, qstate.sigma_minus()),))
    rho0 = qstate.projector(qstate.plus())
    exact = micro.evolve_reduced_exact(model, rho0, t)
    approx = lindblad.apply_map(lindblad.dynamical_map(fitted, t), rho0)
    return qstate.trace_norm(exact - approx)


def test_weak_coupling_error_decreases():
    errs = [_weak_coupling_error(a) for a in (0.2, 0.1, 0.05)]
    assert errs[0] > errs[1] > errs[2]
