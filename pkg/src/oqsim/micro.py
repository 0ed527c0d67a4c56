"""Exact unitary evolution of system plus environment.

This is the ground-truth oracle for the approximate descriptions: the total
Hamiltonian is diagonalized once and the reduced state is obtained at any time
by a partial trace, without time stepping.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import qstate
from .errors import DimensionError, ValidationError


@dataclass(frozen=True, eq=False)
class TotalSystemModel:
    """``H = H_S (x) I_B + I_S (x) H_B + alpha * H_I`` with a bath state ``rho_b``."""

    h_s: np.ndarray
    h_b: np.ndarray
    h_i: np.ndarray
    alpha: float
    rho_b: np.ndarray
    max_dim: int = qstate.MAX_DIM

    def __post_init__(self):
        h_s = qstate.hermitian(self.h_s, "h_s")
        h_b = qstate.hermitian(self.h_b, "h_b")
        d_s, d_b = h_s.shape[0], h_b.shape[0]
        if d_s * d_b > self.max_dim:
            raise DimensionError(f"total dimension {d_s}*{d_b} exceeds the cap {self.max_dim}")
        h_i = qstate.hermitian(self.h_i, "h_i")
        if h_i.shape[0] != d_s * d_b:
            raise DimensionError(f"h_i has dimension {h_i.shape[0]}, expected d_S*d_B = {d_s * d_b}")
        rho_b = qstate.density_matrix(self.rho_b)
        if rho_b.shape[0] != d_b:
            raise DimensionError(f"rho_b has dimension {rho_b.shape[0]}, expected {d_b}")
        if not np.isfinite(self.alpha):
            raise ValidationError("alpha must be finite")
        object.__setattr__(self, "h_s", qstate.frozen(h_s))
        object.__setattr__(self, "h_b", qstate.frozen(h_b))
        object.__setattr__(self, "h_i", qstate.frozen(h_i))
        object.__setattr__(self, "rho_b", qstate.frozen(rho_b))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def d_s(self) -> int:
        return self.h_s.shape[0]

    @property
    def d_b(self) -> int:
        return self.h_b.shape[0]

    @cached_property
    def hamiltonian(self) -> np.ndarray:
        return build_total_hamiltonian(self)

    @cached_property
    def eigensystem(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linalg.eigh(self.hamiltonian)

    def propagator(self, t: float) -> np.ndarray:
        """``U(t) = exp(-i H t)`` from the cached eigendecomposition."""
        w, v = self.eigensystem
        return (v * np.exp(-1j * w * t)) @ v.conj().T


def build_total_hamiltonian(model: TotalSystemModel) -> np.ndarray:
    d_s, d_b = model.d_s, model.d_b
    h = (
        qstate.kron(model.h_s, qstate.identity(d_b), model.max_dim)
        + qstate.kron(qstate.identity(d_s), model.h_b, model.max_dim)
        + model.alpha * model.h_i
    )
    # symmetrize away rounding in alpha * h_i
    return 0.5 * (h + h.conj().T)


def initial_total_state(model: TotalSystemModel, rho_s0) -> np.ndarray:
    rho_s0 = qstate.density_matrix(rho_s0)
    if rho_s0.shape[0] != model.d_s:
        raise DimensionError(f"rho_s0 has dimension {rho_s0.shape[0]}, expected {model.d_s}")
    return np.kron(rho_s0, model.rho_b)


def evolve_total(model: TotalSystemModel, rho_total, t: float) -> np.ndarray:
    """``U(t) rho U(t)^dagger`` on the full system+environment space."""
    if not np.isfinite(t):
        raise ValidationError(f"invalid time {t!r}")
    u = model.propagator(t)
    out = u @ np.asarray(rho_total, dtype=complex) @ u.conj().T
    return 0.5 * (out + out.conj().T)


def evolve_reduced_exact(model: TotalSystemModel, rho_s0, t: float) -> np.ndarray:
    """Reduced state ``tr_B[U(t) (rho_S(0) (x) rho_B) U(t)^dagger]``."""
    rho = evolve_total(model, initial_total_state(model, rho_s0), t)
    rho_s = qstate.partial_trace_env(rho, model.d_s, model.d_b)
    return qstate.density_matrix(rho_s)


def evolve_reduced_grid(model: TotalSystemModel, rho_s0, t_grid: Sequence[float]) -> list[np.ndarray]:
    rho0 = initial_total_state(model, rho_s0)
    return [
        qstate.density_matrix(qstate.partial_trace_env(evolve_total(model, rho0, t), model.d_s, model.d_b))
        for t in t_grid
    ]


def von_neumann_rhs(h, rho) -> np.ndarray:
    """``-i [H, rho]``."""
    h = qstate.as_matrix(h)
    rho = qstate.as_matrix(rho)
    if h.shape != rho.shape:
        raise DimensionError(f"H {h.shape} and rho {rho.shape} differ in dimension")
    return -1j * (h @ rho - rho @ h)


# -- bath construction -----------------------------------------------------------

def ground_state(h_b) -> np.ndarray:
    """Projector on the lowest eigenvector of ``h_b``."""
    w, v = np.linalg.eigh(qstate.hermitian(h_b))
    return qstate.projector(v[:, 0])


def gibbs_state(h_b, beta: float) -> np.ndarray:
    """``exp(-beta H_B) / Z``, shifted by the ground energy for stability."""
    if not beta >= 0:
        raise ValidationError(f"inverse temperature must be nonnegative, got {beta}")
    w, v = np.linalg.eigh(qstate.hermitian(h_b))
    p = np.exp(-beta * (w - w[0]))
    p /= p.sum()
    return (v * p) @ v.conj().T


@dataclass(frozen=True)
class BathMode:
    """One environment mode: a truncated oscillator (``dim > 2``) or a qubit."""

    frequency: float
    coupling: float
    dim: int = 2


def multimode_model(
    omega_s: float,
    modes: Sequence[BathMode],
    alpha: float,
    beta: float | None = None,
    max_modes: int = 3,
) -> TotalSystemModel:
    """Qubit coupled to up to three bath modes by an exchange interaction.

    ``H_S = omega_s sigma_z / 2``, ``H_B = sum_k w_k a_k^dagger a_k`` and
    ``H_I = sum_k g_k (sigma_+ a_k + sigma_- a_k^dagger)``.  The bath starts in
    its ground state unless ``beta`` is given.
    """
    if not 1 <= len(modes) <= max_modes:
        raise ValidationError(f"between 1 and {max_modes} bath modes are supported, got {len(modes)}")
    dims = [m.dim for m in modes]
    d_b = int(np.prod(dims))
    h_b = np.zeros((d_b, d_b), dtype=complex)
    h_i = np.zeros((2 * d_b, 2 * d_b), dtype=complex)
    for k, mode in enumerate(modes):
        a_k = _embed(qstate.annihilation(mode.dim), k, dims)
        h_b += mode.frequency * a_k.conj().T @ a_k
        h_i += mode.coupling * (
            np.kron(qstate.sigma_plus(), a_k) + np.kron(qstate.sigma_minus(), a_k.conj().T)
        )
    h_s = 0.5 * omega_s * qstate.pauli_z()
    rho_b = ground_state(h_b) if beta is None else gibbs_state(h_b, beta)
    return TotalSystemModel(h_s, h_b, h_i, alpha, rho_b)


def _embed(op: np.ndarray, k: int, dims: Sequence[int]) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for j, d in enumerate(dims):
        out = np.kron(out, op if j == k else np.eye(d))
    return out
