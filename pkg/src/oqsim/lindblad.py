"""Markovian master equation in Lindblad form."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _ode, qstate
from .errors import DimensionError, ValidationError


@dataclass(frozen=True, eq=False)
class LindbladModel:
    """Coherent part ``h`` and decay channels ``(gamma_i, A_i)``.

    ``h`` need not coincide with the free system Hamiltonian; it may carry
    environment-induced shifts.
    """

    h: np.ndarray
    channels: tuple = ()

    def __post_init__(self):
        h = qstate.hermitian(self.h, "h")
        d = h.shape[0]
        chans = []
        for i, (gamma, a) in enumerate(self.channels):
            gamma = float(gamma)
            if not (np.isfinite(gamma) and gamma >= 0):
                raise ValidationError(f"channel {i}: rate gamma must be nonnegative, got {gamma}")
            a = qstate.as_matrix(a)
            if a.shape[0] != d:
                raise DimensionError(f"channel {i}: operator dimension {a.shape[0]} differs from h ({d})")
            chans.append((gamma, qstate.frozen(a)))
        object.__setattr__(self, "h", qstate.frozen(h))
        object.__setattr__(self, "channels", tuple(chans))

    @property
    def dim(self) -> int:
        return self.h.shape[0]

    @property
    def rates(self) -> np.ndarray:
        return np.array([g for g, _ in self.channels], dtype=float)

    @property
    def jump_operators(self) -> list[np.ndarray]:
        return [a for _, a in self.channels]

    @cached_property
    def decay_operator(self) -> np.ndarray:
        """``sum_i gamma_i A_i^dagger A_i``."""
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for gamma, a in self.channels:
            out += gamma * a.conj().T @ a
        return out

    @cached_property
    def effective_hamiltonian(self) -> np.ndarray:
        """Non-Hermitian ``H - (i/2) sum_i gamma_i A_i^dagger A_i``."""
        return self.h - 0.5j * self.decay_operator

    @cached_property
    def liouvillian(self) -> np.ndarray:
        """Column-stacked superoperator of the generator."""
        d = self.dim
        eye = np.eye(d)
        heff = self.effective_hamiltonian
        out = qstate.sprepost(-1j * heff, eye) + qstate.sprepost(eye, 1j * heff.conj().T)
        for gamma, a in self.channels:
            out += gamma * qstate.sprepost(a, a.conj().T)
        return out


def lindblad_apply(model: LindbladModel, rho) -> np.ndarray:
    """``-i[H, rho] + sum_i gamma_i (A rho A^dag - {A^dag A, rho}/2)``."""
    rho = qstate.as_matrix(rho)
    if rho.shape[0] != model.dim:
        raise DimensionError(f"rho has dimension {rho.shape[0]}, model has {model.dim}")
    out = -1j * (model.h @ rho - rho @ model.h)
    for gamma, a in model.channels:
        if gamma == 0:
            continue
        ad = a.conj().T
        ada = ad @ a
        out += gamma * (a @ rho @ ad - 0.5 * (ada @ rho + rho @ ada))
    return out


def integrate_master(
    model: LindbladModel,
    rho0,
    t_grid: Sequence[float],
    rtol: float = _ode.RTOL,
    atol: float = _ode.ATOL,
) -> list[np.ndarray]:
    """Solve the master equation on ``t_grid`` (which must start at 0)."""
    rho0 = qstate.density_matrix(rho0)
    if rho0.shape[0] != model.dim:
        raise DimensionError(f"rho0 has dimension {rho0.shape[0]}, model has {model.dim}")
    t = _ode.check_grid(t_grid)
    ys = _ode.integrate(lambda _t, r: lindblad_apply(model, r), rho0, t, rtol, atol)
    out = []
    for k, r in enumerate(ys):
        r = 0.5 * (r + r.conj().T)
        out.append(qstate.check_density_matrix(r, tol=1e-8, name=f"rho(t={t[k]})"))
    return out


def dynamical_map(model: LindbladModel, t: float) -> np.ndarray:
    """``V(t) = exp(L t)`` acting on column-stacked density matrices."""
    if not t >= 0:
        raise ValueError(f"dynamical map requires t >= 0, got {t}")
    return qstate.matrix_exponential(model.liouvillian, t)


def apply_map(superop, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    return qstate.unstack(np.asarray(superop) @ qstate.stack(rho), rho.shape[0])


def semigroup_residual(model: LindbladModel, t1: float, t2: float) -> float:
    """``max |V(t1) V(t2) - V(t1 + t2)|`` entrywise."""
    if t1 < 0 or t2 < 0:
        raise ValueError("semigroup residual requires nonnegative times")
    diff = dynamical_map(model, t1) @ dynamical_map(model, t2) - dynamical_map(model, t1 + t2)
    return float(np.max(np.abs(diff)))
