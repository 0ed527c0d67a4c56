"""Quantum operations generated by an indirect (probe) measurement.

A probe prepared in the mixture ``sum_k p_k |phi_k><phi_k|`` interacts with the
system through ``U``; a probe observable ``R`` with non-degenerate eigenbasis
``{phi_m}`` is then read out.  Outcome ``m`` acts on the system through the
Kraus operators ``Omega_mk = sqrt(p_k) <phi_m|U|phi_k>``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import qstate
from .errors import DimensionError, ImpossibleOutcomeError, ValidationError

ORTHONORMAL_TOL = 1e-10
UNITARY_TOL = 1e-10
COMPLETENESS_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ProbeModel:
    probe_weights: np.ndarray
    probe_states: tuple
    r_values: np.ndarray
    r_basis: tuple
    u: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probe_weights, dtype=float)
        if p.ndim != 1 or p.size != len(self.probe_states) or p.size == 0:
            raise DimensionError("probe ensemble weights and states must be non-empty and of equal length")
        if np.any(p < 0):
            raise ValidationError("probe ensemble weights must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError(f"probe ensemble weights sum to {p.sum():.15g}, expected 1 to 1e-12")
        states = tuple(qstate.state_vector(s) for s in self.probe_states)
        d_b = states[0].size
        if any(s.size != d_b for s in states):
            raise DimensionError("probe states differ in dimension")

        r = np.asarray(self.r_values, dtype=float)
        basis = tuple(np.asarray(v, dtype=complex) for v in self.r_basis)
        if r.ndim != 1 or r.size != len(basis) or r.size == 0:
            raise DimensionError("r_values and r_basis must be non-empty and of equal length")
        if any(v.ndim != 1 or v.size != d_b for v in basis):
            raise DimensionError(f"R eigenvectors must have the probe dimension {d_b}")
        gram = np.array([[np.vdot(a, b) for b in basis] for a in basis])
        if np.max(np.abs(gram - np.eye(len(basis)))) > ORTHONORMAL_TOL:
            raise ValidationError("R eigenbasis is not orthonormal to 1e-10")
        if len(np.unique(r)) != r.size:
            raise ValidationError("R eigenvalues must be pairwise distinct (degenerate spectra are not supported)")

        u = qstate.as_matrix(self.u)
        if u.shape[0] % d_b:
            raise DimensionError(f"U dimension {u.shape[0]} is not a multiple of the probe dimension {d_b}")
        defect = np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0])))
        if defect > UNITARY_TOL:
            raise ValidationError(f"U is not unitary: max|U^dagger U - I| = {defect:.3e} > {UNITARY_TOL:.0e}")

        object.__setattr__(self, "probe_weights", p)
        object.__setattr__(self, "probe_states", states)
        object.__setattr__(self, "r_values", r)
        object.__setattr__(self, "r_basis", basis)
        object.__setattr__(self, "u", qstate.frozen(u))

    @property
    def d_b(self) -> int:
        return self.probe_states[0].size

    @property
    def d_s(self) -> int:
        return self.u.shape[0] // self.d_b


@dataclass(frozen=True)
class Outcome:
    index: int
    value: float
    kraus: tuple


@dataclass(frozen=True)
class QuantumOperation:
    """Kraus operators grouped by measurement outcome."""

    outcomes: tuple

    def __post_init__(self):
        if not self.outcomes:
            raise ValidationError("a quantum operation needs at least one outcome")
        total = sum(k.conj().T @ k for o in self.outcomes for k in o.kraus)
        defect = float(np.max(np.abs(total - np.eye(total.shape[0]))))
        if defect > COMPLETENESS_TOL:
            raise ValidationError(f"Kraus operators are not complete: max|sum K^dag K - I| = {defect:.3e}")

    @classmethod
    def from_kraus(cls, groups: Sequence[Sequence], values: Sequence[float] | None = None) -> "QuantumOperation":
        values = list(range(len(groups))) if values is None else values
        return cls(tuple(
            Outcome(m, float(v), tuple(qstate.as_matrix(k) for k in ks))
            for m, (v, ks) in enumerate(zip(values, groups))
        ))

    @property
    def dim(self) -> int:
        return self.outcomes[0].kraus[0].shape[0]

    def __len__(self) -> int:
        return len(self.outcomes)

    def __getitem__(self, m: int) -> Outcome:
        if not 0 <= m < len(self.outcomes):
            raise IndexError(f"outcome index {m} out of range 0..{len(self.outcomes) - 1}")
        return self.outcomes[m]


def kraus_from_probe(probe: ProbeModel) -> QuantumOperation:
    d_s, d_b = probe.d_s, probe.d_b
    u4 = probe.u.reshape(d_s, d_b, d_s, d_b)
    outcomes = []
    for m, (r_m, phi_m) in enumerate(zip(probe.r_values, probe.r_basis)):
        kraus = tuple(
            np.sqrt(p_k) * np.einsum("b,ibjc,c->ij", phi_m.conj(), u4, phi_k)
            for p_k, phi_k in zip(probe.probe_weights, probe.probe_states)
        )
        outcomes.append(Outcome(m, float(r_m), kraus))
    return QuantumOperation(tuple(outcomes))


def _check_rho(op: QuantumOperation, rho) -> np.ndarray:
    rho = qstate.as_matrix(rho)
    if rho.shape[0] != op.dim:
        raise DimensionError(f"rho has dimension {rho.shape[0]}, operation acts on {op.dim}")
    return rho


def apply_operation(op: QuantumOperation, m: int, rho) -> np.ndarray:
    """Unnormalized conditioned state ``Phi_m(rho) = sum_k Omega_mk rho Omega_mk^dagger``."""
    rho = _check_rho(op, rho)
    out = np.zeros_like(rho)
    for k in op[m].kraus:
        out += k @ rho @ k.conj().T
    return out


def outcome_probability(op: QuantumOperation, m: int, rho) -> float:
    p = float(np.trace(apply_operation(op, m, rho)).real)
    if p < -1e-12 or p > 1 + 1e-12:
        raise ValidationError(f"outcome probability {p} outside [0, 1]")
    return min(max(p, 0.0), 1.0)


def outcome_table(op: QuantumOperation, rho) -> list[tuple[int, float, float]]:
    """``(m, r_m, P(m))`` for every outcome."""
    return [(o.index, o.value, outcome_probability(op, o.index, rho)) for o in op.outcomes]


def selective_post_state(op: QuantumOperation, m: int, rho, eps: float = 1e-12) -> np.ndarray:
    phi = apply_operation(op, m, rho)
    p = float(np.trace(phi).real)
    if p <= eps:
        raise ImpossibleOutcomeError(f"outcome {m} has probability {p:.3e} <= {eps:.0e}; cannot condition on it")
    return qstate.density_matrix(phi / p)


def nonselective_post_state(op: QuantumOperation, rho) -> np.ndarray:
    rho = _check_rho(op, rho)
    out = sum(apply_operation(op, o.index, rho) for o in op.outcomes)
    out = 0.5 * (out + out.conj().T)
    return qstate.density_matrix(out / np.trace(out).real)


def operation_superoperator(op: QuantumOperation, m: int) -> np.ndarray:
    return sum(qstate.sprepost(k, k.conj().T) for k in op[m].kraus)


def choi_of_outcome(op: QuantumOperation, m: int) -> np.ndarray:
    return qstate.choi_from_kraus(op[m].kraus)


def probe_from_total_system(
    model,
    tau: float,
    r_values: Sequence[float] | None = None,
    r_basis: Sequence | None = None,
) -> ProbeModel:
    """Probe with ``U = exp(-i H tau)`` from a :class:`~oqsim.micro.TotalSystemModel`.

    The probe ensemble is the eigendecomposition of the model's bath state; the
    readout defaults to the computational basis with ``r_m = m``.
    """
    w, v = np.linalg.eigh(model.rho_b)
    keep = w > 1e-14
    weights = w[keep] / w[keep].sum()
    states = [v[:, j] for j in np.flatnonzero(keep)]
    d_b = model.d_b
    if r_basis is None:
        r_basis = [qstate.basis(m, d_b) for m in range(d_b)]
    if r_values is None:
        r_values = list(range(len(r_basis)))
    return ProbeModel(weights, tuple(states), np.asarray(r_values, float), tuple(r_basis), model.propagator(tau))
