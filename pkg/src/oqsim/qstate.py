"""Dense complex linear algebra and validated quantum-state types.

Operators are plain ``numpy`` complex arrays.  The validators in this module
(:func:`hermitian`, :func:`density_matrix`, :func:`state_vector`) are the single
place where the domain invariants are enforced; every other module calls them
on its inputs and outputs.

Qubit convention: the excited state ``|e>`` is basis vector 0 and the ground
state ``|g>`` is basis vector 1, so ``sigma_z = diag(1, -1)`` and
``sigma_minus = |g><e|``.  Oscillator operators use the Fock basis
``|0>, |1>, ...`` with ``<n-1|a|n> = sqrt(n)``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DimensionError, ValidationError

MAX_DIM = 4096

HERMITIAN_RTOL = 1e-12
STATE_TOL = 1e-10


def as_matrix(a, square: bool = True) -> np.ndarray:
    """Return ``a`` as a finite complex 2-D array."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2:
        raise DimensionError(f"expected a matrix, got array of shape {m.shape}")
    if square and m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix has non-finite entries")
    return m


def frozen(a: np.ndarray) -> np.ndarray:
    """Read-only copy, so model fields can be shared between workers."""
    out = np.array(a, dtype=complex, copy=True)
    out.setflags(write=False)
    return out


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def hermiticity_defect(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - dagger(m)), initial=0.0))


def hermitian(a, name: str = "operator") -> np.ndarray:
    """Validate that ``a`` is Hermitian to ``1e-12 * (1 + max|a|)``."""
    m = as_matrix(a)
    scale = 1.0 + float(np.max(np.abs(m), initial=0.0))
    defect = hermiticity_defect(m)
    if defect > HERMITIAN_RTOL * scale:
        raise ValidationError(
            f"{name} is not Hermitian: max|M - M^dagger| = {defect:.3e} exceeds "
            f"tolerance {HERMITIAN_RTOL:.0e} * (1 + max|M|) = {HERMITIAN_RTOL * scale:.3e}"
        )
    return m


def check_density_matrix(rho, tol: float = STATE_TOL, name: str = "density matrix") -> np.ndarray:
    """Validate Hermiticity, unit trace and positivity (smallest eigenvalue >= -tol)."""
    m = as_matrix(rho)
    defect = hermiticity_defect(m)
    if defect > tol:
        raise ValidationError(f"{name} is not Hermitian (defect {defect:.3e} > {tol:.0e})")
    tr = np.trace(m)
    if abs(tr - 1.0) > tol:
        raise ValidationError(f"{name} has trace {tr.real:.12g}{tr.imag:+.3g}j, expected 1 to {tol:.0e}")
    lo = float(np.linalg.eigvalsh(0.5 * (m + dagger(m)))[0])
    if lo < -tol:
        raise ValidationError(f"{name} is not positive semidefinite (smallest eigenvalue {lo:.3e})")
    return m


def density_matrix(rho, tol: float = STATE_TOL) -> np.ndarray:
    """Validated copy of ``rho`` with the Hermitian part taken."""
    m = check_density_matrix(rho, tol)
    return 0.5 * (m + dagger(m))


def is_density_matrix(rho, tol: float = STATE_TOL) -> bool:
    try:
        check_density_matrix(rho, tol)
    except (ValidationError, DimensionError):
        return False
    return True


def state_vector(psi, tol: float = STATE_TOL, normalize: bool = False) -> np.ndarray:
    """Validate a state vector; with ``normalize`` any nonzero vector is accepted."""
    v = np.asarray(psi, dtype=complex)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"expected a non-empty vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("state vector has non-finite entries")
    norm = np.linalg.norm(v)
    if normalize:
        if norm == 0:
            raise ValidationError("cannot normalize the zero vector")
        return v / norm
    if abs(norm - 1.0) > tol:
        raise ValidationError(f"state vector has norm {norm:.12g}, expected 1 to {tol:.0e}")
    return v.copy()


def projector(psi) -> np.ndarray:
    v = np.asarray(psi, dtype=complex)
    return np.outer(v, v.conj())


def kron(a, b, max_dim: int = MAX_DIM) -> np.ndarray:
    """Kronecker product with a cap on the resulting dimension."""
    a = as_matrix(a, square=False)
    b = as_matrix(b, square=False)
    rows, cols = a.shape[0] * b.shape[0], a.shape[1] * b.shape[1]
    if max(rows, cols) > max_dim:
        raise DimensionError(f"kron result {rows}x{cols} exceeds the dimension cap {max_dim}")
    return np.kron(a, b)


def partial_trace_env(rho_total, d_s: int, d_b: int) -> np.ndarray:
    """Trace out the environment factor of a ``(d_s*d_b)``-dimensional operator.

    The total space is ordered system-major: index ``(i, k) -> i*d_b + k``.
    """
    m = as_matrix(rho_total)
    if d_s < 1 or d_b < 1 or m.shape[0] != d_s * d_b:
        raise DimensionError(f"operator of dimension {m.shape[0]} does not factor as {d_s} x {d_b}")
    return np.einsum("ikjk->ij", m.reshape(d_s, d_b, d_s, d_b))


def expectation(a, rho, imag_tol: float = 1e-10) -> float:
    """``Re tr(A rho)``; a sizeable imaginary part signals a non-Hermitian input."""
    a = as_matrix(a)
    rho = as_matrix(rho)
    if a.shape != rho.shape:
        raise DimensionError(f"observable {a.shape} and state {rho.shape} differ in dimension")
    val = np.einsum("ij,ji->", a, rho)
    if abs(val.imag) > imag_tol * (1.0 + abs(val.real)):
        raise ValidationError(f"tr(A rho) has imaginary part {val.imag:.3e}")
    return float(val.real)


def matrix_exponential(a, scale: complex = 1.0) -> np.ndarray:
    """``exp(scale * a)``.

    Hermitian and anti-Hermitian arguments go through an eigendecomposition,
    which keeps unitary propagators unitary to machine precision.  Everything
    else uses scaling-and-squaring with a Pade approximant.
    """
    m = scale * as_matrix(a)
    tol = 1e-14 * (1.0 + float(np.max(np.abs(m), initial=0.0)))
    if hermiticity_defect(m) <= tol:
        w, v = np.linalg.eigh(0.5 * (m + dagger(m)))
        return (v * np.exp(w)) @ dagger(v)
    am = 1j * m
    if hermiticity_defect(am) <= tol:
        w, v = np.linalg.eigh(0.5 * (am + dagger(am)))
        return (v * np.exp(-1j * w)) @ dagger(v)
    return scipy.linalg.expm(m)


def density_from_mixture(weights: Sequence[float], states: Sequence) -> np.ndarray:
    """``sum_a w_a |psi_a><psi_a|`` for normalized states and weights summing to one."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or len(w) != len(states) or len(w) == 0:
        raise DimensionError("weights and states must be non-empty and of equal length")
    if np.any(w < 0):
        raise ValidationError("mixture weights must be nonnegative")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValidationError(f"mixture weights sum to {w.sum():.15g}, expected 1 to 1e-12")
    vecs = [state_vector(s) for s in states]
    d = vecs[0].size
    if any(v.size != d for v in vecs):
        raise DimensionError("mixture states differ in dimension")
    rho = np.zeros((d, d), dtype=complex)
    for wa, v in zip(w, vecs):
        rho += wa * np.outer(v, v.conj())
    return density_matrix(rho)


def trace_norm(m) -> float:
    return float(np.sum(np.linalg.svd(np.asarray(m, dtype=complex), compute_uv=False)))


def purity(rho) -> float:
    rho = np.asarray(rho, dtype=complex)
    return float(np.einsum("ij,ji->", rho, rho).real)


# -- superoperators (column stacking: A rho B -> (B^T kron A) vec(rho)) --------

def stack(rho) -> np.ndarray:
    return np.asarray(rho, dtype=complex).reshape(-1, order="F")


def unstack(vec, d: int) -> np.ndarray:
    return np.asarray(vec, dtype=complex).reshape(d, d, order="F")


def sprepost(a, b) -> np.ndarray:
    """Superoperator of ``rho -> a rho b``."""
    return np.kron(np.asarray(b, dtype=complex).T, np.asarray(a, dtype=complex))


def choi_matrix(superop) -> np.ndarray:
    """Choi matrix ``sum_ij |i><j| (x) Phi(|i><j|)`` of a column-stacked superoperator."""
    s = np.asarray(superop, dtype=complex)
    d = int(round(np.sqrt(s.shape[0])))
    if d * d != s.shape[0] or s.shape[0] != s.shape[1]:
        raise DimensionError(f"superoperator shape {s.shape} is not d^2 x d^2")
    # s[a + d*b, i + d*j] = <a|Phi(|i><j|)|b>
    return s.reshape(d, d, d, d).transpose(3, 1, 2, 0).reshape(d * d, d * d)


def choi_from_kraus(kraus) -> np.ndarray:
    kraus = [as_matrix(k) for k in kraus]
    d = kraus[0].shape[0]
    out = np.zeros((d * d, d * d), dtype=complex)
    for k in kraus:
        # vec of k in the (i, a) ordering: |i> (x) k|i>
        v = k.T.reshape(-1)
        out += np.outer(v, v.conj())
    return out


def min_eigenvalue(m) -> float:
    m = np.asarray(m, dtype=complex)
    return float(np.linalg.eigvalsh(0.5 * (m + dagger(m)))[0])


# -- named builders ------------------------------------------------------------

def identity(d: int) -> np.ndarray:
    return np.eye(d, dtype=complex)


def zero(d: int) -> np.ndarray:
    return np.zeros((d, d), dtype=complex)


def pauli_x() -> np.ndarray:
    return np.array([[0, 1], [1, 0]], dtype=complex)


def pauli_y() -> np.ndarray:
    return np.array([[0, -1j], [1j, 0]], dtype=complex)


def pauli_z() -> np.ndarray:
    return np.array([[1, 0], [0, -1]], dtype=complex)


def sigma_minus() -> np.ndarray:
    """``|g><e|`` with ``|e> = (1, 0)``."""
    return np.array([[0, 0], [1, 0]], dtype=complex)


def sigma_plus() -> np.ndarray:
    return sigma_minus().T.copy()


def annihilation(d: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, d)), 1).astype(complex)


def creation(d: int) -> np.ndarray:
    return annihilation(d).T.copy()


def number(d: int) -> np.ndarray:
    return np.diag(np.arange(d)).astype(complex)


def basis(i: int, d: int) -> np.ndarray:
    if not 0 <= i < d:
        raise DimensionError(f"basis index {i} out of range for dimension {d}")
    v = np.zeros(d, dtype=complex)
    v[i] = 1.0
    return v


def basis_projector(i: int, d: int) -> np.ndarray:
    return projector(basis(i, d))


def excited() -> np.ndarray:
    return basis(0, 2)


def ground() -> np.ndarray:
    return basis(1, 2)


def plus() -> np.ndarray:
    return np.array([1, 1], dtype=complex) / np.sqrt(2)


def minus() -> np.ndarray:
    return np.array([1, -1], dtype=complex) / np.sqrt(2)


def random_density_matrix(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Ginibre-distributed random state, used by tests and model-load witnesses."""
    g = rng.normal(size=(d, rank or d)) + 1j * rng.normal(size=(d, rank or d))
    rho = g @ dagger(g)
    return rho / np.trace(rho).real


def random_state_vector(d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)
