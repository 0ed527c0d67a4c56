"""Weighted pure-state ensembles and Monte Carlo statistics.

A :class:`WeightedStateEnsemble` keeps the individual members (an ensemble of
ensembles); :func:`covariance_density` forgets them and keeps only the density
matrix.  Trajectory simulations reduce their samples through
:class:`MomentAccumulator`, whose merge is exact for zero-variance data and is
always applied in a fixed order so results do not depend on scheduling.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from . import qstate
from .errors import DimensionError, ValidationError


@dataclass(frozen=True, eq=False)
class WeightedStateEnsemble:
    """Members ``(w_a, psi_a, N_a)``; ``N_a`` counts identical samples folded into one entry."""

    weights: np.ndarray
    states: np.ndarray
    multiplicities: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        states = np.asarray(self.states, dtype=complex)
        n = np.asarray(self.multiplicities, dtype=np.int64)
        if w.ndim != 1 or w.size == 0:
            raise ValidationError("an ensemble needs at least one member")
        if states.ndim != 2 or states.shape[0] != w.size or n.shape != w.shape:
            raise DimensionError("weights, states and multiplicities must describe the same members")
        if np.any(w < 0) or np.any(n < 1):
            raise ValidationError("weights must be nonnegative and multiplicities positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(f"ensemble weights sum to {w.sum():.15g}, expected 1 to 1e-12")
        for name, arr in (("weights", w), ("states", states), ("multiplicities", n)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_counts(cls, states: Sequence, counts: Sequence[int]) -> "WeightedStateEnsemble":
        """Weights ``N_a / sum N`` from sample counts."""
        counts = np.asarray(counts, dtype=np.int64)
        return cls(counts / counts.sum(), np.asarray(states, dtype=complex), counts)

    @classmethod
    def from_weights(cls, weights: Sequence[float], states: Sequence) -> "WeightedStateEnsemble":
        return cls(np.asarray(weights, float), np.asarray(states, dtype=complex), np.ones(len(weights), np.int64))

    @classmethod
    def uniform(cls, states: Sequence) -> "WeightedStateEnsemble":
        return cls.from_counts(states, np.ones(len(states), np.int64))

    def __len__(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def effective_size(self) -> float:
        """``1 / sum_copies w^2`` with each member split into ``N_a`` copies."""
        return 1.0 / float(np.sum(self.weights ** 2 / self.multiplicities))

    def merge(self, other: "WeightedStateEnsemble") -> "WeightedStateEnsemble":
        """Pool two sample ensembles; weights follow the multiplicities."""
        states = np.concatenate([self.states, other.states])
        counts = np.concatenate([self.multiplicities, other.multiplicities])
        return WeightedStateEnsemble.from_counts(states, counts)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        k = int(np.searchsorted(np.cumsum(self.weights), rng.random(), side="right"))
        return self.states[min(k, len(self) - 1)]


def covariance_density(ens: WeightedStateEnsemble) -> np.ndarray:
    """``rho = sum_a w_a |psi_a><psi_a|``, the covariance of the random state."""
    if len(ens) == 0:
        raise ValidationError("empty ensemble")
    psi = ens.states
    rho = np.einsum("a,ai,aj->ij", ens.weights, psi, psi.conj())
    return qstate.density_matrix(rho)


def canonical_phase(psi) -> np.ndarray:
    """Multiply by a global phase so the first nonzero amplitude is real and positive."""
    v = np.asarray(psi, dtype=complex)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValidationError("canonical phase of the zero vector is undefined")
    nz = np.flatnonzero(np.abs(v) > 1e-14 * norm)
    a = v[nz[0]]
    return v * (abs(a) / a)


def _weighted_moments(values: np.ndarray, ens: WeightedStateEnsemble) -> tuple[float, float]:
    mean = float(np.dot(ens.weights, values))
    n_eff = ens.effective_size
    if n_eff <= 1:
        return mean, 0.0
    var = float(np.dot(ens.weights, (values - mean) ** 2)) / (1.0 - 1.0 / n_eff)
    return mean, float(np.sqrt(max(var, 0.0) / n_eff))


def observable_statistics(ens: WeightedStateEnsemble, a) -> tuple[float, float]:
    """Mean and standard error of ``<psi|A|psi>`` over the ensemble.

    The variance carries a Bessel correction on the effective sample size
    ``1 / sum_copies w^2``; for pure sample counts this is ``(N-1)``.
    """
    a = qstate.hermitian(a)
    if a.shape[0] != ens.dim:
        raise DimensionError(f"observable dimension {a.shape[0]} differs from ensemble dimension {ens.dim}")
    values = np.einsum("ai,ij,aj->a", ens.states.conj(), a, ens.states).real
    return _weighted_moments(values, ens)


# -- text serialization ------------------------------------------------------------

def dump_ensemble(ens: WeightedStateEnsemble, fh: TextIO) -> None:
    """One member per line: ``weight, re(a_0), im(a_0), ..., multiplicity``."""
    for w, psi, n in zip(ens.weights, ens.states, ens.multiplicities):
        amps = []
        for a in psi:
            amps += [repr(float(a.real)), repr(float(a.imag))]
        fh.write(", ".join([repr(float(w)), *amps, str(int(n))]) + "\n")


def load_ensemble(lines: Iterable[str]) -> WeightedStateEnsemble:
    weights, states, counts = [], [], []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) < 4 or len(fields) % 2:
            raise ValidationError(f"line {lineno}: expected weight, amplitude pairs and a multiplicity")
        try:
            nums = [float(f) for f in fields[1:-1]]
            weights.append(float(fields[0]))
            counts.append(int(fields[-1]))
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
        states.append(np.array(nums[0::2]) + 1j * np.array(nums[1::2]))
    if len({len(s) for s in states}) > 1:
        raise DimensionError("ensemble members differ in dimension")
    return WeightedStateEnsemble(np.array(weights), np.array(states), np.array(counts))


# -- trajectory statistics -----------------------------------------------------------

@dataclass
class EnsembleStatistics:
    """Sample statistics at one time.

    ``mean`` is the average dyad, ``stderr`` the entrywise standard error of it
    (real and imaginary variances combined).  ``observables`` maps a name to
    ``(mean, stderr)`` of the per-sample value ``<psi|A|phi>``.
    """

    mean: np.ndarray
    stderr: np.ndarray
    n_samples: int
    observables: dict = field(default_factory=dict)
    mean_jump_count: float = 0.0

    @property
    def mean_density(self) -> np.ndarray:
        return self.mean

    @property
    def standard_error(self) -> float:
        """Frobenius norm of the entrywise standard errors."""
        return float(np.sqrt(np.sum(self.stderr ** 2)))


class MomentAccumulator:
    """Running mean and sum of squared deviations (Welford / Chan).

    Samples are arrays of a fixed shape, complex allowed; the second moment is
    accumulated for real and imaginary parts together.  ``merge`` is the
    pairwise update of Chan et al., exact when both partners have zero spread.
    """

    def __init__(self, shape: tuple, dtype=complex):
        self.n = 0
        self.mean = np.zeros(shape, dtype=dtype)
        self.m2 = np.zeros(shape, dtype=float)

    def add(self, x: np.ndarray) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + (np.conj(delta) * (x - self.mean)).real

    def add_batch(self, xs: np.ndarray) -> None:
        for x in xs:
            self.add(x)

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        out = MomentAccumulator(self.mean.shape, self.mean.dtype)
        n = self.n + other.n
        out.n = n
        if n == 0:
            return out
        if self.n == 0:
            out.mean, out.m2 = other.mean.copy(), other.m2.copy()
            return out
        if other.n == 0:
            out.mean, out.m2 = self.mean.copy(), self.m2.copy()
            return out
        delta = other.mean - self.mean
        out.mean = self.mean + delta * (other.n / n)
        out.m2 = self.m2 + other.m2 + np.abs(delta) ** 2 * (self.n * other.n / n)
        return out

    def variance(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros_like(self.m2)
        return np.maximum(self.m2, 0.0) / (self.n - 1)

    def stderr(self) -> np.ndarray:
        if self.n == 0:
            return np.zeros_like(self.m2)
        return np.sqrt(self.variance() / self.n)


def merge_all(accs: Sequence[MomentAccumulator]) -> MomentAccumulator:
    """Left fold in the given order."""
    out = accs[0]
    for acc in accs[1:]:
        out = out.merge(acc)
    return out
