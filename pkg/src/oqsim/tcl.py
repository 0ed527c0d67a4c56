"""Time-local (TCL-form) master equations.

The generator is given directly as the operator quadruple

    d rho / dt = A(t) rho + rho B(t)^dag + sum_i C_i(t) rho D_i(t)^dag,

which need not be of Lindblad form.  The operators are consumed as inputs;
nothing here derives them from a microscopic model.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _ode, qstate
from .errors import DimensionError, IntervalError, ValidationError
from .lindblad import LindbladModel

TRACE_WITNESS_TOL = 1e-8
SINGULAR_COND = 1e12


class TracePreservationWarning(UserWarning):
    pass


# -- scalar time profiles --------------------------------------------------------

def _affine_sin(t, c0, c1, omega, phase=0.0):
    return c0 + c1 * math.sin(omega * t + phase)


def _affine_cos(t, c0, c1, omega, phase=0.0):
    return c0 + c1 * math.cos(omega * t + phase)


def _sqrt_affine_sin(t, c0, c1, omega, phase=0.0):
    return math.sqrt(max(0.0, _affine_sin(t, c0, c1, omega, phase)))


def _signed_sqrt_affine_sin(t, c0, c1, omega, phase=0.0):
    f = _affine_sin(t, c0, c1, omega, phase)
    return math.copysign(math.sqrt(abs(f)), f)


PROFILES: dict[str, Callable[..., float]] = {
    "constant": lambda t, c: c,
    "affine_sin": _affine_sin,
    "affine_cos": _affine_cos,
    "sqrt_affine_sin": _sqrt_affine_sin,
    "signed_sqrt_affine_sin": _signed_sqrt_affine_sin,
    "exp_decay": lambda t, c, rate: c * math.exp(-rate * t),
}

_PROFILE_RE = re.compile(r"^\s*([a-z_]+)\s*\(([^()]*)\)\s*$")


@dataclass(frozen=True)
class ScalarProfile:
    """Named built-in scalar function of time, e.g. ``affine_sin(1, 1, 2)``."""

    name: str
    params: tuple

    def __post_init__(self):
        if self.name not in PROFILES:
            raise ValidationError(f"unknown time profile {self.name!r}; known: {', '.join(sorted(PROFILES))}")
        try:
            PROFILES[self.name](0.0, *self.params)
        except TypeError:
            raise ValidationError(f"wrong number of parameters for profile {self.name}{self.params}") from None

    @classmethod
    def parse(cls, text: str) -> "ScalarProfile":
        m = _PROFILE_RE.match(text)
        if not m:
            raise ValidationError(f"cannot parse time profile {text!r}; expected name(p1, p2, ...)")
        args = [a for a in m.group(2).split(",") if a.strip()]
        try:
            params = tuple(float(a) for a in args)
        except ValueError:
            raise ValidationError(f"non-numeric parameter in time profile {text!r}") from None
        return cls(m.group(1), params)

    def __call__(self, t: float) -> float:
        return PROFILES[self.name](t, *self.params)

    def __str__(self) -> str:
        return f"{self.name}({', '.join(repr(p) for p in self.params)})"


# -- time-indexed operators ------------------------------------------------------------

class TimeOperator:
    """A ``d x d`` matrix-valued function of time on ``interval``."""

    interval = (0.0, math.inf)

    def __call__(self, t: float) -> np.ndarray:
        raise NotImplementedError

    @property
    def dim(self) -> int:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ConstantOperator(TimeOperator):
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", qstate.frozen(qstate.as_matrix(self.matrix)))

    def __call__(self, t):
        return self.matrix

    @property
    def dim(self):
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class ProfileOperator(TimeOperator):
    """``profile(t) * matrix``."""

    matrix: np.ndarray
    profile: ScalarProfile

    def __post_init__(self):
        object.__setattr__(self, "matrix", qstate.frozen(qstate.as_matrix(self.matrix)))

    def __call__(self, t):
        return self.profile(t) * self.matrix

    @property
    def dim(self):
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class TableOperator(TimeOperator):
    """Matrices on a uniform time grid, linearly interpolated in between."""

    times: np.ndarray
    matrices: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        mats = np.asarray(self.matrices, dtype=complex)
        if times.ndim != 1 or times.size < 2:
            raise ValidationError("a table operator needs at least two time nodes")
        if mats.ndim != 3 or mats.shape[0] != times.size or mats.shape[1] != mats.shape[2]:
            raise DimensionError(f"table matrices of shape {mats.shape} do not match {times.size} square nodes")
        steps = np.diff(times)
        if np.any(steps <= 0) or np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(times[-1])):
            raise ValidationError("table time nodes must be uniformly spaced and ascending")
        if not np.all(np.isfinite(mats)):
            raise ValidationError("table matrices contain non-finite entries")
        times.setflags(write=False)
        mats.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "matrices", mats)

    @classmethod
    def from_function(
        cls, f: Callable[[float], np.ndarray], t_end: float, fastest_rate: float = 1.0, nodes_per_unit: int = 1000
    ) -> "TableOperator":
        """Tabulate ``f`` with ``nodes_per_unit`` nodes per unit of ``fastest_rate * t``."""
        n = max(2, int(math.ceil(nodes_per_unit * max(fastest_rate, 1e-12) * t_end)) + 1)
        times = np.linspace(0.0, t_end, n)
        return cls(times, np.array([f(t) for t in times]))

    @property
    def interval(self):
        return (float(self.times[0]), float(self.times[-1]))

    def __call__(self, t):
        lo, hi = self.interval
        if not lo <= t <= hi:
            raise IntervalError(f"t={t} outside table interval [{lo}, {hi}]")
        h = self.times[1] - self.times[0]
        k = min(int((t - lo) / h), self.times.size - 2)
        w = (t - self.times[k]) / h
        return (1.0 - w) * self.matrices[k] + w * self.matrices[k + 1]

    @property
    def dim(self):
        return self.matrices.shape[1]


@dataclass(frozen=True, eq=False)
class SumOperator(TimeOperator):
    terms: tuple

    def __post_init__(self):
        if not self.terms:
            raise ValidationError("a sum operator needs at least one term")
        if len({term.dim for term in self.terms}) != 1:
            raise DimensionError("summed operators differ in dimension")

    @property
    def interval(self):
        return (max(term.interval[0] for term in self.terms), min(term.interval[1] for term in self.terms))

    def __call__(self, t):
        return sum(term(t) for term in self.terms)

    @property
    def dim(self):
        return self.terms[0].dim


def as_time_operator(x) -> TimeOperator:
    if isinstance(x, TimeOperator):
        return x
    return ConstantOperator(np.asarray(x, dtype=complex))


# -- the model ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TimeLocalModel:
    a: TimeOperator
    b: TimeOperator
    channels: tuple = ()
    witness_times: int = 11

    def __post_init__(self):
        a, b = as_time_operator(self.a), as_time_operator(self.b)
        chans = tuple((as_time_operator(c), as_time_operator(d)) for c, d in self.channels)
        dims = {a.dim, b.dim} | {op.dim for pair in chans for op in pair}
        if len(dims) != 1:
            raise DimensionError(f"time-local operators differ in dimension: {sorted(dims)}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "channels", chans)
        lo, hi = self.interval
        if lo > 0 or hi <= lo:
            raise IntervalError(f"model interval [{lo}, {hi}] must contain [0, t] for some t > 0")
        defect = self.trace_defect()
        if defect > TRACE_WITNESS_TOL:
            warnings.warn(
                f"time-local generator is not trace preserving: max ||A + B^dag + sum D^dag C|| = {defect:.3e}",
                TracePreservationWarning,
                stacklevel=3,
            )

    @property
    def dim(self) -> int:
        return self.a.dim

    @property
    def interval(self) -> tuple[float, float]:
        ops = [self.a, self.b] + [op for pair in self.channels for op in pair]
        return (max(op.interval[0] for op in ops), min(op.interval[1] for op in ops))

    def sample_times(self) -> np.ndarray:
        lo, hi = self.interval
        return np.linspace(lo, hi if math.isfinite(hi) else lo + 10.0, self.witness_times)

    def trace_defect(self, times: Sequence[float] | None = None) -> float:
        """``max_t ||A + B^dag + sum_i D_i^dag C_i||``; zero iff the trace is conserved."""
        worst = 0.0
        for t in self.sample_times() if times is None else times:
            m = self.a(t) + self.b(t).conj().T
            for c, d in self.channels:
                m = m + d(t).conj().T @ c(t)
            worst = max(worst, float(np.max(np.abs(m))))
        return worst

    def is_symmetric(self, times: Sequence[float] | None = None) -> bool:
        """``B == A`` and ``D_i == C_i`` at the sample times (Hermiticity-preserving)."""
        ts = self.sample_times() if times is None else times
        pairs = [(self.a, self.b)] + list(self.channels)
        return all(x is y or all(np.array_equal(x(t), y(t)) for t in ts) for x, y in pairs)

    def check_time(self, t: float) -> None:
        lo, hi = self.interval
        if not lo <= t <= hi:
            raise IntervalError(f"t={t} outside model interval [{lo}, {hi}]")


def timelocal_rhs(model: TimeLocalModel, rho, t: float) -> np.ndarray:
    """``A rho + rho B^dag + sum_i C_i rho D_i^dag`` at time ``t``."""
    model.check_time(t)
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (model.dim, model.dim):
        raise DimensionError(f"rho has shape {rho.shape}, model dimension is {model.dim}")
    out = model.a(t) @ rho + rho @ model.b(t).conj().T
    for c, d in model.channels:
        out += c(t) @ rho @ d(t).conj().T
    return out


def timelocal_superoperator(model: TimeLocalModel, t: float) -> np.ndarray:
    """Column-stacked matrix of the generator at ``t``."""
    model.check_time(t)
    eye = np.eye(model.dim)
    out = qstate.sprepost(model.a(t), eye) + qstate.sprepost(eye, model.b(t).conj().T)
    for c, d in model.channels:
        out += qstate.sprepost(c(t), d(t).conj().T)
    return out


def embed_lindblad(model: LindbladModel) -> TimeLocalModel:
    """``A = B = -iH - (1/2) sum gamma A^dag A`` and ``C_i = D_i = sqrt(gamma_i) A_i``."""
    g = ConstantOperator(-1j * model.effective_hamiltonian)
    chans = []
    for gamma, a in model.channels:
        j = ConstantOperator(np.sqrt(gamma) * a)
        chans.append((j, j))
    return TimeLocalModel(g, g, tuple(chans))


def integrate_timelocal(
    model: TimeLocalModel,
    rho0,
    t_grid: Sequence[float],
    rtol: float = _ode.RTOL,
    atol: float = _ode.ATOL,
) -> list[np.ndarray]:
    """Solve the time-local equation on ``t_grid``.

    Outputs are not projected onto the state space: a generator outside
    Lindblad form may legitimately leave it.
    """
    rho0 = qstate.as_matrix(rho0)
    if rho0.shape[0] != model.dim:
        raise DimensionError(f"rho0 has dimension {rho0.shape[0]}, model has {model.dim}")
    t = _ode.check_grid(t_grid, start=None)
    model.check_time(t[0])
    model.check_time(t[-1])
    return list(_ode.integrate(lambda s, r: timelocal_rhs(model, r, s), rho0, t, rtol, atol))


# -- perturbative generator series ------------------------------------------------

@dataclass(frozen=True)
class GeneratorSeries:
    """``K(t) = sum_{n=1}^{order} alpha^n K_n(t)`` with ``terms[n-1] = K_n``.

    Each term is a callable returning a ``d^2 x d^2`` column-stacked
    superoperator; a :class:`TimeLocalModel` may be passed and is converted.
    """

    alpha: float
    terms: tuple

    def __post_init__(self):
        terms = tuple(
            (lambda t, m=k: timelocal_superoperator(m, t)) if isinstance(k, TimeLocalModel) else k
            for k in self.terms
        )
        object.__setattr__(self, "terms", terms)

    @property
    def order(self) -> int:
        return len(self.terms)


def assemble_generator(series: GeneratorSeries) -> Callable[[float], np.ndarray]:
    if series.order < 1:
        raise ValidationError("a generator series needs at least one term")
    alpha, terms = series.alpha, series.terms

    def generator(t: float) -> np.ndarray:
        out = alpha * np.asarray(terms[0](t), dtype=complex)
        for n, k in enumerate(terms[1:], start=2):
            out = out + alpha ** n * np.asarray(k(t), dtype=complex)
        return out

    return generator


def integrate_generator(
    generator: Callable[[float], np.ndarray], rho0, t_grid: Sequence[float],
    rtol: float = _ode.RTOL, atol: float = _ode.ATOL,
) -> list[np.ndarray]:
    """Integrate ``d vec(rho)/dt = K(t) vec(rho)`` for a superoperator-valued ``K``."""
    rho0 = qstate.as_matrix(rho0)
    d = rho0.shape[0]
    t = _ode.check_grid(t_grid, start=None)
    ys = _ode.integrate(lambda s, v: generator(s) @ v, qstate.stack(rho0), t, rtol, atol)
    return [qstate.unstack(v, d) for v in ys]


@dataclass
class InvertibilityReport:
    times: np.ndarray
    condition_numbers: np.ndarray
    threshold: float = SINGULAR_COND

    @property
    def lost(self) -> bool:
        return bool(np.any(self.condition_numbers > self.threshold))

    @property
    def first_loss_time(self) -> float | None:
        idx = np.flatnonzero(self.condition_numbers > self.threshold)
        return float(self.times[idx[0]]) if idx.size else None


def flow_maps(model: TimeLocalModel, t_grid: Sequence[float]) -> list[np.ndarray]:
    """Propagated superoperators ``Lambda(t)`` with ``Lambda(t0) = I``."""
    t = _ode.check_grid(t_grid, start=None)
    model.check_time(t[0])
    model.check_time(t[-1])
    n = model.dim ** 2
    return list(_ode.integrate(lambda s, m: timelocal_superoperator(model, s) @ m, np.eye(n, dtype=complex), t))


def invertibility_check(model: TimeLocalModel, t_grid: Sequence[float], threshold: float = SINGULAR_COND):
    """Flag times where the flow map is numerically singular.

    A singular flow map means the initial state can no longer be recovered from
    the current one, which is where a time-local description breaks down.
    """
    maps = flow_maps(model, t_grid)
    conds = np.array([np.linalg.cond(m) for m in maps])
    return InvertibilityReport(np.asarray(t_grid, dtype=float), conds, threshold)
