"""Stochastic unraveling of time-local master equations in the doubled Hilbert space.

A pair ``theta = (phi, psi)`` follows the drift

    d theta / dt = F(t) theta + (1/2) sum_i lambda_i(t) theta,
    lambda_i = ||J_i theta||^2 / ||theta||^2,

with ``F = diag(A, B)`` and ``J_i = diag(C_i, D_i)``, interrupted by jumps
``theta -> (||theta|| / ||J_i theta||) J_i theta`` at rate ``lambda_i``.  The
average dyad ``E[|phi><psi|]`` then solves the time-local master equation.

Implementation: the drift factorizes as ``theta(t) = exp(I(t)/2) theta_lin(t)``
where ``theta_lin`` solves the linear equation ``d theta_lin/dt = F theta_lin``
and ``I`` is the integrated total rate since the last jump.  ``theta_lin`` and
``I`` are advanced together by classical RK4; a jump fires when ``I`` reaches
an Exp(1)-distributed threshold, located inside the step by cubic Hermite
interpolation of ``I``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from . import qstate
from ._ode import check_grid
from .ensemble import EnsembleStatistics, WeightedStateEnsemble
from .errors import DarkStateError, DimensionError, ValidationError
from .mcwf import _as_generator, _choose, _initial_states, accumulate, statistics_from
from .rng import DEFAULT_CHUNK, run_chunks, trajectory_generators
from .tcl import TimeLocalModel, TimeOperator

DARK_TOL = 1e-12
MAX_STEP = 1e-2


@dataclass(frozen=True, eq=False)
class DoubledState:
    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=complex)
        psi = np.asarray(self.psi, dtype=complex)
        if phi.ndim != 1 or phi.shape != psi.shape:
            raise DimensionError(f"doubled-state components have shapes {phi.shape} and {psi.shape}")
        if self.norm2_of(phi, psi) <= 1e-12:
            raise ValidationError("doubled state has (numerically) zero norm")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)

    @staticmethod
    def norm2_of(phi, psi) -> float:
        return float(np.vdot(phi, phi).real + np.vdot(psi, psi).real)

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.norm2_of(self.phi, self.psi)))

    @classmethod
    def symmetric(cls, psi) -> "DoubledState":
        psi = np.asarray(psi, dtype=complex)
        return cls(psi.copy(), psi.copy())

    def dyad(self) -> np.ndarray:
        return np.outer(self.phi, self.psi.conj())


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """``diag(top(t), bottom(t))`` acting as ``(top phi, bottom psi)``."""

    top: TimeOperator
    bottom: TimeOperator

    def __post_init__(self):
        if self.top.dim != self.bottom.dim:
            raise DimensionError("block operator blocks differ in dimension")

    def blocks(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return self.top(t), self.bottom(t)

    def matrix(self, t: float) -> np.ndarray:
        top, bottom = self.blocks(t)
        d = top.shape[0]
        out = np.zeros((2 * d, 2 * d), dtype=complex)
        out[:d, :d] = top
        out[d:, d:] = bottom
        return out

    def apply(self, theta: DoubledState, t: float) -> DoubledState:
        top, bottom = self.blocks(t)
        return _raw(top @ theta.phi, bottom @ theta.psi)


def _raw(phi, psi) -> DoubledState:
    """DoubledState without the nonzero-norm check (for intermediate results)."""
    out = object.__new__(DoubledState)
    object.__setattr__(out, "phi", np.asarray(phi, dtype=complex))
    object.__setattr__(out, "psi", np.asarray(psi, dtype=complex))
    return out


def block_operators(model: TimeLocalModel, t: float) -> tuple[BlockOperator, list[BlockOperator]]:
    """``F = diag(A, B)`` and ``J_i = diag(C_i, D_i)``."""
    model.check_time(t)
    return BlockOperator(model.a, model.b), [BlockOperator(c, d) for c, d in model.channels]


def _jump_norms2(j_list: Sequence[BlockOperator], theta: DoubledState, t: float) -> np.ndarray:
    out = []
    for j in j_list:
        top, bottom = j.blocks(t)
        cphi, dpsi = top @ theta.phi, bottom @ theta.psi
        out.append(np.vdot(cphi, cphi).real + np.vdot(dpsi, dpsi).real)
    return np.array(out, dtype=float)


def doubled_jump_rates(j_list: Sequence[BlockOperator], theta: DoubledState, t: float) -> np.ndarray:
    """``lambda_i = ||J_i theta||^2 / ||theta||^2``."""
    n2 = DoubledState.norm2_of(theta.phi, theta.psi)
    if n2 <= 0:
        raise ValidationError("jump rates are undefined for the zero doubled state")
    return _jump_norms2(j_list, theta, t) / n2


def apply_doubled_jump(j_i: BlockOperator, theta: DoubledState, t: float) -> DoubledState:
    """``theta -> (||theta|| / ||J theta||) J theta``; the combined norm is unchanged."""
    top, bottom = j_i.blocks(t)
    phi, psi = top @ theta.phi, bottom @ theta.psi
    jn = np.sqrt(DoubledState.norm2_of(phi, psi))
    if jn <= DARK_TOL:
        raise DarkStateError(f"jump operator annihilates the doubled state (||J theta|| = {jn:.3e})")
    scale = theta.norm / jn
    return DoubledState(scale * phi, scale * psi)


def doubled_drift(f: BlockOperator, j_list: Sequence[BlockOperator], theta: DoubledState, t: float):
    """``F theta + (1/2) sum_i lambda_i theta`` as ``(d phi/dt, d psi/dt)``."""
    lam = doubled_jump_rates(j_list, theta, t).sum()
    a, b = f.blocks(t)
    return a @ theta.phi + 0.5 * lam * theta.phi, b @ theta.psi + 0.5 * lam * theta.psi


@dataclass
class DoubledTrajectoryRecord:
    sample_times: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    jump_log: list = field(default_factory=list)

    @property
    def jump_times(self) -> np.ndarray:
        return np.array([t for t, _ in self.jump_log])

    def jump_counts(self) -> np.ndarray:
        return np.searchsorted(self.jump_times, self.sample_times, side="right")

    def dyads(self) -> np.ndarray:
        return np.einsum("ti,tj->tij", self.phi, self.psi.conj())


class _Operators:
    """Block matrices at a time, memoized per step (all trajectories share them)."""

    def __init__(self, model: TimeLocalModel):
        self.model = model
        self.cache: dict[float, tuple] = {}

    def __call__(self, t: float):
        ops = self.cache.get(t)
        if ops is None:
            m = self.model
            ops = (m.a(t).T, m.b(t).T, [c(t).T for c, _ in m.channels], [d(t).T for _, d in m.channels])
            if len(self.cache) > 8:
                self.cache.clear()
            self.cache[t] = ops
        return ops


def _rates(ops, ph: np.ndarray, ps: np.ndarray) -> np.ndarray:
    """Per-channel rates, shape ``(n, n_channels)``, for batches of components."""
    _, _, cs, ds = ops
    n2 = np.einsum("ij,ij->i", ph.conj(), ph).real + np.einsum("ij,ij->i", ps.conj(), ps).real
    out = np.empty((ph.shape[0], len(cs)))
    for i, (c, d) in enumerate(zip(cs, ds)):
        cp, dp = ph @ c, ps @ d
        out[:, i] = np.einsum("ij,ij->i", cp.conj(), cp).real + np.einsum("ij,ij->i", dp.conj(), dp).real
    return out / n2[:, None]


def _rk4(opf: _Operators, t: float, h: float, ph, ps, integ):
    """One RK4 step of the linear flow plus the integrated total rate."""

    def f(tt, x, y):
        a, b, _, _ = ops = opf(tt)
        return x @ a, y @ b, _rates(ops, x, y).sum(axis=1)

    k1 = f(t, ph, ps)
    k2 = f(t + 0.5 * h, ph + 0.5 * h * k1[0], ps + 0.5 * h * k1[1])
    k3 = f(t + 0.5 * h, ph + 0.5 * h * k2[0], ps + 0.5 * h * k2[1])
    k4 = f(t + h, ph + h * k3[0], ps + h * k3[1])
    ph_new = ph + (h / 6) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    ps_new = ps + (h / 6) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    integ_new = integ + (h / 6) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return ph_new, ps_new, integ_new, k1[2]


def _hermite(s, h, y0, y1, m0, m1):
    x = s / h
    h00 = 2 * x**3 - 3 * x**2 + 1
    h10 = x**3 - 2 * x**2 + x
    h01 = -2 * x**3 + 3 * x**2
    h11 = x**3 - x**2
    return h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1


def _exp1(gen: np.random.Generator) -> float:
    return -np.log1p(-gen.random())


def _step_one(opf, model, t0, h, ph, ps, integ, thresh, gen, log, max_jumps=10_000):
    """Advance one trajectory (arrays of shape ``(1, d)``) by ``h``, jumping as needed."""
    n_ch = len(model.channels)
    for _ in range(max_jumps):
        ph1, ps1, integ1, lam0 = _rk4(opf, t0, h, ph, ps, integ)
        if integ1[0] < thresh:
            return ph1, ps1, integ1, thresh
        lam1 = _rates(opf(t0 + h), ph1, ps1).sum(axis=1)
        target = thresh
        s = brentq(lambda s: _hermite(s, h, integ[0], integ1[0], lam0[0], lam1[0]) - target, 0.0, h,
                   xtol=1e-12 * max(1.0, h))
        phs, pss, integs, _ = _rk4(opf, t0, s, ph, ps, integ) if s > 0 else (ph, ps, integ, None)
        scale = np.exp(0.5 * integs[0])
        theta = _raw(scale * phs[0], scale * pss[0])
        tj = t0 + s
        ops = opf(tj)
        lam = _rates(ops, theta.phi[None], theta.psi[None])[0]
        if n_ch == 0 or lam.sum() <= 0:
            raise DarkStateError(f"doubled trajectory reached its threshold at t={tj} with zero total rate")
        i = _choose(lam, gen.random())
        c, d = ops[2][i], ops[3][i]
        jphi, jpsi = theta.phi @ c, theta.psi @ d
        jn = np.sqrt(DoubledState.norm2_of(jphi, jpsi))
        if jn <= DARK_TOL:
            raise DarkStateError(f"channel {i} annihilates the doubled state at t={tj}")
        k = np.sqrt(DoubledState.norm2_of(theta.phi, theta.psi)) / jn
        ph, ps = (k * jphi)[None], (k * jpsi)[None]
        integ = np.zeros(1)
        thresh = _exp1(gen)
        log.append((tj, i))
        t0, h = tj, h - s
        if h <= 0:
            return ph, ps, integ, thresh
    raise DarkStateError(f"more than {max_jumps} jumps within one step at t={t0}; reduce max_step")


def _initial_doubled(theta0, psi0, n, gens, d):
    if theta0 is not None:
        if not isinstance(theta0, DoubledState) or theta0.phi.size != d:
            raise DimensionError(f"theta0 must be a DoubledState of dimension {d}")
        return np.tile(theta0.phi, (n, 1)), np.tile(theta0.psi, (n, 1))
    base = _initial_states(psi0, n, gens, d)
    return base.copy(), base.copy()


def _simulate_batch(model: TimeLocalModel, psi0, t: np.ndarray, gens, max_step=MAX_STEP, theta0=None):
    n, d = len(gens), model.dim
    model.check_time(t[0])
    model.check_time(t[-1])
    ph, ps = _initial_doubled(theta0, psi0, n, gens, d)
    integ = np.zeros(n)
    thresh = np.array([_exp1(g) for g in gens])
    out_phi = np.empty((n, t.size, d), dtype=complex)
    out_psi = np.empty((n, t.size, d), dtype=complex)
    out_phi[:, 0], out_psi[:, 0] = ph, ps
    logs: list[list] = [[] for _ in range(n)]
    opf = _Operators(model)
    has_channels = bool(model.channels)
    for k in range(1, t.size):
        m = max(1, int(np.ceil((t[k] - t[k - 1]) / max_step - 1e-9)))
        h = (t[k] - t[k - 1]) / m
        for s in range(m):
            t0 = t[k - 1] + s * h
            if not has_channels:
                ph, ps = _linear_step(opf, t0, h, ph, ps)
                continue
            ph1, ps1, integ1, _ = _rk4(opf, t0, h, ph, ps, integ)
            for j in np.flatnonzero(integ1 >= thresh):
                r = _step_one(opf, model, t0, h, ph[j:j + 1], ps[j:j + 1], integ[j:j + 1], thresh[j], gens[j], logs[j])
                ph1[j], ps1[j], integ1[j], thresh[j] = r[0][0], r[1][0], r[2][0], r[3]
            ph, ps, integ = ph1, ps1, integ1
        scale = np.exp(0.5 * integ)[:, None]
        out_phi[:, k], out_psi[:, k] = scale * ph, scale * ps
    return out_phi, out_psi, logs


def _linear_step(opf, t, h, ph, ps):
    """RK4 for the channel-free case (no rate integral needed)."""

    def f(tt, x, y):
        a, b, _, _ = opf(tt)
        return x @ a, y @ b

    k1 = f(t, ph, ps)
    k2 = f(t + 0.5 * h, ph + 0.5 * h * k1[0], ps + 0.5 * h * k1[1])
    k3 = f(t + 0.5 * h, ph + 0.5 * h * k2[0], ps + 0.5 * h * k2[1])
    k4 = f(t + h, ph + h * k3[0], ps + h * k3[1])
    return (ph + (h / 6) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            ps + (h / 6) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))


def sample_doubled_trajectory(
    model: TimeLocalModel, theta0, t_grid, rng, max_step: float = MAX_STEP,
) -> DoubledTrajectoryRecord:
    """One trajectory; ``theta0`` is a :class:`DoubledState` or a state vector ``psi0``
    (started as ``(psi0, psi0)``)."""
    t = check_grid(t_grid, start=None)
    gen = _as_generator(rng)
    if isinstance(theta0, DoubledState):
        phi, psi, logs = _simulate_batch(model, None, t, [gen], max_step, theta0=theta0)
    else:
        phi, psi, logs = _simulate_batch(model, theta0, t, [gen], max_step)
    return DoubledTrajectoryRecord(t, phi[0], psi[0], logs[0])


def sample_doubled_trajectories(
    model: TimeLocalModel, psi0, t_grid, n_traj: int, master_seed: int,
    threads: int = 1, chunk_size: int = DEFAULT_CHUNK, max_step: float = MAX_STEP,
) -> list[DoubledTrajectoryRecord]:
    t = check_grid(t_grid, start=None)

    def work(lo, hi):
        phi, psi, logs = _simulate_batch(model, psi0, t, trajectory_generators(master_seed, lo, hi), max_step)
        return [DoubledTrajectoryRecord(t, a, b, log) for a, b, log in zip(phi, psi, logs)]

    return [rec for chunk in run_chunks(work, n_traj, threads, chunk_size) for rec in chunk]


def unravel_doubled_to_density(
    model: TimeLocalModel,
    psi0,
    t_grid,
    n_traj: int,
    master_seed: int,
    observables: Mapping[str, np.ndarray] | None = None,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
    max_step: float = MAX_STEP,
) -> list[EnsembleStatistics]:
    """Estimate ``rho(t) = E[|phi(t)><psi(t)|]``.

    ``psi0`` is a state vector, or a :class:`WeightedStateEnsemble` giving a
    pure-state decomposition of a mixed initial state (each trajectory draws
    its starting member from its own stream).
    """
    if n_traj < 2:
        raise ValidationError("at least two trajectories are needed for error estimates")
    if not isinstance(psi0, WeightedStateEnsemble):
        psi0 = qstate.state_vector(psi0, tol=1e-8)
    t = check_grid(t_grid, start=None)
    observables = dict(observables or {})
    for name, a in observables.items():
        if a.shape != (model.dim, model.dim):
            raise DimensionError(f"observable {name!r} has shape {a.shape}, model dimension is {model.dim}")

    def work(lo, hi):
        phi, psi, logs = _simulate_batch(model, psi0, t, trajectory_generators(master_seed, lo, hi), max_step)
        counts = np.array([np.searchsorted([s for s, _ in log], t, side="right") for log in logs])
        return accumulate(phi, psi, counts, observables)

    return statistics_from(run_chunks(work, n_traj, threads, chunk_size), observables)
