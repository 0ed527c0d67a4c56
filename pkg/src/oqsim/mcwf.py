"""Quantum-jump (Monte Carlo wave function) unraveling of the Lindblad equation.

Between jumps the conditioned state follows the norm-preserving nonlinear
Schroedinger equation; channel ``i`` fires at rate ``gamma_i ||A_i psi||^2`` and
maps ``psi -> A_i psi / ||A_i psi||``.  The sampler uses the equivalent
waiting-time construction: the unnormalized state is propagated with
``exp(-i H_eff s)`` and a jump happens when its squared norm drops to a uniform
random threshold.  Because that norm is monotone, the crossing found on the
sample grid is exact and is then located by bracketed root finding.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from . import qstate
from ._ode import check_grid
from .ensemble import EnsembleStatistics, MomentAccumulator, WeightedStateEnsemble, merge_all
from .errors import DarkStateError, DimensionError, ValidationError
from .lindblad import LindbladModel
from .rng import DEFAULT_CHUNK, RngStream, run_chunks, trajectory_generators

DARK_TOL = 1e-12
EVENT_RTOL = 1e-9


def _check_psi(model: LindbladModel, psi, tol: float = 1e-8) -> np.ndarray:
    psi = qstate.state_vector(psi, tol=tol)
    if psi.size != model.dim:
        raise DimensionError(f"state has dimension {psi.size}, model has {model.dim}")
    return psi


def nonlinear_drift(model: LindbladModel, psi) -> np.ndarray:
    """``-i H psi - (1/2) sum_i gamma_i (A_i^dag A_i - ||A_i psi||^2) psi``."""
    psi = _check_psi(model, psi)
    out = -1j * (model.h @ psi)
    for gamma, a in model.channels:
        api = a @ psi
        out -= 0.5 * gamma * (a.conj().T @ api - np.vdot(api, api).real * psi)
    return out


def jump_rates(model: LindbladModel, psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if psi.size != model.dim:
        raise DimensionError(f"state has dimension {psi.size}, model has {model.dim}")
    return np.array([gamma * np.vdot(a @ psi, a @ psi).real for gamma, a in model.channels])


def apply_jump(model: LindbladModel, i: int, psi) -> np.ndarray:
    a = model.channels[i][1]
    out = a @ np.asarray(psi, dtype=complex)
    norm = np.linalg.norm(out)
    if norm <= DARK_TOL:
        raise DarkStateError(f"channel {i} annihilates the state (||A psi|| = {norm:.3e})")
    return out / norm


@dataclass
class TrajectoryRecord:
    sample_times: np.ndarray
    states: np.ndarray
    jump_log: list = field(default_factory=list)

    @property
    def jump_times(self) -> np.ndarray:
        return np.array([t for t, _ in self.jump_log])

    def jump_counts(self) -> np.ndarray:
        """Cumulative number of jumps at each sample time."""
        return np.searchsorted(self.jump_times, self.sample_times, side="right")


class _NonHermitianPropagator:
    """``exp(-i H_eff s)`` for arbitrary ``s``, by eigendecomposition when safe."""

    def __init__(self, heff: np.ndarray):
        gen = -1j * heff
        self.gen = gen
        self.cache: dict[float, np.ndarray] = {}
        w, v = np.linalg.eig(gen)
        self.eig = None
        if np.linalg.cond(v) < 1e8:
            vinv = np.linalg.inv(v)
            if np.max(np.abs((v * w) @ vinv - gen)) <= 1e-12 * (1 + np.max(np.abs(gen))):
                self.eig = (w, v, vinv)

    def matrix(self, s: float) -> np.ndarray:
        p = self.cache.get(s)
        if p is None:
            p = qstate.matrix_exponential(self.gen, s)
            self.cache[s] = p
        return p

    def along(self, psi: np.ndarray):
        """Return ``s -> exp(-i H_eff s) psi``."""
        if self.eig is not None:
            w, v, vinv = self.eig
            c = vinv @ psi
            return lambda s: v @ (np.exp(w * s) * c)
        return lambda s: qstate.matrix_exponential(self.gen, s) @ psi


def _choose(rates: np.ndarray, u: float) -> int:
    cum = np.cumsum(rates)
    return min(int(np.searchsorted(cum, u * cum[-1], side="right")), len(rates) - 1)


def _initial_states(psi0, n: int, gens: Sequence[np.random.Generator], dim: int) -> np.ndarray:
    if isinstance(psi0, WeightedStateEnsemble):
        if psi0.dim != dim:
            raise DimensionError(f"initial ensemble has dimension {psi0.dim}, model has {dim}")
        return np.array([psi0.sample(g) for g in gens])
    psi0 = qstate.state_vector(psi0, tol=1e-8)
    if psi0.size != dim:
        raise DimensionError(f"initial state has dimension {psi0.size}, model has {dim}")
    return np.tile(psi0, (n, 1))


def _simulate_batch(model: LindbladModel, psi0, t: np.ndarray, gens: Sequence[np.random.Generator]):
    """Waiting-time sampler for a batch of trajectories.

    Returns normalized states ``(n, len(t), d)`` and per-trajectory jump logs.
    """
    n, d = len(gens), model.dim
    psi = _initial_states(psi0, n, gens, d)
    eta = np.array([g.random() for g in gens])
    states = np.empty((n, t.size, d), dtype=complex)
    states[:, 0] = psi
    logs: list[list] = [[] for _ in range(n)]
    if not model.channels or not np.any(model.rates > 0):
        prop = _NonHermitianPropagator(model.h.astype(complex))
        for k in range(1, t.size):
            psi = psi @ prop.matrix(t[k] - t[k - 1]).T
            states[:, k] = psi / np.linalg.norm(psi, axis=1, keepdims=True)
        return states, logs

    prop = _NonHermitianPropagator(model.effective_hamiltonian)
    xtol = EVENT_RTOL * max(t[-1], 1.0)
    rates_of = lambda v: np.array([g * np.vdot(a @ v, a @ v).real for g, a in model.channels])

    for k in range(1, t.size):
        dt = t[k] - t[k - 1]
        new = psi @ prop.matrix(dt).T
        crossed = np.flatnonzero(np.einsum("ij,ij->i", new.conj(), new).real <= eta)
        for j in crossed:
            cur, left, t0, gen = psi[j], dt, t[k - 1], gens[j]
            while True:
                end = prop.matrix(dt) @ cur if left == dt else prop.along(cur)(left)
                if np.vdot(end, end).real > eta[j]:
                    new[j] = end
                    break
                path = prop.along(cur)
                s = brentq(lambda s: np.vdot(path(s), path(s)).real - eta[j], 0.0, left, xtol=xtol)
                pre = path(s)
                pre /= np.linalg.norm(pre)
                lam = rates_of(pre)
                if lam.sum() <= 0:
                    raise DarkStateError(f"trajectory hit its threshold at t={t0 + s} with zero total rate")
                i = _choose(lam, gen.random())
                cur = apply_jump(model, i, pre)
                t0, left = t0 + s, left - s
                logs[j].append((t0, i))
                eta[j] = gen.random()
                if left <= 0:
                    new[j] = cur
                    break
        # psi stays unnormalized until the next jump: its norm is compared against eta
        psi = new
        states[:, k] = psi / np.linalg.norm(psi, axis=1, keepdims=True)
    return states, logs


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def sample_trajectory(model: LindbladModel, psi0, t_grid, rng) -> TrajectoryRecord:
    """One conditioned trajectory sampled on ``t_grid``."""
    t = check_grid(t_grid)
    states, logs = _simulate_batch(model, psi0, t, [_as_generator(rng)])
    return TrajectoryRecord(t, states[0], logs[0])


def sample_trajectories(
    model: LindbladModel, psi0, t_grid, n_traj: int, master_seed: int,
    threads: int = 1, chunk_size: int = DEFAULT_CHUNK,
) -> list[TrajectoryRecord]:
    t = check_grid(t_grid)

    def work(lo, hi):
        states, logs = _simulate_batch(model, psi0, t, trajectory_generators(master_seed, lo, hi))
        return [TrajectoryRecord(t, s, log) for s, log in zip(states, logs)]

    return [rec for chunk in run_chunks(work, n_traj, threads, chunk_size) for rec in chunk]


def sample_trajectories_bernoulli(
    model: LindbladModel, psi0, t_grid, n_traj: int, master_seed: int, dt: float,
) -> list[TrajectoryRecord]:
    """Reference sampler: fixed steps with ``dN_i ~ Bernoulli(lambda_i dt)``.

    Biased at ``O(dt)``; kept as an independent check of the waiting-time sampler.
    """
    t = check_grid(t_grid)
    gens = trajectory_generators(master_seed, 0, n_traj)
    psi = _initial_states(psi0, n_traj, gens, model.dim)
    substeps = [max(1, int(np.ceil((t[k] - t[k - 1]) / dt))) for k in range(1, t.size)]
    n_steps = sum(substeps)
    u_jump = np.stack([g.random(n_steps) for g in gens])
    u_chan = np.stack([g.random(n_steps) for g in gens])
    ops = model.jump_operators
    gam = model.rates
    heff = model.effective_hamiltonian

    def drift(v):
        out = -1j * v @ heff.T
        norms = np.stack([np.einsum("ij,ij->i", (v @ a.T).conj(), v @ a.T).real for a in ops], axis=1) if ops else 0
        return out + 0.5 * (norms @ gam if ops else 0)[:, None] * v

    states = np.empty((n_traj, t.size, model.dim), dtype=complex)
    states[:, 0] = psi
    logs: list[list] = [[] for _ in range(n_traj)]
    step = 0
    for k in range(1, t.size):
        h = (t[k] - t[k - 1]) / substeps[k - 1]
        for s in range(substeps[k - 1]):
            now = t[k - 1] + s * h
            lam = (np.stack([np.einsum("ij,ij->i", (psi @ a.T).conj(), psi @ a.T).real for a in ops], axis=1)
                   * gam) if ops else np.zeros((n_traj, 0))
            total = lam.sum(axis=1) if ops else np.zeros(n_traj)
            jumps = u_jump[:, step] < total * h
            k1 = drift(psi)
            k2 = drift(psi + 0.5 * h * k1)
            k3 = drift(psi + 0.5 * h * k2)
            k4 = drift(psi + h * k3)
            nxt = psi + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            for j in np.flatnonzero(jumps):
                i = _choose(lam[j], u_chan[j, step])
                nxt[j] = apply_jump(model, i, psi[j])
                logs[j].append((now + h, i))
            psi = nxt / np.linalg.norm(nxt, axis=1, keepdims=True)
            step += 1
        states[:, k] = psi
    return [TrajectoryRecord(t, s, log) for s, log in zip(states, logs)]


def _observable_values(states: np.ndarray, observables: Mapping[str, np.ndarray], bra: np.ndarray | None = None):
    bra = states if bra is None else bra
    return np.stack([np.einsum("ntj,jk,ntk->nt", bra.conj(), a, states) for a in observables.values()], axis=1) \
        if observables else np.zeros((states.shape[0], 0, states.shape[1]), dtype=complex)


def accumulate(kets: np.ndarray, bras: np.ndarray, counts: np.ndarray, observables: Mapping[str, np.ndarray]):
    """Reduce a batch of samples to moment accumulators (dyad, observables, jump counts)."""
    n, n_t, d = kets.shape
    dyads = np.einsum("nti,ntj->ntij", kets, bras.conj())
    obs = _observable_values(kets, observables, bras)
    acc_rho = MomentAccumulator((n_t, d, d))
    acc_obs = MomentAccumulator(obs.shape[1:])
    acc_cnt = MomentAccumulator((n_t,), dtype=float)
    for j in range(n):
        acc_rho.add(dyads[j])
        acc_obs.add(obs[j])
        acc_cnt.add(counts[j].astype(float))
    return acc_rho, acc_obs, acc_cnt


def statistics_from(parts, observables: Mapping[str, np.ndarray]) -> list[EnsembleStatistics]:
    acc_rho = merge_all([p[0] for p in parts])
    acc_obs = merge_all([p[1] for p in parts])
    acc_cnt = merge_all([p[2] for p in parts])
    se_rho, se_obs = acc_rho.stderr(), acc_obs.stderr()
    names = list(observables)
    out = []
    for k in range(acc_rho.mean.shape[0]):
        obs = {name: (acc_obs.mean[m, k], float(se_obs[m, k])) for m, name in enumerate(names)}
        out.append(EnsembleStatistics(acc_rho.mean[k], se_rho[k], acc_rho.n, obs, float(acc_cnt.mean[k])))
    return out


def unravel_to_density(
    model: LindbladModel,
    psi0,
    t_grid,
    n_traj: int,
    master_seed: int,
    observables: Mapping[str, np.ndarray] | None = None,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
) -> list[EnsembleStatistics]:
    """Estimate ``rho(t) = E[|psi(t)><psi(t)|]`` from ``n_traj`` trajectories.

    Trajectory ``j`` always uses stream ``(master_seed, j)`` and partial sums are
    merged in chunk order, so the result is independent of ``threads``.
    """
    if n_traj < 2:
        raise ValidationError("at least two trajectories are needed for error estimates")
    t = check_grid(t_grid)
    observables = dict(observables or {})
    for name, a in observables.items():
        if a.shape != (model.dim, model.dim):
            raise DimensionError(f"observable {name!r} has shape {a.shape}, model dimension is {model.dim}")

    def work(lo, hi):
        states, logs = _simulate_batch(model, psi0, t, trajectory_generators(master_seed, lo, hi))
        counts = np.array([np.searchsorted([s for s, _ in log], t, side="right") for log in logs])
        return accumulate(states, states, counts, observables)

    return statistics_from(run_chunks(work, n_traj, threads, chunk_size), observables)
