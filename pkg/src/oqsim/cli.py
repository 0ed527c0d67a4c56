"""Command-line front end.

    oqsim evolve-exact    --model M --t-max T --steps N [--observables ...]
    oqsim evolve-lindblad --model M --t-max T --steps N [--observables ...]
    oqsim evolve-tcl      --model M --t-max T --steps N [--observables ...] [--check-invertibility]
    oqsim mcwf   --model M [--psi0 V] --t-max T --steps N --trajectories K --seed S [--observables ...]
    oqsim hnm    --model M [--psi0 V] --t-max T --steps N --trajectories K --seed S [--observables ...]
    oqsim measure --probe P --rho R --mode selective|nonselective [--outcome m] [--model M]
    oqsim validate --model M [M ...]
    oqsim compare --reference A.csv --sample B.csv [--threshold 5]

Exit codes: 0 success, 1 usage, 2 parse/validation, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import tomli

from . import config, hnm, lindblad, mcwf, micro, qops, qstate, tcl
from .ensemble import WeightedStateEnsemble, covariance_density
from .errors import (
    ConfigError, DarkStateError, DimensionError, ImpossibleOutcomeError, IntegrationError, IntervalError,
    OqsimError, ValidationError,
)

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3

COMMANDS = ("evolve-exact", "evolve-lindblad", "evolve-tcl", "mcwf", "hnm", "measure", "validate", "compare")
STOCHASTIC = ("mcwf", "hnm")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    model_path: Path | None = None
    t_max: float = 1.0
    steps: int = 100
    trajectories: int = 1000
    seed: int = 0
    observables: list = field(default_factory=list)
    output_path: Path | None = None
    threads: int = 1
    psi0: str | None = None
    rho0: str | None = None
    max_step: float = hnm.MAX_STEP
    check_invertibility: bool = False
    probe_path: Path | None = None
    tau: float | None = None
    mode: str = "nonselective"
    outcome: int | None = None
    post_state_path: Path | None = None
    models: list = field(default_factory=list)
    reference: Path | None = None
    sample: Path | None = None
    threshold: float = 5.0

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.command.startswith("evolve") or self.command in STOCHASTIC:
            if not self.t_max > 0:
                raise UsageError(f"--t-max must be positive, got {self.t_max}")
            if self.steps < 1:
                raise UsageError(f"--steps must be at least 1, got {self.steps}")
        if self.command in STOCHASTIC and self.trajectories < 2:
            raise UsageError(f"--trajectories must be at least 2, got {self.trajectories}")
        if self.threads < 1:
            raise UsageError(f"--threads must be at least 1, got {self.threads}")

    @property
    def t_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.steps + 1)


# -- argument parsing ----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="oqsim", description="Open quantum system dynamics: exact, Lindblad, jumps, time-local.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, evolve=True):
        sp.add_argument("--model", required=True, type=Path)
        if evolve:
            sp.add_argument("--t-max", type=float, required=True)
            sp.add_argument("--steps", type=int, required=True)
            sp.add_argument("--observables", nargs="+", default=[])
            sp.add_argument("--psi0", help="initial state: builder (e.g. excited) or [[re, im], ...] literal")
            sp.add_argument("--rho0", help="initial density matrix: operator literal or builder")
        sp.add_argument("--output", type=Path)
        sp.add_argument("--threads", type=int, default=1)

    common(sub.add_parser("evolve-exact", help="exact system+environment evolution, reduced to the system"))
    common(sub.add_parser("evolve-lindblad", help="integrate a Lindblad master equation"))
    sp = sub.add_parser("evolve-tcl", help="integrate a time-local master equation")
    common(sp)
    sp.add_argument("--check-invertibility", action="store_true")
    for name in STOCHASTIC:
        sp = sub.add_parser(name, help="quantum-jump unraveling" if name == "mcwf" else "doubled-space unraveling")
        common(sp)
        sp.add_argument("--trajectories", type=int, required=True)
        sp.add_argument("--seed", type=int, required=True)
        if name == "hnm":
            sp.add_argument("--max-step", type=float, default=hnm.MAX_STEP)

    sp = sub.add_parser("measure", help="indirect measurement through a probe")
    sp.add_argument("--probe", required=True, type=Path)
    sp.add_argument("--model", type=Path, help="total-system model supplying U = exp(-i H tau) (needs --tau)")
    sp.add_argument("--tau", type=float)
    sp.add_argument("--rho", required=True)
    sp.add_argument("--mode", choices=("selective", "nonselective"), default="nonselective")
    sp.add_argument("--outcome", type=int)
    sp.add_argument("--post-state", type=Path)
    sp.add_argument("--output", type=Path)
    sp.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("validate", help="parse and validate model files")
    sp.add_argument("--model", required=True, type=Path, nargs="+")
    sp.add_argument("--output", type=Path)
    sp.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("compare", help="compare a deterministic CSV against a stochastic one")
    sp.add_argument("--reference", required=True, type=Path)
    sp.add_argument("--sample", required=True, type=Path)
    sp.add_argument("--threshold", type=float, default=5.0)
    sp.add_argument("--output", type=Path)
    sp.add_argument("--threads", type=int, default=1)
    return p


def config_from_args(argv: Sequence[str]) -> RunConfig:
    ns = build_parser().parse_args(list(argv))
    kw = {"command": ns.command, "output_path": ns.output, "threads": ns.threads}
    if ns.command == "validate":
        kw["models"] = ns.model
    elif ns.command == "compare":
        kw.update(reference=ns.reference, sample=ns.sample, threshold=ns.threshold)
    elif ns.command == "measure":
        kw.update(probe_path=ns.probe, model_path=ns.model, rho0=ns.rho, mode=ns.mode, outcome=ns.outcome,
                  post_state_path=ns.post_state, tau=ns.tau)
    else:
        kw.update(model_path=ns.model, t_max=ns.t_max, steps=ns.steps, observables=ns.observables,
                  psi0=ns.psi0, rho0=ns.rho0)
        if ns.command == "evolve-tcl":
            kw["check_invertibility"] = ns.check_invertibility
        if ns.command in STOCHASTIC:
            kw.update(trajectories=ns.trajectories, seed=ns.seed)
        if ns.command == "hnm":
            kw["max_step"] = ns.max_step
    return RunConfig(**kw)


# -- helpers ------------------------------------------------------------------------

def _fmt(x: float) -> str:
    """Shortest round-trip representation."""
    return repr(float(x))


def _value(text: str):
    """Interpret a command-line literal as TOML (lists) or fall back to a builder string."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def _initial(cfg: RunConfig, file: config.ModelFile, dim: int, want_pure: bool):
    if cfg.psi0 is not None:
        return config.parse_state(_value(cfg.psi0), "--psi0", dim)
    if cfg.rho0 is not None:
        rho = config.parse_operator(_value(cfg.rho0), "--rho0", dim)
        try:
            rho = qstate.density_matrix(rho)
        except OqsimError as exc:
            raise ConfigError(f"--rho0: {exc}") from None
    elif file.initial is not None:
        if file.initial.ndim == 1 or not want_pure:
            return file.initial
        rho = file.initial
    else:
        raise ConfigError(f"{cfg.model_path}: no initial state; add an [initial] table or pass --psi0/--rho0")
    if not want_pure:
        return rho
    w, v = np.linalg.eigh(rho)
    keep = w > 1e-12
    return WeightedStateEnsemble.from_weights(w[keep] / w[keep].sum(), v[:, keep].T)


def _density(initial) -> np.ndarray:
    if isinstance(initial, WeightedStateEnsemble):
        return covariance_density(initial)
    initial = np.asarray(initial)
    return qstate.projector(initial) if initial.ndim == 1 else initial


def _observables(names: Sequence[str], dim: int) -> dict[str, np.ndarray]:
    names = list(names) or [f"proj({i})" for i in range(dim)]
    out = {}
    for name in names:
        op = config.parse_operator(_value(name), f"observable {name!r}", dim)
        if op.shape != (dim, dim):
            raise ConfigError(f"observable {name!r} has dimension {op.shape[0]}, model dimension is {dim}")
        out[name] = op
    return out


def _write_csv(cfg: RunConfig, header: Sequence[str], rows: Sequence[Sequence], out) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) if not isinstance(x, str) else x for x in row])
    text = buf.getvalue()
    if cfg.output_path is not None:
        cfg.output_path.write_text(text)
    else:
        out.write(text)


def _load(cfg: RunConfig, kinds: Sequence[str]) -> config.ModelFile:
    file = config.read_model_file(cfg.model_path)
    if file.kind not in kinds:
        raise ConfigError(f"{cfg.model_path}: command {cfg.command} needs a "
                          f"{' or '.join('[' + k + ']' for k in kinds)} model, got [{file.kind}]")
    return file


def _deterministic_rows(t, rhos, obs):
    rows = []
    for tk, rho in zip(t, rhos):
        rows.append([tk] + [float(np.einsum("ij,ji->", a, rho).real) for a in obs.values()])
    return rows


# -- commands -------------------------------------------------------------------------

def _run_evolve(cfg: RunConfig, out, err) -> int:
    t = cfg.t_grid
    if cfg.command == "evolve-exact":
        file = _load(cfg, ["total_system"])
        model = file.model
        rho0 = _density(_initial(cfg, file, model.d_s, want_pure=False))
        rhos = micro.evolve_reduced_grid(model, rho0, t)
        dim = model.d_s
    elif cfg.command == "evolve-lindblad":
        file = _load(cfg, ["lindblad"])
        model = file.model
        rho0 = _density(_initial(cfg, file, model.dim, want_pure=False))
        rhos = lindblad.integrate_master(model, rho0, t)
        dim = model.dim
    else:
        file = _load(cfg, ["timelocal", "lindblad"])
        model = file.model if file.kind == "timelocal" else tcl.embed_lindblad(file.model)
        rho0 = _density(_initial(cfg, file, model.dim, want_pure=False))
        rhos = tcl.integrate_timelocal(model, rho0, t)
        dim = model.dim
        if cfg.check_invertibility:
            report = tcl.invertibility_check(model, t)
            if report.lost:
                err.write(f"warning: invertibility loss: flow map condition number exceeds "
                          f"{report.threshold:.0e} from t={report.first_loss_time}\n")
            else:
                err.write(f"flow map invertible on the grid (max condition number "
                          f"{np.max(report.condition_numbers):.3e})\n")
    obs = _observables(cfg.observables, dim)
    _write_csv(cfg, ["t", *obs], _deterministic_rows(t, rhos, obs), out)
    return EXIT_OK


def _run_stochastic(cfg: RunConfig, out, err) -> int:
    t = cfg.t_grid
    if cfg.command == "mcwf":
        file = _load(cfg, ["lindblad"])
        model = file.model
        obs = _observables(cfg.observables, model.dim)
        psi0 = _initial(cfg, file, model.dim, want_pure=True)
        stats = mcwf.unravel_to_density(model, psi0, t, cfg.trajectories, cfg.seed, obs, threads=cfg.threads)
        header = ["t"] + [c for name in obs for c in (f"{name}_mean", f"{name}_stderr")] + ["mean_jump_count"]
        rows = [[tk] + [v for name in obs for v in (s.observables[name][0].real, s.observables[name][1])]
                + [s.mean_jump_count] for tk, s in zip(t, stats)]
    else:
        file = _load(cfg, ["timelocal", "lindblad"])
        model = file.model if file.kind == "timelocal" else tcl.embed_lindblad(file.model)
        obs = _observables(cfg.observables, model.dim)
        psi0 = _initial(cfg, file, model.dim, want_pure=True)
        stats = hnm.unravel_doubled_to_density(model, psi0, t, cfg.trajectories, cfg.seed, obs,
                                               threads=cfg.threads, max_step=cfg.max_step)
        header = ["t"] + [c for name in obs for c in (f"re({name})", f"im({name})", f"{name}_stderr")] \
            + ["mean_jump_count"]
        rows = [[tk] + [v for name in obs for v in (s.observables[name][0].real, s.observables[name][0].imag,
                                                    s.observables[name][1])]
                + [s.mean_jump_count] for tk, s in zip(t, stats)]
    _write_csv(cfg, header, rows, out)
    return EXIT_OK


def _run_measure(cfg: RunConfig, out, err) -> int:
    probe = config.parse_model(cfg.probe_path)
    if not isinstance(probe, qops.ProbeModel):
        raise ConfigError(f"{cfg.probe_path}: expected a [probe] model")
    if cfg.model_path is not None:
        total = config.parse_model(cfg.model_path)
        if not isinstance(total, micro.TotalSystemModel) or cfg.tau is None:
            raise ConfigError("--model must be a [total_system] model and requires --tau")
        probe = qops.ProbeModel(probe.probe_weights, probe.probe_states, probe.r_values, probe.r_basis,
                                total.propagator(cfg.tau))
    op = qops.kraus_from_probe(probe)
    value = _value(cfg.rho0)
    path = Path(cfg.rho0)
    if isinstance(value, str) and path.suffix == ".toml" and path.exists():
        doc = tomli.loads(path.read_text())
        value = doc.get("rho", doc.get("psi"))
        if value is None:
            raise ConfigError(f"{path}: expected a top-level 'rho' or 'psi' entry")
    try:
        rho = config.parse_operator(value, "--rho", op.dim)
    except ConfigError:
        rho = qstate.projector(config.parse_state(value, "--rho", op.dim))
    try:
        rho = qstate.density_matrix(rho)
    except OqsimError as exc:
        raise ConfigError(f"--rho: {exc}") from None

    table = qops.outcome_table(op, rho)
    if cfg.mode == "selective":
        if cfg.outcome is None:
            raise UsageError("--mode selective requires --outcome")
        try:
            post = qops.selective_post_state(op, cfg.outcome, rho)
        except IndexError as exc:
            raise UsageError(str(exc)) from None
    else:
        post = qops.nonselective_post_state(op, rho)
    buf_rows = [[m, r, p] for m, r, p in table]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m", "r_m", "P(m)"])
    for m, r, p in buf_rows:
        w.writerow([str(m), _fmt(r), _fmt(p)])
    literal = config.dump_density_literal(post)
    post_path = cfg.post_state_path
    if post_path is None and cfg.output_path is not None:
        post_path = cfg.output_path.with_suffix(".post.toml")
    if cfg.output_path is not None:
        cfg.output_path.write_text(buf.getvalue())
    else:
        out.write(buf.getvalue())
    if post_path is not None:
        post_path.write_text(literal)
    else:
        out.write("\n" + literal)
    return EXIT_OK


def _run_validate(cfg: RunConfig, out, err) -> int:
    for path in cfg.models:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            file = config.read_model_file(path)
        dim = config.model_dimension(file.model)
        out.write(f"ok: {path} [{file.kind}] dimension {dim}\n")
        for wmsg in caught:
            err.write(f"warning: {path}: {wmsg.message}\n")
    return EXIT_OK


def _read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    try:
        rows = list(csv.reader(path.read_text().splitlines()))
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    if len(rows) < 2:
        raise ConfigError(f"{path}: expected a header and at least one row")
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]])


def _run_compare(cfg: RunConfig, out, err) -> int:
    """Report ``max |sample - reference| / stderr`` per observable."""
    ref_head, ref = _read_csv(cfg.reference)
    smp_head, smp = _read_csv(cfg.sample)
    if ref.shape[0] != smp.shape[0] or not np.array_equal(ref[:, 0], smp[:, 0]):
        raise ConfigError("reference and sample CSVs are on different time grids")
    lines, worst = [], 0.0
    for j, name in enumerate(ref_head[1:], start=1):
        if f"{name}_mean" in smp_head:
            mean = smp[:, smp_head.index(f"{name}_mean")]
        elif f"re({name})" in smp_head:
            mean = smp[:, smp_head.index(f"re({name})")]
        else:
            continue
        se = smp[:, smp_head.index(f"{name}_stderr")]
        delta = np.abs(mean - ref[:, j])
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, delta / se, np.where(delta <= 1e-12, 0.0, np.inf))
        lines.append([name, float(np.max(z))])
        worst = max(worst, float(np.max(z)))
    if not lines:
        raise ConfigError("no common observables between reference and sample")
    _write_csv(cfg, ["observable", "max_abs_delta_over_stderr"], lines, out)
    if worst > cfg.threshold:
        err.write(f"max |delta|/stderr = {worst:.3g} exceeds threshold {cfg.threshold}\n")
        return EXIT_NUMERIC
    return EXIT_OK


def run(cfg: RunConfig, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        if cfg.command == "validate":
            return _run_validate(cfg, out, err)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", tcl.TracePreservationWarning)
            try:
                if cfg.command.startswith("evolve"):
                    return _run_evolve(cfg, out, err)
                if cfg.command in STOCHASTIC:
                    return _run_stochastic(cfg, out, err)
                return {"measure": _run_measure, "compare": _run_compare}[cfg.command](cfg, out, err)
            finally:
                for wmsg in caught:
                    err.write(f"warning: {wmsg.message}\n")
    except UsageError as exc:
        err.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except (ConfigError, ValidationError, DimensionError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_INVALID
    except (IntegrationError, DarkStateError, ImpossibleOutcomeError, IntervalError) as exc:
        err.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC
    except OqsimError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_NUMERIC


def main(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    err_stream = sys.stderr if err is None else err
    try:
        cfg = config_from_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        err_stream.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    return run(cfg, out, err)


if __name__ == "__main__":
    sys.exit(main())
