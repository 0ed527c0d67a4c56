"""Model files: TOML parsing, validation and serialization.

One model per file, identified by its top-level table:

``[lindblad]``       ``h`` plus repeated ``[[channel]]`` blocks (``gamma``, ``a``)
``[total_system]``   ``h_s``, ``h_b``, ``h_i``, ``alpha``, ``rho_b``
``[timelocal]``      ``a``, ``b`` plus repeated ``[[tl_channel]]`` blocks (``c``, ``d``)
``[probe]``          ``probe_ensemble``, ``r_values``, ``r_basis``, ``u``

An optional ``[initial]`` table holds ``psi`` (state) or ``rho`` (operator).

Operators are nested arrays of ``[re, im]`` pairs in row-major order, builder
strings (``"pauli_z"``, ``"sigma_minus"``, ``"identity(3)"``,
``"annihilation(4)"``, ...), or tables ``{op = ..., scale = ...}``,
``{sum = [...]}``, ``{kron = [...]}``, ``{dagger = ...}``.  See
``docs/model-format.md`` for the full grammar.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import tomli
import tomli_w

from . import qstate
from .errors import ConfigError, DimensionError, OqsimError, ValidationError
from .lindblad import LindbladModel
from .micro import BathMode, TotalSystemModel, gibbs_state, ground_state, multimode_model
from .qops import ProbeModel, probe_from_total_system
from .tcl import (
    ConstantOperator, ProfileOperator, ScalarProfile, SumOperator, TableOperator, TimeLocalModel, TimeOperator,
)

KINDS = ("lindblad", "total_system", "timelocal", "probe")

_CALL_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\(([^()]*)\))?\s*$")

_FIXED = {
    "pauli_x": qstate.pauli_x,
    "pauli_y": qstate.pauli_y,
    "pauli_z": qstate.pauli_z,
    "sigma_minus": qstate.sigma_minus,
    "sigma_plus": qstate.sigma_plus,
}
_SIZED = {
    "identity": qstate.identity,
    "zero": qstate.zero,
    "annihilation": qstate.annihilation,
    "creation": qstate.creation,
    "number": qstate.number,
}
_STATES = {
    "excited": qstate.excited,
    "ground": qstate.ground,
    "plus": qstate.plus,
    "minus": qstate.minus,
}


def _call(text: str, where: str) -> tuple[str, list[int]]:
    m = _CALL_RE.match(text)
    if not m:
        raise ConfigError(f"{where}: cannot parse builder {text!r}")
    args = [a.strip() for a in (m.group(2) or "").split(",") if a.strip()]
    try:
        return m.group(1), [int(a) for a in args]
    except ValueError:
        raise ConfigError(f"{where}: builder arguments must be integers in {text!r}") from None


def build_operator(text: str, where: str = "operator", dim: int | None = None) -> np.ndarray:
    """Evaluate a named builder; ``dim`` fills in an omitted dimension argument."""
    name, args = _call(text, where)
    if name in _FIXED and not args:
        return _FIXED[name]()
    if name in _SIZED:
        if not args and dim is not None:
            args = [dim]
        if len(args) == 1 and args[0] >= 1:
            return _SIZED[name](args[0])
    if name in ("projector", "proj"):
        if len(args) == 1 and dim is not None:
            args = [args[0], dim]
        if len(args) == 2:
            try:
                return qstate.basis_projector(*args)
            except DimensionError as exc:
                raise ConfigError(f"{where}: {exc}") from None
    known = sorted(_FIXED) + [f"{n}(d)" for n in _SIZED] + ["projector(i, d)"]
    raise ConfigError(f"{where}: unknown operator builder {text!r}; known: {', '.join(known)}")


def _complex(x, where: str) -> complex:
    if isinstance(x, bool):
        raise ConfigError(f"{where}: expected a number or [re, im] pair, got {x!r}")
    if isinstance(x, (int, float)):
        return complex(float(x), 0.0)
    if isinstance(x, list) and len(x) == 2 and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in x):
        return complex(float(x[0]), float(x[1]))
    raise ConfigError(f"{where}: expected a number or [re, im] pair, got {x!r}")


def parse_operator(value: Any, where: str = "operator", dim: int | None = None) -> np.ndarray:
    if isinstance(value, str):
        return build_operator(value, where, dim)
    if isinstance(value, list):
        if not value or not all(isinstance(row, list) for row in value):
            raise ConfigError(f"{where}: operator literal must be a non-empty list of rows")
        rows = [[_complex(x, f"{where}[{i}][{j}]") for j, x in enumerate(row)] for i, row in enumerate(value)]
        if len({len(r) for r in rows}) != 1 or len(rows) != len(rows[0]):
            raise ConfigError(f"{where}: operator literal must be square, got {len(rows)} rows of lengths "
                              f"{sorted({len(r) for r in rows})}")
        m = np.array(rows, dtype=complex)
        if not np.all(np.isfinite(m)):
            raise ConfigError(f"{where}: operator literal has non-finite entries")
        return m
    if isinstance(value, dict):
        if "sum" in value:
            terms = [parse_operator(v, f"{where}.sum[{i}]", dim) for i, v in enumerate(value["sum"])]
            if len({t.shape for t in terms}) != 1:
                raise ConfigError(f"{where}.sum: terms differ in dimension")
            return sum(terms)
        if "kron" in value:
            out = np.ones((1, 1), dtype=complex)
            for i, v in enumerate(value["kron"]):
                out = np.kron(out, parse_operator(v, f"{where}.kron[{i}]"))
            return out
        if "dagger" in value:
            return parse_operator(value["dagger"], f"{where}.dagger", dim).conj().T
        if "op" in value:
            return _complex(value.get("scale", 1.0), f"{where}.scale") * parse_operator(value["op"], f"{where}.op", dim)
    raise ConfigError(f"{where}: expected an operator literal, builder string or operator table, got {value!r}")


def parse_state(value: Any, where: str = "state", dim: int | None = None) -> np.ndarray:
    if isinstance(value, str):
        name, args = _call(value, where)
        if name in _STATES and not args:
            v = _STATES[name]()
        elif name in ("basis", "fock") and len(args) in (1, 2):
            if len(args) == 1:
                if dim is None:
                    raise ConfigError(f"{where}: {value!r} needs an explicit dimension here")
                args.append(dim)
            try:
                v = qstate.basis(*args)
            except DimensionError as exc:
                raise ConfigError(f"{where}: {exc}") from None
        else:
            raise ConfigError(f"{where}: unknown state builder {value!r}; known: "
                              f"{', '.join(sorted(_STATES))}, basis(i, d), fock(n, d)")
    elif isinstance(value, list) and value:
        v = np.array([_complex(x, f"{where}[{i}]") for i, x in enumerate(value)])
    else:
        raise ConfigError(f"{where}: expected a state literal or builder, got {value!r}")
    if dim is not None and v.size != dim:
        raise ConfigError(f"{where}: state has dimension {v.size}, expected {dim}")
    try:
        return qstate.state_vector(v)
    except OqsimError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def dump_operator(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(m, dtype=complex)]


def dump_state(v: np.ndarray) -> list:
    return [[float(z.real), float(z.imag)] for z in np.asarray(v, dtype=complex)]


# -- model sections ----------------------------------------------------------------

def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return table[key]


def _checked(fn, where: str):
    try:
        return fn()
    except OqsimError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _hermitian(value, where: str, dim: int | None = None) -> np.ndarray:
    m = parse_operator(value, where, dim)
    try:
        return qstate.hermitian(m, where)
    except OqsimError as exc:
        raise ConfigError(str(exc)) from None


def _parse_lindblad(doc: dict, src: str) -> LindbladModel:
    sec = doc["lindblad"]
    h = _hermitian(_require(sec, "h", f"{src}: [lindblad]"), f"{src}: [lindblad].h")
    d = h.shape[0]
    chans = []
    for i, ch in enumerate(doc.get("channel", [])):
        where = f"{src}: [[channel]] #{i}"
        gamma = _require(ch, "gamma", where)
        if isinstance(gamma, bool) or not isinstance(gamma, (int, float)) or not math.isfinite(gamma):
            raise ConfigError(f"{where}.gamma: expected a finite number, got {gamma!r}")
        if gamma < 0:
            raise ConfigError(f"{where}.gamma = {gamma}: violates the invariant gamma_i >= 0 (rates are nonnegative)")
        a = parse_operator(_require(ch, "a", where), f"{where}.a", d)
        chans.append((float(gamma), a))
    return _checked(lambda: LindbladModel(h, tuple(chans)), f"{src}: [lindblad]")


def _parse_total_system(doc: dict, src: str, base: Path | None) -> TotalSystemModel:
    sec = doc["total_system"]
    where = f"{src}: [total_system]"
    if "modes" in sec:
        modes = [BathMode(float(m["frequency"]), float(m["coupling"]), int(m.get("dim", 2))) for m in sec["modes"]]
        beta = sec.get("beta")
        return _checked(lambda: multimode_model(float(_require(sec, "omega_s", where)), modes,
                                                float(_require(sec, "alpha", where)), beta), where)
    h_s = _hermitian(_require(sec, "h_s", where), f"{where}.h_s")
    h_b = _hermitian(_require(sec, "h_b", where), f"{where}.h_b")
    h_i = _hermitian(_require(sec, "h_i", where), f"{where}.h_i", h_s.shape[0] * h_b.shape[0])
    alpha = _require(sec, "alpha", where)
    rho_spec = sec.get("rho_b", "ground")
    if isinstance(rho_spec, str):
        gibbs = re.match(r"^\s*gibbs\(\s*([^()]+?)\s*\)\s*$", rho_spec)
        if rho_spec.strip() == "ground":
            rho_b = ground_state(h_b)
        elif gibbs:
            try:
                beta = float(gibbs.group(1))
            except ValueError:
                raise ConfigError(f"{where}.rho_b: cannot parse {rho_spec!r}; expected gibbs(beta)") from None
            rho_b = _checked(lambda: gibbs_state(h_b, beta), f"{where}.rho_b")
        else:
            raise ConfigError(f"{where}.rho_b: expected 'ground', 'gibbs(beta)' or a matrix, got {rho_spec!r}")
    else:
        rho_b = parse_operator(rho_spec, f"{where}.rho_b")
    kwargs = {"max_dim": int(sec["max_dim"])} if "max_dim" in sec else {}
    return _checked(lambda: TotalSystemModel(h_s, h_b, h_i, float(alpha), rho_b, **kwargs), where)


def _parse_time_operator(value: Any, where: str, dim: int | None) -> TimeOperator:
    if isinstance(value, dict):
        keys = {"constant", "profile", "table", "sum"} & set(value)
        if len(keys) == 1:
            key = keys.pop()
            body = value[key]
            if key == "constant":
                return ConstantOperator(parse_operator(body, f"{where}.constant", dim))
            if key == "profile":
                m = parse_operator(_require(body, "matrix", f"{where}.profile"), f"{where}.profile.matrix", dim)
                prof = _checked(lambda: ScalarProfile.parse(_require(body, "scalar", f"{where}.profile")),
                                f"{where}.profile.scalar")
                return ProfileOperator(m, prof)
            if key == "table":
                times = _require(body, "times", f"{where}.table")
                mats = [parse_operator(m, f"{where}.table.matrices[{i}]", dim)
                        for i, m in enumerate(_require(body, "matrices", f"{where}.table"))]
                return _checked(lambda: TableOperator(np.asarray(times, float), np.array(mats)), f"{where}.table")
            terms = tuple(_parse_time_operator(v, f"{where}.sum[{i}]", dim) for i, v in enumerate(body))
            return _checked(lambda: SumOperator(terms), f"{where}.sum")
        if len(keys) > 1:
            raise ConfigError(f"{where}: give exactly one of constant, profile, table, sum")
    return ConstantOperator(parse_operator(value, where, dim))


def _parse_timelocal(doc: dict, src: str) -> TimeLocalModel:
    sec = doc["timelocal"]
    where = f"{src}: [timelocal]"
    a = _parse_time_operator(_require(sec, "a", where), f"{where}.a", None)
    b = _parse_time_operator(_require(sec, "b", where), f"{where}.b", a.dim)
    chans = []
    for i, ch in enumerate(doc.get("tl_channel", [])):
        w = f"{src}: [[tl_channel]] #{i}"
        chans.append((_parse_time_operator(_require(ch, "c", w), f"{w}.c", a.dim),
                      _parse_time_operator(_require(ch, "d", w), f"{w}.d", a.dim)))
    return _checked(lambda: TimeLocalModel(a, b, tuple(chans)), where)


def _parse_probe(doc: dict, src: str, base: Path | None) -> ProbeModel:
    sec = doc["probe"]
    where = f"{src}: [probe]"
    u_spec = _require(sec, "u", where)
    total = None
    if isinstance(u_spec, dict) and "total_system" in u_spec:
        path = Path(u_spec["total_system"])
        if base is not None and not path.is_absolute():
            path = base / path
        total = parse_model(path)
        if not isinstance(total, TotalSystemModel):
            raise ConfigError(f"{where}.u.total_system: {path} is not a [total_system] model")
        tau = float(_require(u_spec, "tau", f"{where}.u"))
        u = total.propagator(tau)
    else:
        u = parse_operator(u_spec, f"{where}.u")

    ens = sec.get("probe_ensemble", "from_total_system" if total is not None else None)
    if ens == "from_total_system":
        if total is None:
            raise ConfigError(f"{where}.probe_ensemble: 'from_total_system' needs u = {{total_system = ..., tau = ...}}")
        derived = _checked(lambda: probe_from_total_system(total, tau), where)
        weights, states = derived.probe_weights, derived.probe_states
    elif isinstance(ens, list) and ens:
        weights = [float(_require(m, "p", f"{where}.probe_ensemble[{i}]")) for i, m in enumerate(ens)]
        states = [parse_state(_require(m, "phi", f"{where}.probe_ensemble[{i}]"), f"{where}.probe_ensemble[{i}].phi")
                  for i, m in enumerate(ens)]
    else:
        raise ConfigError(f"{where}: missing or invalid probe_ensemble")
    d_b = len(states[0])
    basis_spec = sec.get("r_basis", "computational")
    if basis_spec == "computational":
        r_basis = [qstate.basis(m, d_b) for m in range(d_b)]
    else:
        r_basis = [parse_state(v, f"{where}.r_basis[{i}]", d_b) for i, v in enumerate(basis_spec)]
    r_values = sec.get("r_values", list(range(len(r_basis))))
    return _checked(lambda: ProbeModel(np.asarray(weights, float), tuple(states), np.asarray(r_values, float),
                                       tuple(r_basis), u), where)


@dataclass
class ModelFile:
    kind: str
    model: Any
    initial: np.ndarray | None = None
    """Initial state: a vector (``psi``) or matrix (``rho``), if the file declares one."""


def _load_toml(text: str, src: str) -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{src}: syntax error: {exc}") from None


def read_model_text(text: str, src: str = "<string>", base: Path | None = None) -> ModelFile:
    doc = _load_toml(text, src)
    kinds = [k for k in KINDS if k in doc]
    if len(kinds) != 1:
        raise ConfigError(f"{src}: expected exactly one model table out of {', '.join('[' + k + ']' for k in KINDS)}, "
                          f"found {kinds or 'none'}")
    kind = kinds[0]
    if kind == "lindblad":
        model = _parse_lindblad(doc, src)
    elif kind == "total_system":
        model = _parse_total_system(doc, src, base)
    elif kind == "timelocal":
        model = _parse_timelocal(doc, src)
    else:
        model = _parse_probe(doc, src, base)
    initial = None
    if "initial" in doc:
        init = doc["initial"]
        d = model_dimension(model)
        if "psi" in init:
            initial = parse_state(init["psi"], f"{src}: [initial].psi", d)
        elif "rho" in init:
            rho = parse_operator(init["rho"], f"{src}: [initial].rho", d)
            initial = _checked(lambda: qstate.density_matrix(rho), f"{src}: [initial].rho")
        else:
            raise ConfigError(f"{src}: [initial] needs 'psi' or 'rho'")
    return ModelFile(kind, model, initial)


def read_model_file(path) -> ModelFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read model file: {exc.strerror}") from None
    return read_model_text(text, str(path), path.parent)


def parse_model(path):
    """Load and validate the model in ``path``."""
    return read_model_file(path).model


def model_dimension(model) -> int:
    if isinstance(model, TotalSystemModel):
        return model.d_s
    if isinstance(model, ProbeModel):
        return model.d_s
    return model.dim


# -- serialization --------------------------------------------------------------------

def _dump_time_operator(op: TimeOperator) -> dict:
    if isinstance(op, ConstantOperator):
        return {"constant": dump_operator(op.matrix)}
    if isinstance(op, ProfileOperator):
        return {"profile": {"matrix": dump_operator(op.matrix), "scalar": str(op.profile)}}
    if isinstance(op, TableOperator):
        return {"table": {"times": [float(t) for t in op.times], "matrices": [dump_operator(m) for m in op.matrices]}}
    if isinstance(op, SumOperator):
        return {"sum": [_dump_time_operator(t) for t in op.terms]}
    raise TypeError(f"cannot serialize time operator of type {type(op).__name__}")


def model_to_dict(model, initial: np.ndarray | None = None) -> dict:
    if isinstance(model, LindbladModel):
        doc = {"lindblad": {"h": dump_operator(model.h)},
               "channel": [{"gamma": g, "a": dump_operator(a)} for g, a in model.channels]}
    elif isinstance(model, TotalSystemModel):
        doc = {"total_system": {"h_s": dump_operator(model.h_s), "h_b": dump_operator(model.h_b),
                                "h_i": dump_operator(model.h_i), "alpha": model.alpha,
                                "rho_b": dump_operator(model.rho_b), "max_dim": model.max_dim}}
    elif isinstance(model, TimeLocalModel):
        doc = {"timelocal": {"a": _dump_time_operator(model.a), "b": _dump_time_operator(model.b)},
               "tl_channel": [{"c": _dump_time_operator(c), "d": _dump_time_operator(d)} for c, d in model.channels]}
    elif isinstance(model, ProbeModel):
        doc = {"probe": {
            "probe_ensemble": [{"p": float(p), "phi": dump_state(s)}
                               for p, s in zip(model.probe_weights, model.probe_states)],
            "r_values": [float(r) for r in model.r_values],
            "r_basis": [dump_state(v) for v in model.r_basis],
            "u": dump_operator(model.u)}}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    for key in ("channel", "tl_channel"):
        if key in doc and not doc[key]:
            del doc[key]
    if initial is not None:
        initial = np.asarray(initial)
        doc["initial"] = {"psi": dump_state(initial)} if initial.ndim == 1 else {"rho": dump_operator(initial)}
    return doc


def dumps_model(model, initial: np.ndarray | None = None) -> str:
    return tomli_w.dumps(model_to_dict(model, initial))


def _same(x, y) -> bool:
    if isinstance(x, np.ndarray) or isinstance(y, np.ndarray):
        return np.array_equal(np.asarray(x), np.asarray(y))
    if isinstance(x, (tuple, list)):
        return len(x) == len(y) and all(_same(a, b) for a, b in zip(x, y))
    if hasattr(x, "__dataclass_fields__"):
        return type(x) is type(y) and all(_same(getattr(x, f), getattr(y, f)) for f in x.__dataclass_fields__)
    return x == y


def models_equal(a, b) -> bool:
    """Field-by-field exact equality, arrays compared bitwise."""
    return _same(a, b)


def dump_density_literal(rho: np.ndarray) -> str:
    """Operator literal ``rho = [...]`` as TOML text, one matrix row per line."""
    rows = []
    for row in dump_operator(rho):
        rows.append("    [" + ", ".join(f"[{re!r}, {im!r}]" for re, im in row) + "],")
    return "rho = [\n" + "\n".join(rows) + "\n]\n"


__all__ = [
    "ConfigError", "ModelFile", "ValidationError", "build_operator", "dumps_model", "model_dimension",
    "model_to_dict", "models_equal", "parse_model", "parse_operator", "parse_state", "read_model_file",
    "read_model_text",
]
