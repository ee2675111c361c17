"""Batch command-line front end.

Every command reads a JSON run configuration, validates it against a JSON
schema, dispatches to the library and writes CSV/JSON artifacts into the
``--out`` directory. Exit codes: 0 success, 2 invalid input, 3 numerical
failure (``error.json`` is written next to the other artifacts).
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .analysis import (affine_accessibility, gas_check, invariance_check, is_operator_controllable,
                       spectral_structure, SubspaceSplit, sufficient_controllability)
from .artifacts import state_columns, state_values, write_csv, write_json, write_trajectory
from .core import (SIGMA_MINUS, SIGMA_PLUS, SIGMA_X, SIGMA_Y, SIGMA_Z, NumericalError,
                   bloch_from_density, coherent_state, density_from_bloch, density_matrix,
                   fock_operators, gell_mann_basis, ket, matrix_from_json, pauli_basis, projector,
                   purity, tensor, trace_distance)
from .dynamics import (ControlProblem, LindbladModel, bloch_affine, decay_model, mme_propagate,
                       mme_propagate_controlled, unital_qubit_model)
from .feedback import (DY_CONVENTION, ConstantLaw, PatchedLawConfig, SMEModel, SynthesisError,
                       affine_law, fme_closed_loop, lyapunov_law, sme_ensemble, spin_operators,
                       synthesize_feedback)
from .networks import format_network, load_components, parse_network, reduce_network, slh_to_mme
from .synthesis import (DDProtocol, GrapeProblem, LyapunovDesign, dd_average_hamiltonian,
                        dd_simulate, grape_optimize, lyapunov_rank_condition, lyapunov_simulate)

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
COMMANDS = ("simulate", "analyze", "grape", "lyapunov", "dd", "fme", "sme", "slh")
LAWS = ("none", "affine", "patched", "lyapunov")


class ConfigError(ValueError):
    """Invalid run configuration; ``errors`` lists individual problems."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        super().__init__("; ".join(errors))
        self.errors = list(errors)


# --------------------------------------------------------------------------
# schemas
# --------------------------------------------------------------------------

NAMED_OPS = ("sigma_x", "sigma_y", "sigma_z", "sigma_plus", "sigma_minus", "identity", "zero",
             "spin_y", "spin_z", "number", "annihilation", "projector", "gell_mann")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT_POS = {"type": "integer", "minimum": 1}
_COMPLEX = {"anyOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}]}
_REAL_GRID = {"type": "array", "items": {"type": "array", "items": _NUM}}

DEFS = {
    "matrix": {
        "description": "Operator: shared {dim, re, im} object, nested real list, named "
                       "operator, sum or Kronecker product.",
        "anyOf": [
            {"type": "string", "enum": list(NAMED_OPS)},
            _REAL_GRID,
            {"type": "object", "required": ["re"],
             "properties": {"dim": {"type": "integer", "minimum": 0}, "re": _REAL_GRID,
                            "im": _REAL_GRID},
             "additionalProperties": False},
            {"type": "object", "required": ["op"],
             "properties": {"op": {"enum": list(NAMED_OPS)}, "scale": _COMPLEX,
                            "dim": _INT_POS, "index": {"type": "integer", "minimum": 0}},
             "additionalProperties": False},
            {"type": "object", "required": ["sum"],
             "properties": {"sum": {"type": "array", "items": {"$ref": "#/$defs/matrix"},
                                    "minItems": 1},
                            "scale": _COMPLEX},
             "additionalProperties": False},
            {"type": "object", "required": ["kron"],
             "properties": {"kron": {"type": "array", "items": {"$ref": "#/$defs/matrix"},
                                     "minItems": 1},
                            "scale": _COMPLEX},
             "additionalProperties": False},
        ],
    },
    "state": {
        "description": "Density operator: ket amplitudes, basis index, Bloch vector, "
                       "maximally mixed state or an explicit matrix.",
        "anyOf": [
            {"type": "object", "required": ["ket"],
             "properties": {"ket": {"type": "array", "items": _COMPLEX, "minItems": 1}},
             "additionalProperties": False},
            {"type": "object", "required": ["basis", "dim"],
             "properties": {"basis": {"type": "integer", "minimum": 0}, "dim": _INT_POS},
             "additionalProperties": False},
            {"type": "object", "required": ["bloch"],
             "properties": {"bloch": {"type": "array", "items": _NUM, "minItems": 3,
                                      "maxItems": 3}},
             "additionalProperties": False},
            {"type": "object", "required": ["maximally_mixed"],
             "properties": {"maximally_mixed": _INT_POS}, "additionalProperties": False},
            {"type": "object", "required": ["coherent", "ncut"],
             "properties": {"coherent": _COMPLEX,
                            "ncut": {"type": "integer", "minimum": 2}},
             "additionalProperties": False},
            {"$ref": "#/$defs/matrix"},
        ],
    },
    "model": {
        "description": "Master-equation model: Hamiltonian plus noise operators, GKS "
                       "matrix, or a preset.",
        "anyOf": [
            {"type": "object", "required": ["H"],
             "properties": {"H": {"$ref": "#/$defs/matrix"},
                            "noise_ops": {"type": "array", "items": {"$ref": "#/$defs/matrix"}}},
             "additionalProperties": False},
            {"type": "object", "required": ["H", "gks"],
             "properties": {"H": {"$ref": "#/$defs/matrix"}, "gks": {"$ref": "#/$defs/matrix"},
                            "basis": {"enum": ["gell_mann", "pauli"]}},
             "additionalProperties": False},
            {"type": "object", "required": ["preset", "gamma"],
             "properties": {"preset": {"const": "decay"}, "gamma": {"type": "number", "minimum": 0},
                            "delta": _NUM},
             "additionalProperties": False},
            {"type": "object", "required": ["preset", "gammas"],
             "properties": {"preset": {"const": "unital"}, "H": {"$ref": "#/$defs/matrix"},
                            "gammas": {"type": "array", "items": _NUM, "minItems": 3,
                                       "maxItems": 3}},
             "additionalProperties": False},
        ],
    },
    "matrices": {"type": "array", "items": {"$ref": "#/$defs/matrix"}},
}

_COMMON = {
    "command": {"enum": list(COMMANDS)},
    "out": {"type": "string", "description": "output directory when --out is not given"},
    "description": {"type": "string"},
}


def _schema(command: str, props: dict, required: list, **extra) -> dict:
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": f"qctl {command} configuration",
        "type": "object",
        "properties": {**_COMMON, "command": {"const": command}, **props},
        "required": required,
        "additionalProperties": False,
        "$defs": DEFS,
        **extra,
    }


_M = {"$ref": "#/$defs/matrix"}
_S = {"$ref": "#/$defs/state"}
_MS = {"$ref": "#/$defs/matrices"}

SCHEMAS = {
    "simulate": _schema("simulate", {
        "model": {"$ref": "#/$defs/model"},
        "rho0": _S,
        "T": _POS,
        "n_steps": _INT_POS,
        "method": {"enum": ["auto", "expm", "rk4"]},
        "observables": {"type": "object", "additionalProperties": _M,
                        "propertyNames": {"pattern": "^[A-Za-z_][A-Za-z0-9_]*$"}},
        "controls": {"type": "object", "required": ["H", "u"],
                     "properties": {"H": _MS, "u": _REAL_GRID}, "additionalProperties": False},
    }, ["model", "rho0", "T"]),
    "analyze": _schema("analyze", {
        "controllability": {
            "type": "object", "required": ["H0", "controls"],
            "properties": {"H0": _M, "controls": _MS,
                           "tol": _POS}, "additionalProperties": False},
        "stability": {
            "type": "object", "required": ["model"],
            "properties": {"model": {"$ref": "#/$defs/model"}, "controls": _MS,
                           "subspace": {"type": "array", "items": {
                               "type": "array", "items": _COMPLEX}, "minItems": 1}},
            "additionalProperties": False},
    }, [], anyOf=[{"required": ["controllability"]}, {"required": ["stability"]}]),
    "grape": _schema("grape", {
        "H0": _M,
        "controls": _MS,
        "T": _POS,
        "n_slices": _INT_POS,
        "psi0": {"type": "array", "items": _COMPLEX, "minItems": 1},
        "M": _M,
        "target": _M,
        "fluence_weight": {"type": "number", "minimum": 0},
        "max_iters": {"type": "integer", "minimum": 0},
        "gtol": _POS,
        "u_max": _POS,
        "u0": _REAL_GRID,
        "init_scale": {"type": "number", "minimum": 0},
        "restarts": _INT_POS,
        "seed": {"type": "integer", "minimum": 0},
    }, ["H0", "controls", "T", "n_slices"],
        oneOf=[{"required": ["psi0", "M"]}, {"required": ["target"]}],
        allOf=[{"if": {"not": {"required": ["u0"]}}, "then": {"required": ["seed"]}}]),
    "lyapunov": _schema("lyapunov", {
        "H0": _M, "H1": _M, "rho_d": _S, "rho0": _S, "T": _POS,
        "n_steps": _INT_POS, "gain": _POS,
    }, ["H0", "H1", "rho_d", "rho0", "T"]),
    "dd": _schema("dd", {
        "group": {"anyOf": [{"const": "pauli"}, _MS]},
        "hs": _M, "he": _M,
        "couplings": {"type": "array", "items": {"type": "array", "items": _M,
                                                 "minItems": 2, "maxItems": 2}},
        "rho0": {"anyOf": [_S, {"type": "object", "required": ["product"],
                                "properties": {"product": {"type": "array", "items": _S,
                                                           "minItems": 2, "maxItems": 2}},
                                "additionalProperties": False}]},
        "T": _POS,
        "cycles": {"type": "array", "items": _INT_POS, "minItems": 1},
    }, ["group", "he", "couplings", "rho0", "T"]),
    "fme": _schema("fme", {
        "H": _M, "L": _M, "rho_d": _S, "F": _M, "Hc": _M, "tol": _POS,
    }, ["H", "L", "rho_d"]),
    "sme": _schema("sme", {
        "model": {"type": "object", "required": ["H0", "L"],
                  "properties": {"H0": _M, "L": _M, "H1": _M,
                                 "eta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
                  "additionalProperties": False},
        "law": {"type": "object", "required": ["name"],
                "properties": {"name": {"enum": list(LAWS)}, "u": _NUM, "gain": _POS,
                               "rho_d": _S, "F_y": _M,
                               "gamma": {"type": "number", "exclusiveMinimum": 0,
                                         "exclusiveMaximum": 1},
                               "u_const": _NUM,
                               "initial_mode": {"enum": ["constant", "lyapunov"]}},
                "additionalProperties": False},
        "rho0": _S,
        "rho_d": _S,
        "T": _POS,
        "dt": _POS,
        "n_traj": _INT_POS,
        "seed": {"type": "integer", "minimum": 0},
        "record_every": _INT_POS,
        "trajectory_files": {"type": "integer", "minimum": 0},
        "sample_times": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "backend": {"enum": ["compiled", "python"]},
    }, ["model", "rho0", "T", "dt", "n_traj", "seed"]),
    "slh": _schema("slh", {
        "components": {"anyOf": [{"type": "string"}, {"type": "object"}]},
        "network": {"type": "string"},
        "network_file": {"type": "string"},
        "emit": {"enum": ["slh", "mme"]},
    }, ["components"], oneOf=[{"required": ["network"]}, {"required": ["network_file"]}]),
}

FLAGS = {
    "simulate": {},
    "analyze": {},
    "grape": {"--seed": "integer; overrides the config seed"},
    "lyapunov": {},
    "dd": {},
    "fme": {},
    "sme": {"--seed": "integer", "--ntraj": "integer", "--dt": "float",
            "--law": list(LAWS)},
    "slh": {"--components": "component table JSON", "--network": "network expression file",
            "--emit": ["slh", "mme"]},
}

EXAMPLES = {
    "simulate": {"command": "simulate", "model": {"preset": "decay", "gamma": 1.0, "delta": 0.5},
                 "rho0": {"basis": 1, "dim": 2}, "T": 5.0, "n_steps": 500},
    "analyze": {"command": "analyze",
                "controllability": {"H0": "sigma_z", "controls": ["sigma_x"]},
                "stability": {"model": {"preset": "decay", "gamma": 1.0, "delta": 0.5}}},
    "grape": {"command": "grape", "H0": "sigma_z", "controls": ["sigma_x"], "T": 3.141592653589793,
              "n_slices": 20, "psi0": [1, 0], "M": {"op": "projector", "dim": 2, "index": 1},
              "fluence_weight": 1e-3, "max_iters": 200, "seed": 7},
    "lyapunov": {"command": "lyapunov", "H0": "sigma_z", "H1": "sigma_x",
                 "rho_d": {"basis": 0, "dim": 2}, "rho0": {"bloch": [0.6, 0.0, -0.8]},
                 "T": 200.0, "n_steps": 20000, "gain": 1.0},
    "dd": {"command": "dd", "group": "pauli", "hs": {"op": "zero", "dim": 2},
           "he": {"op": "sigma_x", "scale": 0.5}, "couplings": [["sigma_z", "sigma_z"]],
           "rho0": {"product": [{"ket": [0.7071067811865476, 0.7071067811865476]},
                                {"basis": 0, "dim": 2}]},
           "T": 4.0, "cycles": [1, 2, 4, 8, 16]},
    "fme": {"command": "fme", "H": "sigma_z", "L": {"op": "sigma_x", "scale": 0.5},
            "rho_d": {"basis": 0, "dim": 2}},
    "sme": {"command": "sme", "model": {"H0": {"op": "sigma_z", "scale": 0.5},
                                        "L": {"op": "sigma_z", "scale": 0.5}},
            "law": {"name": "none"}, "rho0": {"bloch": [1.0, 0.0, 0.0]},
            "T": 2.0, "dt": 1e-3, "n_traj": 100, "seed": 42, "record_every": 10,
            "trajectory_files": 5},
    "slh": {"command": "slh", "components": "components.json", "network": "A ; B",
            "emit": "mme"},
}


def validate_config(config, command: str | None = None) -> str:
    """Validate a run configuration and return its command name.

    Raises :class:`ConfigError` listing every schema violation.
    """
    if not isinstance(config, dict):
        raise ConfigError("configuration must be a JSON object")
    command = command or config.get("command")
    if command is None:
        raise ConfigError("missing 'command' (one of " + ", ".join(COMMANDS) + ")")
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            msgs.append(f"{where}: {e.message}")
        raise ConfigError(msgs)
    return command


def describe(command: str) -> dict:
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    return {"command": command, "flags": FLAGS[command], "schema": SCHEMAS[command],
            "example": EXAMPLES[command]}


# --------------------------------------------------------------------------
# config decoding
# --------------------------------------------------------------------------

def _complex(x) -> complex:
    return complex(x[0], x[1]) if isinstance(x, list) else complex(x)


def _named(spec: dict) -> np.ndarray:
    name = spec["op"]
    dim = spec.get("dim")
    fixed = {"sigma_x": SIGMA_X, "sigma_y": SIGMA_Y, "sigma_z": SIGMA_Z,
             "sigma_plus": SIGMA_PLUS, "sigma_minus": SIGMA_MINUS}
    if name in fixed:
        if dim not in (None, 2):
            raise ConfigError(f"{name} is a 2 x 2 operator")
        return fixed[name].astype(complex)
    if dim is None:
        raise ConfigError(f"operator {name!r} needs 'dim'")
    if name == "identity":
        return np.eye(dim, dtype=complex)
    if name == "zero":
        return np.zeros((dim, dim), dtype=complex)
    if name in ("spin_y", "spin_z"):
        fy, fz = spin_operators(dim)
        return fy if name == "spin_y" else fz
    if name in ("number", "annihilation"):
        fock = fock_operators(dim)
        return fock.number if name == "number" else fock.a
    index = spec.get("index")
    if index is None:
        raise ConfigError(f"operator {name!r} needs 'index'")
    if name == "projector":
        if index >= dim:
            raise ConfigError(f"projector index {index} out of range for dim {dim}")
        return projector(ket(index, dim))
    basis = gell_mann_basis(dim)
    if index >= len(basis.elements):
        raise ConfigError(f"gell_mann index {index} out of range for dim {dim}")
    return basis.elements[index]


def parse_matrix(spec) -> np.ndarray:
    """Decode an operator from its configuration form."""
    if isinstance(spec, str):
        spec = {"op": spec}
    if isinstance(spec, list):
        m = np.asarray(spec, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigError("matrix must be square")
        return m
    scale = _complex(spec.get("scale", 1.0))
    if "re" in spec:
        m = matrix_from_json(spec)
    elif "op" in spec:
        m = _named(spec)
    elif "sum" in spec:
        parts = [parse_matrix(p) for p in spec["sum"]]
        if len({p.shape for p in parts}) != 1:
            raise ConfigError("summed operators must have equal dimensions")
        m = sum(parts)
    else:
        m = tensor(*[parse_matrix(p) for p in spec["kron"]])
    return scale * m


def parse_state(spec) -> np.ndarray:
    if isinstance(spec, dict):
        if "ket" in spec:
            psi = np.array([_complex(a) for a in spec["ket"]])
            norm = np.linalg.norm(psi)
            if norm == 0:
                raise ConfigError("ket must be nonzero")
            return projector(psi / norm)
        if "basis" in spec:
            if spec["basis"] >= spec["dim"]:
                raise ConfigError("basis index out of range")
            return projector(ket(spec["basis"], spec["dim"]))
        if "bloch" in spec:
            return density_from_bloch(np.array(spec["bloch"], dtype=float))
        if "coherent" in spec:
            return projector(coherent_state(_complex(spec["coherent"]), spec["ncut"]))
        if "maximally_mixed" in spec:
            n = spec["maximally_mixed"]
            return np.eye(n, dtype=complex) / n
    return density_matrix(parse_matrix(spec))


def parse_model(spec) -> LindbladModel:
    if spec.get("preset") == "decay":
        return decay_model(spec["gamma"], spec.get("delta", 0.0))
    if spec.get("preset") == "unital":
        h = parse_matrix(spec["H"]) if "H" in spec else np.zeros((2, 2))
        return unital_qubit_model(h, spec["gammas"])
    h = parse_matrix(spec["H"])
    if "gks" in spec:
        basis = pauli_basis() if spec.get("basis") == "pauli" else gell_mann_basis(h.shape[0])
        return LindbladModel.from_gks(h, parse_matrix(spec["gks"]), basis)
    return LindbladModel(h, tuple(parse_matrix(l) for l in spec.get("noise_ops", [])))


def _vector(amps) -> np.ndarray:
    return np.array([_complex(a) for a in amps])


# --------------------------------------------------------------------------
# command handlers
# --------------------------------------------------------------------------

def _threads() -> int:
    try:
        return max(1, int(os.environ.get("QCTL_THREADS", "1")))
    except ValueError:
        return 1


def cmd_simulate(cfg: dict, out: Path) -> dict:
    model = parse_model(cfg["model"])
    rho0 = parse_state(cfg["rho0"])
    if "controls" in cfg:
        ctrl = [parse_matrix(h) for h in cfg["controls"]["H"]]
        times, states = mme_propagate_controlled(model, ctrl, cfg["controls"]["u"], cfg["T"], rho0)
    else:
        times, states = mme_propagate(model, rho0, cfg["T"], cfg.get("n_steps", 100),
                                      cfg.get("method", "auto"))
    if not np.all(np.isfinite(states)):
        raise NumericalError("propagation produced non-finite states")
    files = write_trajectory(out, times, states)
    if "observables" in cfg:
        names = sorted(cfg["observables"])
        ops = [parse_matrix(cfg["observables"][k]) for k in names]
        vals = [np.real(np.einsum("ij,tji->t", op, states)) for op in ops]
        files.append(write_csv(out / "expectations.csv", ["t"] + names,
                               np.column_stack([times] + vals)))
    traces = np.real(np.trace(states, axis1=1, axis2=2))
    summary = {"dim": model.dim, "n_points": len(times), "final_state": states[-1],
               "final_purity": purity(states[-1]),
               "max_trace_deviation": float(np.abs(traces - 1).max())}
    write_json(out / "summary.json", summary)
    return {"files": [p.name for p in files] + ["summary.json"]}


def _controllability_report(spec: dict) -> dict:
    h0 = parse_matrix(spec["H0"])
    ctrls = [parse_matrix(h) for h in spec["controls"]]
    ok, res = is_operator_controllable(h0, ctrls, spec.get("tol", 1e-9))
    st = spectral_structure(h0)
    report = {
        "operator_controllable": ok,
        "lie_dim": res.dim,
        "ambient_dim": res.ambient_dim,
        "depth": res.depth,
        "saturated": res.saturated,
        "spectrum": {"energies": st.energies, "regular": st.regular,
                     "strongly_regular": st.strongly_regular},
    }
    if len(ctrls) == 1:
        v = sufficient_controllability(h0, ctrls[0])
        cert = {k: (list(map(list, val)) if k in ("edges", "unique_frequency_edges") else val)
                for k, val in v.certificate.items()}
        report["sufficient_test"] = {"verdict": v.verdict, "certificate": cert}
    return report


def _stability_report(spec: dict) -> dict:
    model = parse_model(spec["model"])
    g = gas_check(model)
    report = {"gas": {"verdict": g.verdict, "kernel_dim": g.kernel_dim, "state": g.state}}
    if model.dim == 2:
        form = bloch_affine(model)
        report["bloch_form"] = {"M": form.M, "g": form.g, "B": form.B, "Gamma": form.Gamma}
    if "controls" in spec:
        acc = affine_accessibility(model, [parse_matrix(h) for h in spec["controls"]])
        report["accessibility"] = {"verdict": acc.verdict, "dim": acc.dim,
                                   "target_dim": acc.target_dim, "affine": acc.affine,
                                   "facts": acc.facts}
    if "subspace" in spec:
        split = SubspaceSplit.from_vectors([_vector(v) for v in spec["subspace"]])
        ok, residuals = invariance_check(model, split)
        report["invariance"] = {"invariant": ok, "dim_S": split.m, "residuals": residuals}
    return report


def cmd_analyze(cfg: dict, out: Path) -> dict:
    report = {}
    if "controllability" in cfg:
        report["controllability"] = _controllability_report(cfg["controllability"])
    if "stability" in cfg:
        report["stability"] = _stability_report(cfg["stability"])
    write_json(out / "report.json", report)
    return {"files": ["report.json"]}


def cmd_grape(cfg: dict, out: Path) -> dict:
    h0 = parse_matrix(cfg["H0"])
    ctrls = tuple(parse_matrix(h) for h in cfg["controls"])
    n_slices = cfg["n_slices"]
    shape = (len(ctrls), n_slices)
    cp = ControlProblem(h0, ctrls, np.zeros(shape), cfg["T"])
    kw = dict(fluence_weight=cfg.get("fluence_weight", 0.0), max_iters=cfg.get("max_iters", 200),
              gtol=cfg.get("gtol", 1e-6), u_max=cfg.get("u_max"))
    if "target" in cfg:
        problem = GrapeProblem(cp, target=parse_matrix(cfg["target"]), **kw)
    else:
        problem = GrapeProblem(cp, psi0=_vector(cfg["psi0"]), M=parse_matrix(cfg["M"]), **kw)
    restarts = cfg.get("restarts", 1)
    seed = cfg.get("seed", 0)
    scale = cfg.get("init_scale", 0.1)

    def initial(r: int) -> np.ndarray:
        if r == 0 and "u0" in cfg:
            u0 = np.atleast_2d(np.asarray(cfg["u0"], dtype=float))
            if u0.shape != shape:
                raise ConfigError(f"u0 has shape {u0.shape}, expected {shape}")
            return u0
        gen = np.random.Generator(np.random.Philox(seed + r))
        return scale * gen.standard_normal(shape)

    starts = [initial(r) for r in range(restarts)]
    workers = min(_threads(), restarts)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda u0: grape_optimize(problem, u0), starts))
    else:
        results = [grape_optimize(problem, u0) for u0 in starts]
    best = max(range(restarts), key=lambda r: (results[r].J_history[-1], -r))
    res = results[best]
    write_csv(out / "controls.csv", ["slice"] + [f"u_{j + 1}" for j in range(len(ctrls))],
              np.column_stack([np.arange(n_slices), res.u.T]))
    write_csv(out / "j_history.csv", ["iteration", "J"],
              np.column_stack([np.arange(len(res.J_history)), res.J_history]))
    write_csv(out / "restarts.csv", ["restart", "J", "figure_of_merit", "iterations"],
              [[r, x.J_history[-1], x.figure_of_merit, x.iterations] for r, x in enumerate(results)])
    write_json(out / "summary.json", {
        "kind": problem.kind, "best_restart": best, "J": res.J_history[-1],
        "figure_of_merit": res.figure_of_merit, "iterations": res.iterations,
        "converged": res.converged, "message": res.message, "seed": seed})
    return {"files": ["controls.csv", "j_history.csv", "restarts.csv", "summary.json"]}


def cmd_lyapunov(cfg: dict, out: Path) -> dict:
    design = LyapunovDesign(parse_state(cfg["rho_d"]), parse_matrix(cfg["H0"]),
                            parse_matrix(cfg["H1"]), cfg.get("gain", 1.0))
    rho0 = parse_state(cfg["rho0"])
    n_steps = cfg.get("n_steps", max(1, int(round(cfg["T"] / 0.01))))
    traj = lyapunov_simulate(design, rho0, cfg["T"], n_steps)
    if not np.all(np.isfinite(traj.states)):
        raise NumericalError("closed-loop integration produced non-finite states")
    files = write_trajectory(out, traj.times, traj.states)
    write_csv(out / "lyapunov.csv", ["t", "V", "u"], np.column_stack([traj.times, traj.V, traj.u]))
    holds, rank, tangent = lyapunov_rank_condition(design.H0, design.H1, design.rho_d)
    write_json(out / "summary.json", {
        "V0": traj.V[0], "V_final": traj.V[-1],
        "max_V_increase": float(np.max(np.diff(traj.V), initial=0.0)),
        "rank_condition": {"holds": holds, "rank": rank, "tangent_dim": tangent}})
    return {"files": [p.name for p in files] + ["lyapunov.csv", "summary.json"]}


_PAULI_GROUP = (np.eye(2), SIGMA_X, SIGMA_Y, SIGMA_Z)


def cmd_dd(cfg: dict, out: Path) -> dict:
    group = _PAULI_GROUP if cfg["group"] == "pauli" else tuple(parse_matrix(g) for g in cfg["group"])
    ns = group[0].shape[0]
    he = parse_matrix(cfg["he"])
    hs = parse_matrix(cfg["hs"]) if "hs" in cfg else np.zeros((ns, ns))
    couplings = tuple((parse_matrix(s), parse_matrix(e)) for s, e in cfg["couplings"])
    r0 = cfg["rho0"]
    if isinstance(r0, dict) and "product" in r0:
        rho0 = tensor(parse_state(r0["product"][0]), parse_state(r0["product"][1]))
    else:
        rho0 = parse_state(r0)
    T = cfg["T"]
    cycles = cfg.get("cycles", [1, 2, 4, 8, 16])
    rows = []
    proto = None
    for k in cycles:
        proto = DDProtocol(group, T / k, hs, he, couplings)
        res = dd_simulate(proto, rho0, T)
        rows.append([k, T / k, res.fidelity_dd[-1], res.fidelity_free[-1]])
    write_csv(out / "fidelity_vs_K.csv", ["K", "Tc", "fidelity_dd", "fidelity_free"], rows)
    avg = dd_average_hamiltonian(proto)
    write_json(out / "summary.json", {
        "n_group": len(group), "T": T, "cycles": cycles,
        "average_coupling_norm": float(np.linalg.norm(avg)),
        "fidelity_dd": [r[2] for r in rows], "fidelity_free": [r[3] for r in rows]})
    return {"files": ["fidelity_vs_K.csv", "summary.json"]}


def cmd_fme(cfg: dict, out: Path) -> dict:
    h = parse_matrix(cfg["H"])
    l = parse_matrix(cfg["L"])
    rho_d = parse_state(cfg["rho_d"])
    if "F" in cfg:
        f = parse_matrix(cfg["F"])
        hc = parse_matrix(cfg["Hc"]) if "Hc" in cfg else np.zeros_like(h)
        model = fme_closed_loop(h, l, f, hc)
        chain = None
    else:
        design = synthesize_feedback(rho_d, l, h, cfg.get("tol", 1e-6))
        f, hc, model, chain = design.F, design.Hc, design.model, design.r_block_coupling
    verdict = gas_check(model)
    dist = trace_distance(verdict.state, rho_d) if verdict.state is not None else None
    write_json(out / "design.json", {
        "F": f, "Hc": hc, "noise_op": model.noise_ops[0], "closed_loop_H": model.H,
        "gas": {"verdict": verdict.verdict, "kernel_dim": verdict.kernel_dim,
                "state": verdict.state, "trace_distance_to_target": dist},
        "r_block_coupling": chain})
    return {"files": ["design.json"]}


def _sme_law(spec: dict, n: int, h1):
    name = spec.get("name", "none")
    if name == "none":
        return ConstantLaw(spec.get("u", 0.0))
    if name == "affine":
        if n != 2:
            raise ConfigError("the affine law is defined for two-level systems")
        return affine_law()
    rho_d = parse_state(spec["rho_d"]) if "rho_d" in spec else projector(ket(0, n))
    if name == "lyapunov":
        return lyapunov_law(h1, rho_d, spec.get("gain", 1.0))
    fy = parse_matrix(spec["F_y"]) if "F_y" in spec else spin_operators(n)[0]
    return PatchedLawConfig(rho_d, fy, spec.get("gamma", 0.45), spec.get("u_const", 1.0),
                            spec.get("initial_mode", "constant"))


def _per_trajectory(times, states, u, dy, record_every: int) -> tuple[list[str], np.ndarray]:
    # row k: state at t_k, control on the last step ending at t_k, record increment over (t_{k-1}, t_k]
    n_rec = len(times)
    u_col = np.zeros(n_rec)
    dy_col = np.zeros(n_rec)
    if n_rec > 1:
        ends = record_every * np.arange(1, n_rec)
        u_col[1:] = u[ends - 1]
        dy_col[1:] = dy[:ends[-1]].reshape(n_rec - 1, record_every).sum(axis=1)
    if states.shape[-1] == 2:
        r = np.array([bloch_from_density(s) for s in states])
        return ["t", "x", "y", "z", "u", "dY"], np.column_stack([times, r, u_col, dy_col])
    n = states.shape[-1]
    return (["t"] + state_columns(n) + ["u", "dY"],
            np.column_stack([times, state_values(states), u_col, dy_col]))


def _mme_comparison(model: SMEModel, law, rho0, res, record_every: int, sample_times) -> list:
    """Trace distance of the ensemble mean from the averaged master equation."""
    if not isinstance(law, ConstantLaw):
        raise ConfigError("sample_times needs an open-loop (constant) law")
    avg = model.averaged_model(law.u)
    out = []
    for t in sample_times:
        k = int(round(t / (res.dt * record_every)))
        if not 0 <= k < len(res.times) or abs(res.times[k] - t) > 1e-9 * max(1.0, t):
            raise ConfigError(f"sample time {t} is not a recorded time")
        ref = mme_propagate(avg, rho0, t, 1)[1][-1] if t > 0 else rho0
        out.append({"t": t, "trace_distance": trace_distance(res.mean_states[k], ref)})
    return out


def cmd_sme(cfg: dict, out: Path) -> dict:
    m = cfg["model"]
    h0 = parse_matrix(m["H0"])
    h1 = parse_matrix(m["H1"]) if "H1" in m else None
    law_spec = cfg.get("law", {"name": "none"})
    n = h0.shape[0]
    if law_spec["name"] in ("lyapunov", "patched", "affine") and h1 is None:
        raise ConfigError(f"law {law_spec['name']!r} needs model.H1")
    law = _sme_law(law_spec, n, h1)
    model = SMEModel(h0, parse_matrix(m["L"]), h1, m.get("eta", 1.0), law)
    rho0 = parse_state(cfg["rho0"])
    record_every = cfg.get("record_every", 1)
    res = sme_ensemble(model, rho0, cfg["T"], cfg["dt"], cfg["n_traj"], cfg["seed"],
                       record_every, cfg.get("backend"))
    n_files = min(cfg.get("trajectory_files", 10), res.n_traj)
    files = []
    if n_files:
        (out / "trajectories").mkdir(exist_ok=True)
    for i in range(n_files):
        header, data = _per_trajectory(res.times, res.states[i], res.u[i], res.dY[i], record_every)
        name = f"trajectories/traj_{i:05d}.csv"
        write_csv(out / name, header, data)
        files.append(name)

    x = 0.5 * (model.L + model.L.conj().T)
    ex = np.real(np.einsum("ij,trji->tr", x, res.states))
    ex2 = np.real(np.einsum("ij,trji->tr", x @ x, res.states))
    pur = np.real(np.einsum("trij,trji->tr", res.states, res.states))
    cols = {"mean_purity": pur.mean(axis=0), "mean_variance": (ex2 - ex * ex).mean(axis=0)}
    target = law.rho_d if isinstance(law, PatchedLawConfig) else None
    if "rho_d" in cfg:
        target = parse_state(cfg["rho_d"])
    if target is not None:
        cols["mean_overlap"] = np.real(np.einsum("ij,trji->tr", target, res.states)).mean(axis=0)
    if n == 2:
        head = ["t", "x", "y", "z"]
        base = np.column_stack([res.times, np.array([bloch_from_density(s) for s in res.mean_states])])
    else:
        head = ["t"] + state_columns(n)
        base = np.column_stack([res.times, state_values(res.mean_states)])
    write_csv(out / "ensemble.csv", head + list(cols),
              np.column_stack([base] + list(cols.values())))
    files.append("ensemble.csv")

    summary = {
        "n_traj": res.n_traj, "seed": res.seed, "dt": res.dt, "n_steps": res.n_steps,
        "record_every": record_every, "law": getattr(law, "name", "none"), "eta": model.eta,
        "dY_convention": DY_CONVENTION,
        "trajectory_seeds": "seed + trajectory index (Philox)",
        "clip_events": int(res.clip_events.sum()),
        "clip_fraction": float(res.clip_events.sum()) / (res.n_traj * res.n_steps),
        "final_mean_state": res.mean_states[-1],
    }
    if "sample_times" in cfg:
        summary["mme_comparison"] = _mme_comparison(model, law, rho0, res, record_every,
                                                    cfg["sample_times"])
    write_json(out / "summary.json", summary)
    files.append("summary.json")
    return {"files": files}


def _read_text(path: str, base: Path) -> str:
    p = Path(path)
    if not p.is_absolute():
        p = base / p
    return p.read_text()


def cmd_slh(cfg: dict, out: Path, base: Path = Path(".")) -> dict:
    comps = cfg["components"]
    table = json.loads(_read_text(comps, base)) if isinstance(comps, str) else comps
    text = cfg["network"] if "network" in cfg else _read_text(cfg["network_file"], base)
    tree = parse_network(text)
    triple = reduce_network(tree, load_components(table))
    emit = cfg.get("emit", "slh")
    canonical = format_network(tree)
    if emit == "slh":
        write_json(out / "network.json", {"network": canonical, **triple.to_json()})
        return {"files": ["network.json"]}
    model = slh_to_mme(triple)
    write_json(out / "mme.json", {"network": canonical, "H": model.H,
                                  "noise_ops": list(model.noise_ops)})
    return {"files": ["mme.json"]}


HANDLERS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "grape": cmd_grape,
            "lyapunov": cmd_lyapunov, "dd": cmd_dd, "fme": cmd_fme, "sme": cmd_sme,
            "slh": cmd_slh}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def run_config(config: dict, out, command: str | None = None, base: Path | None = None) -> dict:
    """Validate and execute one configuration, writing artifacts under ``out``."""
    command = validate_config(config, command)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if command == "slh":
        return cmd_slh(config, out, base or Path("."))
    return HANDLERS[command](config, out)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qctl", description="Quantum control toolkit batch runner.")
    p.add_argument("--version", action="version", version=f"qctl {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run a configuration with command={name!r}")
        sp.add_argument("config", nargs="?" if name == "slh" else None, help="JSON run configuration")
        sp.add_argument("--out", help="output directory")
        if name in ("sme", "grape"):
            sp.add_argument("--seed", type=int)
        if name == "sme":
            sp.add_argument("--ntraj", type=int)
            sp.add_argument("--dt", type=float)
            sp.add_argument("--law", choices=LAWS)
        if name == "slh":
            sp.add_argument("--components")
            sp.add_argument("--network")
            sp.add_argument("--emit", choices=("slh", "mme"))
    rp = sub.add_parser("run", help="run a configuration whose 'command' field selects the task")
    rp.add_argument("config")
    rp.add_argument("--out")
    dp = sub.add_parser("describe", help="print the schema and an example configuration")
    dp.add_argument("command")
    return p


def _load(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None


def _apply_flags(args, cfg: dict) -> dict:
    cfg = copy.deepcopy(cfg)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "ntraj", None) is not None:
        cfg["n_traj"] = args.ntraj
    if getattr(args, "dt", None) is not None:
        cfg["dt"] = args.dt
    if getattr(args, "law", None) is not None:
        law = dict(cfg.get("law", {}))
        if law.get("name") != args.law:
            law = {"name": args.law}
        cfg["law"] = law
    if getattr(args, "components", None) is not None:
        cfg["components"] = str(Path(args.components).resolve())
    if getattr(args, "network", None) is not None:
        cfg.pop("network", None)
        cfg["network_file"] = str(Path(args.network).resolve())
    if getattr(args, "emit", None) is not None:
        cfg["emit"] = args.emit
    return cfg


def _error(out, kind: str, message: str, extra: dict | None = None) -> None:
    print(f"qctl: {kind}: {message}", file=sys.stderr)
    if out is not None:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            write_json(Path(out) / "error.json", {"error": kind, "message": message, **(extra or {})})
        except OSError:
            pass


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.cmd == "describe":
        try:
            print(json.dumps(describe(args.command), indent=2))
        except ConfigError as e:
            print(f"qctl: {e}", file=sys.stderr)
            return EXIT_INVALID
        return EXIT_OK

    out = args.out
    try:
        if args.config is not None:
            cfg = _load(args.config)
            base = Path(args.config).resolve().parent
        else:
            cfg = {"command": args.cmd}
            base = Path(".")
        command = None if args.cmd == "run" else args.cmd
        if command is not None and isinstance(cfg, dict):
            cfg.setdefault("command", command)
            if cfg["command"] != command:
                raise ConfigError(f"config is for {cfg['command']!r}, not {command!r}")
            cfg = _apply_flags(args, cfg)
        if out is None and isinstance(cfg, dict):
            out = cfg.get("out")
            if out is not None and not Path(out).is_absolute():
                out = str(base / out)
        if out is None:
            raise ConfigError("--out DIR is required")
        result = run_config(cfg, out, command, base)
    except ConfigError as e:
        print("qctl: invalid configuration:", file=sys.stderr)
        for msg in e.errors:
            print(f"  - {msg}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, SynthesisError, np.linalg.LinAlgError, FloatingPointError) as e:
        extra = {"diagnostic": getattr(e, "diagnostic", None)}
        _error(out, "numerical failure", str(e), extra)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, OSError) as e:
        print(f"qctl: invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    for name in result["files"]:
        print(Path(out) / name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
