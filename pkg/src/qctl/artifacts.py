"""CSV/JSON writers shared by the CLI.

Floats are written with 17 significant digits so doubles round-trip exactly.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import bloch_from_density, matrix_to_json

FLOAT_FMT = "%.17g"


def write_csv(path, header: Sequence[str], data) -> Path:
    path = Path(path)
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.size == 0:
        data = data.reshape(0, len(header))
    if data.shape[1] != len(header):
        raise ValueError(f"{len(header)} columns declared, data has {data.shape[1]}")
    np.savetxt(path, data, fmt=FLOAT_FMT, delimiter=",", header=",".join(header), comments="")
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def state_columns(dim: int) -> list[str]:
    """Column-stacked ``re_ij, im_ij`` names (row index varies fastest)."""
    cols = []
    for j in range(dim):
        for i in range(dim):
            cols += [f"re_{i}{j}", f"im_{i}{j}"]
    return cols


def state_values(states: np.ndarray) -> np.ndarray:
    states = np.asarray(states)
    n = states.shape[-1]
    flat = np.swapaxes(states, -1, -2).reshape(states.shape[0], n * n)
    out = np.empty((states.shape[0], 2 * n * n))
    out[:, 0::2] = flat.real
    out[:, 1::2] = flat.imag
    return out


def trajectory_table(times, states) -> tuple[list[str], np.ndarray]:
    """``t``, column-stacked state entries, then populations ``p_k``."""
    states = np.asarray(states)
    n = states.shape[-1]
    pops = np.real(np.diagonal(states, axis1=-2, axis2=-1))
    header = ["t"] + state_columns(n) + [f"p_{k}" for k in range(n)]
    data = np.column_stack([np.asarray(times), state_values(states), pops])
    return header, data


def bloch_table(times, states) -> tuple[list[str], np.ndarray]:
    r = np.array([bloch_from_density(s) for s in states])
    return ["t", "x", "y", "z"], np.column_stack([np.asarray(times), r])


def write_trajectory(out_dir, times, states, name: str = "trajectory") -> list[Path]:
    out_dir = Path(out_dir)
    paths = [write_csv(out_dir / f"{name}.csv", *trajectory_table(times, states))]
    if np.asarray(states).shape[-1] == 2:
        paths.append(write_csv(out_dir / f"{name}_bloch.csv", *bloch_table(times, states)))
    return paths


def to_jsonable(obj):
    """Recursively convert numpy values; complex square matrices use the shared format."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if obj.ndim == 2 and obj.shape[0] == obj.shape[1] and np.iscomplexobj(obj):
            return matrix_to_json(obj)
        if np.iscomplexobj(obj):
            return {"re": obj.real.tolist(), "im": obj.imag.tolist()}
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path
