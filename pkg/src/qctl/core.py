"""Quantum state and observable algebra for finite-dimensional systems.

States are plain complex numpy arrays: a length-N vector for a pure state,
an N x N matrix for a density operator.  Observables carry their spectral
decomposition (eigenvalue, projector) grouped by degenerate eigenspace.

Conventions
-----------
* Bloch coordinates use ``j = tr(rho sigma_j)`` so that
  ``rho = (I + x sigma_x + y sigma_y + z sigma_z) / 2``.
* Generalized bases are Hilbert-Schmidt orthonormal, ``tr(l_j l_k) = delta_jk``.
  For N = 2 the basis is ``sigma / sqrt(2)`` and Bloch = sqrt(2) * coherence.
* Superoperators act on column-stacked (Fortran order) matrices.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

ATOL = 1e-9
PROB_THRESHOLD = 1e-12

_PAULI = {
    "0": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class DimensionError(ValueError):
    """Operand shapes do not fit the requested operation."""


class InvalidStateError(ValueError):
    """Matrix is not a density operator within tolerance."""


class NumericalError(RuntimeError):
    """An integration or factorization produced unusable numbers."""


def pauli(index: str) -> np.ndarray:
    """Return the Pauli matrix for index in {'0', 'x', 'y', 'z'} (``'i'`` = identity)."""
    key = str(index).lower()
    if key in ("i", "id"):
        key = "0"
    try:
        return _PAULI[key].copy()
    except KeyError:
        raise ValueError(f"unknown Pauli index {index!r}") from None


SIGMA_X = pauli("x")
SIGMA_Y = pauli("y")
SIGMA_Z = pauli("z")
SIGMA_PLUS = 0.5 * (SIGMA_X + 1j * SIGMA_Y)
SIGMA_MINUS = SIGMA_PLUS.conj().T


def dag(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def commutator(a, b):
    return a @ b - b @ a


def anticommutator(a, b):
    return a @ b + b @ a


def is_hermitian(a, atol: float = ATOL) -> bool:
    a = np.asarray(a)
    return a.ndim == 2 and a.shape[0] == a.shape[1] and np.linalg.norm(a - dag(a)) <= atol


def ket(index: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def projector(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def normalize_state(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    n = np.linalg.norm(psi)
    if n == 0:
        raise InvalidStateError("zero vector cannot be normalized")
    return psi / n


def check_state_vector(psi, atol: float = ATOL) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1:
        raise DimensionError(f"state vector must be 1-D, got shape {psi.shape}")
    if abs(np.linalg.norm(psi) - 1.0) > atol:
        raise InvalidStateError(f"state vector norm {np.linalg.norm(psi):.3e} != 1")
    return psi


def density_matrix(rho, atol: float = ATOL) -> np.ndarray:
    """Validate ``rho`` as a density operator and return a cleaned copy.

    Accepts a state vector (converted to its projector) or a square matrix.
    Eigenvalues in ``[-atol, 0)`` are clipped to zero and the trace is
    renormalized; anything further from the state space raises.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim == 1:
        return projector(check_state_vector(rho, atol))
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionError(f"density matrix must be square, got shape {rho.shape}")
    if np.linalg.norm(rho - dag(rho)) > atol:
        raise InvalidStateError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > atol:
        raise InvalidStateError(f"density matrix trace {np.trace(rho).real:.12g} != 1")
    rho = 0.5 * (rho + dag(rho))
    w, v = np.linalg.eigh(rho)
    if w.min() < -atol:
        raise InvalidStateError(f"density matrix has eigenvalue {w.min():.3e} < 0")
    if w.min() < 0:
        w = np.clip(w, 0.0, None)
        rho = (v * w) @ dag(v)
        rho = rho / np.trace(rho).real
    return rho


def is_density(rho, atol: float = ATOL) -> bool:
    try:
        density_matrix(rho, atol)
    except (InvalidStateError, DimensionError):
        return False
    return True


def project_to_states(rho, atol: float = ATOL) -> tuple[np.ndarray, bool]:
    """Hermitize, clip negative eigenvalues and renormalize.

    Returns the projected state and whether an eigenvalue below ``-atol``
    had to be removed.
    """
    rho = np.asarray(rho, dtype=complex)
    rho = 0.5 * (rho + dag(rho))
    w, v = np.linalg.eigh(rho)
    event = bool(w.min() < -atol)
    if w.min() < 0:
        w = np.clip(w, 0.0, None)
        rho = (v * w) @ dag(v)
    return rho / np.trace(rho).real, event


def purity(rho) -> float:
    rho = np.asarray(rho)
    return float(np.real(np.trace(rho @ rho)))


def maximally_mixed(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=complex) / dim


def random_state_vector(dim: int, rng: np.random.Generator) -> np.ndarray:
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return psi / np.linalg.norm(psi)


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Ginibre-distributed random density matrix of the given rank."""
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ dag(g)
    return rho / np.trace(rho).real


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_hermitian(dim: int, rng: np.random.Generator, traceless: bool = False) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = 0.5 * (a + dag(a))
    if traceless:
        h = h - np.trace(h) / dim * np.eye(dim)
    return h


def trace_distance(rho, sigma) -> float:
    w = np.linalg.eigvalsh(np.asarray(rho) - np.asarray(sigma))
    return 0.5 * float(np.abs(w).sum())


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity ``(tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``."""
    w, v = np.linalg.eigh(np.asarray(rho))
    sq = (v * np.sqrt(np.clip(w, 0, None))) @ dag(v)
    inner = np.linalg.eigvalsh(sq @ np.asarray(sigma) @ sq)
    return float(np.sum(np.sqrt(np.clip(inner, 0, None))) ** 2)


# --------------------------------------------------------------------------
# observables and measurement
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Observable:
    """Hermitian operator with its degeneracy-grouped spectral decomposition.

    Eigenvalues closer than ``1e-8 * ||Y||`` share one projector.
    """

    matrix: np.ndarray
    values: np.ndarray = field(init=False, repr=False)
    projectors: tuple = field(init=False, repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"observable must be square, got shape {m.shape}")
        if np.linalg.norm(m - dag(m)) > ATOL * max(1.0, np.linalg.norm(m)):
            raise ValueError("observable matrix is not Hermitian")
        m = 0.5 * (m + dag(m))
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        w, v = np.linalg.eigh(m)
        tol = 1e-8 * max(np.linalg.norm(m, 2), 1e-300)
        groups: list[list[int]] = []
        for i, wi in enumerate(w):
            if groups and abs(wi - w[groups[-1][0]]) <= tol:
                groups[-1].append(i)
            else:
                groups.append([i])
        values = np.array([w[g].mean() for g in groups])
        projs = tuple(v[:, g] @ dag(v[:, g]) for g in groups)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "projectors", projs)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def spectral(self) -> list[tuple[float, np.ndarray]]:
        return list(zip(self.values.tolist(), self.projectors))


def as_observable(y) -> Observable:
    return y if isinstance(y, Observable) else Observable(np.asarray(y))


def as_matrix(y) -> np.ndarray:
    return y.matrix if isinstance(y, Observable) else np.asarray(y, dtype=complex)


class Outcome(NamedTuple):
    value: float
    probability: float
    state: np.ndarray


def measure(rho, y) -> list[Outcome]:
    """Projective measurement statistics and conditional states.

    Outcomes with probability below ``PROB_THRESHOLD`` are omitted.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim == 1:
        rho = projector(rho)
    obs = as_observable(y)
    if obs.dim != rho.shape[0]:
        raise DimensionError("state and observable dimensions differ")
    out = []
    for value, proj in obs.spectral():
        p = float(np.real(np.trace(rho @ proj)))
        if p > PROB_THRESHOLD:
            out.append(Outcome(value, p, proj @ rho @ proj / p))
    return out


def probabilities(state, y) -> np.ndarray:
    """Probabilities of every eigenspace of ``y`` (zero branches included)."""
    state = np.asarray(state, dtype=complex)
    obs = as_observable(y)
    if state.ndim == 1:
        return np.array([np.real(state.conj() @ p @ state) for p in obs.projectors])
    return np.array([np.real(np.trace(state @ p)) for p in obs.projectors])


def nonselective(rho, y) -> np.ndarray:
    obs = as_observable(y)
    rho = np.asarray(rho, dtype=complex)
    return sum(p @ rho @ p for p in obs.projectors)


def expectation(rho, y) -> float:
    rho = np.asarray(rho, dtype=complex)
    m = as_matrix(y)
    if rho.ndim == 1:
        return float(np.real(rho.conj() @ m @ rho))
    return float(np.real(np.trace(m @ rho)))


# --------------------------------------------------------------------------
# Bloch and coherence-vector representations
# --------------------------------------------------------------------------

def bloch_from_density(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise DimensionError(f"Bloch representation needs a 2x2 state, got {rho.shape}")
    return np.array([np.real(np.trace(rho @ s)) for s in (SIGMA_X, SIGMA_Y, SIGMA_Z)])


def density_from_bloch(r) -> np.ndarray:
    x, y, z = np.asarray(r, dtype=float)
    return 0.5 * (np.eye(2) + x * SIGMA_X + y * SIGMA_Y + z * SIGMA_Z)


@dataclass(frozen=True, eq=False)
class OperatorBasis:
    """Orthonormal traceless Hermitian basis, ``tr(l_j l_k) = delta_jk``.

    ``bloch_scale`` converts coherence coordinates to the Pauli-normalized
    convention ``tr(s_j s_k)/2 = delta_jk`` (sqrt(2) for every N).
    """

    dim: int
    elements: np.ndarray
    name: str = "gell-mann"
    bloch_scale: float = np.sqrt(2.0)

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)


@functools.lru_cache(maxsize=None)
def _gell_mann_elements(n: int) -> np.ndarray:
    sym, anti, diag = [], [], []
    for j in range(n):
        for k in range(j + 1, n):
            s = np.zeros((n, n), dtype=complex)
            s[j, k] = s[k, j] = 1.0
            sym.append(s / np.sqrt(2))
            a = np.zeros((n, n), dtype=complex)
            a[j, k], a[k, j] = -1j, 1j
            anti.append(a / np.sqrt(2))
    for l in range(1, n):
        d = np.zeros((n, n), dtype=complex)
        d[np.arange(l), np.arange(l)] = 1.0
        d[l, l] = -l
        diag.append(d / np.sqrt(l * (l + 1)))
    el = np.array(sym + anti + diag)
    el.setflags(write=False)
    return el


def gell_mann_basis(n: int) -> OperatorBasis:
    """Generalized Gell-Mann basis: symmetric, antisymmetric, then diagonal.

    For ``n = 2`` this is ``(sigma_x, sigma_y, sigma_z) / sqrt(2)``.
    """
    if n < 2:
        raise ValueError("basis dimension must be >= 2")
    return OperatorBasis(n, _gell_mann_elements(n), "gell-mann")


def pauli_basis() -> OperatorBasis:
    return OperatorBasis(2, _gell_mann_elements(2), "pauli")


def coherence_vector(rho, basis: OperatorBasis) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (basis.dim, basis.dim):
        raise DimensionError("state and basis dimensions differ")
    return np.real(np.einsum("kij,ji->k", basis.elements, rho))


def density_from_coherence(c, basis: OperatorBasis) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.shape != (len(basis),):
        raise DimensionError("coherence vector length does not match basis")
    return np.eye(basis.dim) / basis.dim + np.einsum("k,kij->ij", c, basis.elements)


# --------------------------------------------------------------------------
# composite systems
# --------------------------------------------------------------------------

def tensor(*ops) -> np.ndarray:
    """Kronecker product of states or operators (left factor first)."""
    out = np.asarray(ops[0], dtype=complex)
    for op in ops[1:]:
        op = np.asarray(op, dtype=complex)
        if out.ndim != op.ndim:
            raise DimensionError("cannot mix vectors and matrices in a tensor product")
        out = np.kron(out, op)
    return out


def partial_trace(x, dims: Sequence[int], keep: int | Sequence[int]) -> np.ndarray:
    """Trace out every factor not in ``keep`` (0-based indices into ``dims``)."""
    x = np.asarray(x, dtype=complex)
    dims = list(dims)
    total = int(np.prod(dims))
    if x.ndim == 1:
        x = np.outer(x, x.conj())
    if x.shape != (total, total):
        raise DimensionError(f"operator shape {x.shape} does not factor as {dims}")
    keep = [keep] if isinstance(keep, (int, np.integer)) else sorted(keep)
    if any(k < 0 or k >= len(dims) for k in keep):
        raise DimensionError(f"keep indices {keep} out of range for {len(dims)} factors")
    n = len(dims)
    t = x.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = list(letters[:n])
    col = list(letters[n:2 * n])
    for i in range(n):
        if i not in keep:
            col[i] = row[i]
    out_idx = [row[i] for i in keep] + [col[i] for i in keep]
    res = np.einsum("".join(row) + "".join(col) + "->" + "".join(out_idx), t)
    d = int(np.prod([dims[i] for i in keep]))
    return res.reshape(d, d)


# --------------------------------------------------------------------------
# superoperators
# --------------------------------------------------------------------------

def vec(x) -> np.ndarray:
    return np.asarray(x).reshape(-1, order="F")


def unvec(v, dim: int) -> np.ndarray:
    return np.asarray(v).reshape(dim, dim, order="F")


def superop_matrix(fn: Callable[[np.ndarray], np.ndarray], dim: int) -> np.ndarray:
    """Column-stacked matrix of a linear map on ``dim x dim`` operators."""
    cols = []
    for k in range(dim * dim):
        e = np.zeros(dim * dim, dtype=complex)
        e[k] = 1.0
        cols.append(vec(fn(unvec(e, dim))))
    return np.array(cols).T


def sandwich_superop(a, b) -> np.ndarray:
    """Matrix of ``rho -> a rho b^dagger`` in column-stacking convention."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    return np.kron(b.conj(), a)


# --------------------------------------------------------------------------
# truncated harmonic oscillator
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TruncatedFock:
    ncut: int
    a: np.ndarray
    adag: np.ndarray
    number: np.ndarray


def fock_operators(ncut: int) -> TruncatedFock:
    if ncut < 2:
        raise ValueError("truncation dimension must be >= 2")
    a = np.diag(np.sqrt(np.arange(1, ncut)), k=1).astype(complex)
    return TruncatedFock(ncut, a, a.conj().T, a.conj().T @ a)


def coherent_state(alpha: complex, ncut: int, return_residual: bool = False):
    """Truncated, renormalized coherent state ``|alpha>``.

    With ``return_residual`` also returns ``||a|alpha> - alpha|alpha>||``,
    which bounds the truncation error.
    """
    if ncut < 2:
        raise ValueError("truncation dimension must be >= 2")
    n = np.arange(ncut)
    log_fact = np.cumsum(np.log(np.maximum(n, 1)))
    amp = np.zeros(ncut, dtype=complex)
    if alpha == 0:
        amp[0] = 1.0
    else:
        logs = n * np.log(abs(alpha)) - 0.5 * log_fact - 0.5 * abs(alpha) ** 2
        amp = np.exp(logs) * np.exp(1j * np.angle(alpha) * n)
    psi = amp / np.linalg.norm(amp)
    if not return_residual:
        return psi
    a = fock_operators(ncut).a
    return psi, float(np.linalg.norm(a @ psi - alpha * psi))


# --------------------------------------------------------------------------
# shared JSON matrix format
# --------------------------------------------------------------------------

def matrix_to_json(m) -> dict:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"only square matrices serialize, got shape {m.shape}")
    return {"dim": int(m.shape[0]), "re": m.real.tolist(), "im": m.imag.tolist()}


def matrix_from_json(obj) -> np.ndarray:
    """Decode ``{"dim", "re", "im"}``; a bare nested list is read as real."""
    if isinstance(obj, dict):
        re = np.asarray(obj["re"], dtype=float)
        im = np.asarray(obj.get("im", np.zeros_like(re)), dtype=float)
        m = re + 1j * im
        dim = obj.get("dim", m.shape[0] if m.ndim else 0)
        if m.shape != (dim, dim):
            raise DimensionError(f"matrix JSON declares dim {dim} but has shape {m.shape}")
        return m
    m = np.asarray(obj, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"matrix must be square, got shape {m.shape}")
    return m
