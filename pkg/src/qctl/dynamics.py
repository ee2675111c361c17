"""Closed- and open-system propagation.

Controls are piecewise constant on a uniform grid and every slice is
propagated with a dense matrix exponential, so results are exact for the
model class up to the accuracy of ``scipy.linalg.expm``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .core import (
    ATOL,
    SIGMA_PLUS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    DimensionError,
    OperatorBasis,
    as_matrix,
    coherence_vector,
    dag,
    gell_mann_basis,
    pauli_basis,
    unvec,
    vec,
)

# so(3) generators of the adjoint action of -i sigma_{x,y,z} on (x, y, z)
BLOCH_BASIS = {
    "x": 2.0 * np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=float),
    "y": 2.0 * np.array([[0, 0, 1], [0, 0, 0], [-1, 0, 0]], dtype=float),
    "z": 2.0 * np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0]], dtype=float),
}


def _herm(h, name="operator") -> np.ndarray:
    h = as_matrix(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {h.shape}")
    if np.linalg.norm(h - dag(h)) > ATOL * max(1.0, np.linalg.norm(h)):
        raise ValueError(f"{name} is not Hermitian")
    return 0.5 * (h + dag(h))


# --------------------------------------------------------------------------
# closed systems
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ControlProblem:
    """Bilinear model ``H0 + sum_j u_j(t) H_j`` with piecewise-constant ``u``.

    ``u`` has shape ``(n_controls, n_slices)``; slices have width ``T / n_slices``.
    The trace of ``H0`` is removed on construction.
    """

    H0: np.ndarray
    controls: tuple
    u: np.ndarray
    T: float

    def __post_init__(self):
        h0 = _herm(self.H0, "H0")
        n = h0.shape[0]
        h0 = h0 - np.trace(h0).real / n * np.eye(n)
        ctrls = tuple(_herm(h, f"control {i}") for i, h in enumerate(self.controls))
        if any(c.shape != h0.shape for c in ctrls):
            raise DimensionError("control Hamiltonians must match H0 in dimension")
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        if len(ctrls) == 0:
            u = np.zeros((0, u.shape[-1]))
        if u.shape[0] != len(ctrls):
            raise DimensionError(f"u has {u.shape[0]} rows for {len(ctrls)} controls")
        if u.shape[1] < 1:
            raise ValueError("need at least one time slice")
        if not np.all(np.isfinite(u)):
            raise ValueError("control amplitudes must be finite")
        if not self.T > 0:
            raise ValueError("total time T must be positive")
        object.__setattr__(self, "H0", h0)
        object.__setattr__(self, "controls", ctrls)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "T", float(self.T))

    @property
    def dim(self) -> int:
        return self.H0.shape[0]

    @property
    def n_slices(self) -> int:
        return self.u.shape[1]

    @property
    def dt(self) -> float:
        return self.T / self.n_slices

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_slices + 1)

    def hamiltonian(self, k: int) -> np.ndarray:
        h = self.H0.copy()
        for j, hj in enumerate(self.controls):
            h = h + self.u[j, k] * hj
        return h

    def with_controls(self, u) -> "ControlProblem":
        return ControlProblem(self.H0, self.controls, u, self.T)


def slice_unitaries(cp: ControlProblem) -> np.ndarray:
    return np.array([expm(-1j * cp.hamiltonian(k) * cp.dt) for k in range(cp.n_slices)])


def propagator(cp: ControlProblem) -> np.ndarray:
    """Time-ordered propagator sampled at every slice boundary, shape (n+1, N, N)."""
    us = np.empty((cp.n_slices + 1, cp.dim, cp.dim), dtype=complex)
    us[0] = np.eye(cp.dim)
    for k, uk in enumerate(slice_unitaries(cp)):
        us[k + 1] = uk @ us[k]
    return us


def propagator_at(cp: ControlProblem, t: float) -> np.ndarray:
    if not 0.0 <= t <= cp.T * (1 + 1e-12):
        raise ValueError(f"t={t} outside [0, {cp.T}]")
    k = min(int(np.floor(t / cp.dt + 1e-12)), cp.n_slices)
    u = np.eye(cp.dim, dtype=complex)
    for j in range(k):
        u = expm(-1j * cp.hamiltonian(j) * cp.dt) @ u
    tau = t - k * cp.dt
    if k < cp.n_slices and tau > 0:
        u = expm(-1j * cp.hamiltonian(k) * tau) @ u
    return u


def propagate_state(cp: ControlProblem, psi0) -> np.ndarray:
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (cp.dim,):
        raise DimensionError(f"initial state shape {psi0.shape} != ({cp.dim},)")
    out = np.empty((cp.n_slices + 1, cp.dim), dtype=complex)
    out[0] = psi0
    for k, uk in enumerate(slice_unitaries(cp)):
        out[k + 1] = uk @ out[k]
    return out


def evolve_liouville(cp: ControlProblem, rho0) -> np.ndarray:
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (cp.dim, cp.dim):
        raise DimensionError(f"initial state shape {rho0.shape} != ({cp.dim}, {cp.dim})")
    us = propagator(cp)
    return us @ rho0 @ dag(us)


def heisenberg_expectation(cp: ControlProblem, rho0, y, t: float) -> float:
    """``tr(U(t)^dagger Y U(t) rho0)``: the observable evolves, the state is fixed."""
    u = propagator_at(cp, t)
    y_t = dag(u) @ as_matrix(y) @ u
    return float(np.real(np.trace(y_t @ np.asarray(rho0))))


def bloch_generator(h) -> np.ndarray:
    """Real 3x3 generator ``B_H`` with ``d(bloch)/dt = B_H bloch`` for ``-i[H, rho]``."""
    h = _herm(h, "H")
    if h.shape != (2, 2):
        raise DimensionError("Bloch generator needs a 2x2 Hamiltonian")
    if abs(np.trace(h)) > ATOL * max(1.0, np.linalg.norm(h)):
        raise ValueError("Bloch generator needs a traceless Hamiltonian")
    coeffs = [np.real(np.trace(h @ s)) / 2 for s in (SIGMA_X, SIGMA_Y, SIGMA_Z)]
    return sum(c * BLOCH_BASIS[k] for c, k in zip(coeffs, "xyz"))


def bipartite_hamiltonian(hs, he, couplings=(), check_hermitian: bool = True) -> np.ndarray:
    """``HS (x) I + I (x) HE + sum_k S_k (x) E_k``."""
    hs = as_matrix(hs)
    he = as_matrix(he)
    ns, ne = hs.shape[0], he.shape[0]
    h = np.kron(hs, np.eye(ne)) + np.kron(np.eye(ns), he)
    for k, (s, e) in enumerate(couplings):
        s, e = as_matrix(s), as_matrix(e)
        if s.shape != (ns, ns) or e.shape != (ne, ne):
            raise DimensionError(f"coupling {k} has dimensions {s.shape}, {e.shape}")
        if check_hermitian and (np.linalg.norm(s - dag(s)) > ATOL or np.linalg.norm(e - dag(e)) > ATOL):
            raise ValueError(f"coupling {k} factors are not Hermitian")
        h = h + np.kron(s, e)
    return h


# --------------------------------------------------------------------------
# Markovian master equations
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LindbladModel:
    """Generator ``-i[H, rho] + sum_k D(L_k, rho)``.

    Built either from explicit noise operators or, via :meth:`from_gks`,
    from a GKS coefficient matrix in a traceless Hermitian basis. In the
    latter case ``noise_ops`` holds the eigen-decomposed equivalent and the
    original ``(A, basis)`` is kept in ``gks``.
    """

    H: np.ndarray
    noise_ops: tuple = ()
    gks: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        h = _herm(self.H, "H")
        ops = tuple(np.asarray(as_matrix(l), dtype=complex) for l in self.noise_ops)
        if any(l.shape != h.shape for l in ops):
            raise DimensionError("noise operators must match H in dimension")
        object.__setattr__(self, "H", h)
        object.__setattr__(self, "noise_ops", ops)

    @classmethod
    def from_gks(cls, h, a, basis: OperatorBasis | None = None) -> "LindbladModel":
        h = as_matrix(h)
        basis = basis or gell_mann_basis(h.shape[0])
        a = np.asarray(a, dtype=complex)
        ops = gks_to_lindblad(a, basis)
        return cls(h, tuple(ops), (a, basis))

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    def generator(self, rho) -> np.ndarray:
        out = -1j * (self.H @ rho - rho @ self.H)
        for l in self.noise_ops:
            out = out + dissipator(l, rho)
        return out

    def with_hamiltonian(self, h) -> "LindbladModel":
        return LindbladModel(h, self.noise_ops)


def dissipator(l, rho) -> np.ndarray:
    ld = dag(l)
    ldl = ld @ l
    return l @ rho @ ld - 0.5 * (ldl @ rho + rho @ ldl)


def hamiltonian_superop(h) -> np.ndarray:
    h = np.asarray(h, dtype=complex)
    i = np.eye(h.shape[0])
    return -1j * (np.kron(i, h) - np.kron(h.T, i))


def dissipator_superop(l) -> np.ndarray:
    l = np.asarray(l, dtype=complex)
    i = np.eye(l.shape[0])
    ldl = dag(l) @ l
    return np.kron(l.conj(), l) - 0.5 * (np.kron(i, ldl) + np.kron(ldl.T, i))


def lindblad_superop(model: LindbladModel) -> np.ndarray:
    s = hamiltonian_superop(model.H)
    for l in model.noise_ops:
        s = s + dissipator_superop(l)
    return s


def gks_superop(h, a, basis: OperatorBasis) -> np.ndarray:
    """Superoperator straight from the GKS form (no eigen-decomposition).

    Uses ``sum_kl a_kl (l_k rho l_l - 1/2 {l_l l_k, rho})``, the
    trace-preserving index order.
    """
    a = np.asarray(a, dtype=complex)
    lam = basis.elements
    n = basis.dim
    i = np.eye(n)
    s = hamiltonian_superop(h)
    for k in range(len(lam)):
        for l in range(len(lam)):
            if a[k, l] == 0:
                continue
            prod = lam[l] @ lam[k]
            s = s + a[k, l] * (
                np.kron(lam[l].conj(), lam[k]) - 0.5 * (np.kron(i, prod) + np.kron(prod.T, i))
            )
    return s


def gks_to_lindblad(a, basis: OperatorBasis, atol: float = ATOL) -> list[np.ndarray]:
    """Noise operators ``L_k = sqrt(d_k) sum_l V_lk l_l`` from ``A = V D V^dagger``."""
    a = np.asarray(a, dtype=complex)
    m = len(basis)
    if a.shape != (m, m):
        raise DimensionError(f"GKS matrix must be {m}x{m}, got {a.shape}")
    if np.linalg.norm(a - dag(a)) > atol * max(1.0, np.linalg.norm(a)):
        raise ValueError("GKS matrix is not Hermitian")
    d, v = np.linalg.eigh(0.5 * (a + dag(a)))
    if d.min() < -atol * max(1.0, np.abs(d).max()):
        raise ValueError(f"GKS matrix is not positive semidefinite (eigenvalue {d.min():.3e})")
    ops = []
    for k in range(m):
        if d[k] > atol * max(1.0, np.abs(d).max()):
            ops.append(np.sqrt(d[k]) * np.einsum("l,lij->ij", v[:, k], basis.elements))
    return ops


def canonicalize(model: LindbladModel) -> LindbladModel:
    """Make every noise operator traceless, moving the difference into H.

    ``D(L + cI) = D(L) - i[(i/2)(c* L - c L^dagger), .]``; also removes
    the trace of H. The generator is unchanged.
    """
    n = model.dim
    h = model.H - np.trace(model.H).real / n * np.eye(n)
    ops = []
    for l in model.noise_ops:
        c = np.trace(l) / n
        l0 = l - c * np.eye(n)
        h = h + 0.5j * (np.conj(c) * l0 - c * dag(l0))
        ops.append(l0)
    return LindbladModel(h, tuple(ops))


def mme_propagate(model: LindbladModel, rho0, T: float, n_steps: int, method: str = "auto"):
    """Propagate the master equation; returns ``(times, states)``.

    ``method='expm'`` exponentiates the N^2 x N^2 superoperator once per
    step size; ``'rk4'`` integrates the matrix ODE. ``'auto'`` picks expm
    for N <= 8.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    n = model.dim
    if rho0.shape != (n, n):
        raise DimensionError(f"initial state shape {rho0.shape} != ({n}, {n})")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    times = np.linspace(0.0, T, n_steps + 1)
    dt = T / n_steps
    states = np.empty((n_steps + 1, n, n), dtype=complex)
    states[0] = rho0
    if method == "auto":
        method = "expm" if n <= 8 else "rk4"
    if method == "expm":
        step = expm(lindblad_superop(model) * dt)
        v = vec(rho0)
        for k in range(n_steps):
            v = step @ v
            states[k + 1] = unvec(v, n)
    elif method == "rk4":
        f = model.generator
        rho = rho0
        for k in range(n_steps):
            k1 = f(rho)
            k2 = f(rho + 0.5 * dt * k1)
            k3 = f(rho + 0.5 * dt * k2)
            k4 = f(rho + dt * k3)
            rho = rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            states[k + 1] = rho
    else:
        raise ValueError(f"unknown method {method!r}")
    return times, states


def mme_propagate_controlled(model: LindbladModel, controls, u, T: float, rho0):
    """Master equation with piecewise-constant Hamiltonian controls.

    ``u`` has shape ``(n_controls, n_slices)``; returns states at slice boundaries.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    controls = [as_matrix(c) for c in controls]
    if u.shape[0] != len(controls):
        raise DimensionError("u rows must match the number of controls")
    n = model.dim
    n_slices = u.shape[1]
    dt = T / n_slices
    base = lindblad_superop(model)
    ctrl_sup = [hamiltonian_superop(c) for c in controls]
    times = np.linspace(0.0, T, n_slices + 1)
    states = np.empty((n_slices + 1, n, n), dtype=complex)
    states[0] = rho0
    v = vec(np.asarray(rho0, dtype=complex))
    for k in range(n_slices):
        gen = base + sum(u[j, k] * ctrl_sup[j] for j in range(len(controls)))
        v = expm(gen * dt) @ v
        states[k + 1] = unvec(v, n)
    return times, states


# --------------------------------------------------------------------------
# coherence-vector (affine) form
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AffineBlochForm:
    """``d r/dt = M r + g`` with ``M = B + Gamma`` (Hamiltonian + dissipative)."""

    M: np.ndarray
    g: np.ndarray
    B: np.ndarray
    Gamma: np.ndarray

    def fixed_point(self) -> np.ndarray:
        return -np.linalg.solve(self.M, self.g)

    def rhs(self, r) -> np.ndarray:
        return self.M @ r + self.g


def coherence_affine(model: LindbladModel, basis: OperatorBasis | None = None,
                     scale: float = 1.0) -> AffineBlochForm:
    """Affine coherence-vector form of the generator in ``basis``.

    Coordinates are ``scale * tr(l_k rho)``; ``scale = basis.bloch_scale``
    gives the Pauli-normalized Bloch convention.
    """
    n = model.dim
    basis = basis or gell_mann_basis(n)
    if basis.dim != n:
        raise DimensionError("basis and model dimensions differ")
    lam = basis.elements
    ham = LindbladModel(model.H)
    m = np.array([coherence_vector(model.generator(lk), basis) for lk in lam]).T
    b = np.array([coherence_vector(ham.generator(lk), basis) for lk in lam]).T
    g = scale * coherence_vector(model.generator(np.eye(n) / n), basis)
    return AffineBlochForm(m, g, b, m - b)


def bloch_affine(model: LindbladModel) -> AffineBlochForm:
    if model.dim != 2:
        raise DimensionError("Bloch affine form is defined for two-level models")
    basis = pauli_basis()
    return coherence_affine(model, basis, basis.bloch_scale)


# --------------------------------------------------------------------------
# standard qubit models
# --------------------------------------------------------------------------

def decay_model(gamma: float, delta: float = 0.0) -> LindbladModel:
    """Two-level atom with decay ``|1> -> |0>`` at rate ``gamma``."""
    return LindbladModel(delta * SIGMA_Z, (np.sqrt(gamma) * SIGMA_PLUS,))


def unital_qubit_model(h, gammas) -> LindbladModel:
    """Pauli-channel model whose Bloch dissipation is ``-diag(gammas)``.

    Requires the Pauli rates ``c = (-g1+g2+g3, g1-g2+g3, g1+g2-g3)/4`` to be
    nonnegative (complete positivity).
    """
    g1, g2, g3 = (float(g) for g in gammas)
    rates = np.array([-g1 + g2 + g3, g1 - g2 + g3, g1 + g2 - g3]) / 4.0
    if rates.min() < -ATOL:
        raise ValueError(f"decay rates {gammas} are not completely positive")
    ops = tuple(np.sqrt(max(c, 0.0)) * s for c, s in zip(rates, (SIGMA_X, SIGMA_Y, SIGMA_Z)) if c > ATOL)
    return LindbladModel(as_matrix(h), ops)
