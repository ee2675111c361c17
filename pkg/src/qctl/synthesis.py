"""Open-loop control design: Lyapunov tracking, GRAPE and dynamical decoupling."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .core import ATOL, DimensionError, as_matrix, dag, fidelity, partial_trace
from .dynamics import ControlProblem, bipartite_hamiltonian


def _comm(a, b):
    return a @ b - b @ a


# --------------------------------------------------------------------------
# Lyapunov design
# --------------------------------------------------------------------------

def lyapunov_value(rho, rho_d) -> float | np.ndarray:
    """``V = 1/2 ||rho_d - rho||_F^2``; batched over leading axes."""
    d = np.asarray(rho) - np.asarray(rho_d)
    return 0.5 * np.real(np.einsum("...ij,...ij->...", d.conj(), d))


def lyapunov_control(rho, rho_d, h1, gain: float = 1.0):
    """``u = -gain * tr([-iH1, rho_d] rho)``; batched over leading axes of ``rho``."""
    c = -1j * _comm(as_matrix(h1), np.asarray(rho_d))
    return -gain * np.real(np.einsum("ij,...ji->...", c, np.asarray(rho)))


@dataclass(frozen=True, eq=False)
class LyapunovDesign:
    rho_d: np.ndarray
    H0: np.ndarray
    H1: np.ndarray
    gain: float = 1.0

    def __post_init__(self):
        rd = np.asarray(self.rho_d, dtype=complex)
        h0 = np.asarray(as_matrix(self.H0), dtype=complex)
        h1 = np.asarray(as_matrix(self.H1), dtype=complex)
        if not (rd.shape == h0.shape == h1.shape):
            raise DimensionError("rho_d, H0 and H1 must share one dimension")
        if not self.gain > 0:
            raise ValueError("gain must be positive")
        if np.linalg.norm(_comm(h0, rd)) > 1e-8:
            raise ValueError("rho_d must commute with H0")
        object.__setattr__(self, "rho_d", rd)
        object.__setattr__(self, "H0", h0)
        object.__setattr__(self, "H1", h1)
        object.__setattr__(self, "gain", float(self.gain))

    def control(self, rho):
        return lyapunov_control(rho, self.rho_d, self.H1, self.gain)

    def vector_field(self, rho) -> np.ndarray:
        u = np.asarray(self.control(rho))[..., None, None]
        h = self.H0 + u * self.H1
        return -1j * (h @ rho - rho @ h)


def _orbit_dimension(rho_d: np.ndarray, tol: float = 1e-8) -> int:
    e = np.sort(np.linalg.eigvalsh(rho_d))
    groups = [1]
    for a, b in zip(e[:-1], e[1:]):
        if b - a > tol:
            groups.append(1)
        else:
            groups[-1] += 1
    n = len(e)
    return n * n - sum(m * m for m in groups)


def lyapunov_rank_condition(h0, h1, rho_d, l_max: int | None = None, tol: float = 1e-9):
    """Kalman-like test ``dim span(ad^l_{-iH0} [-iH1, rho_d]) = dim T_{rho_d}``.

    Returns ``(holds, achieved_dim, tangent_dim)``.
    """
    h0 = np.asarray(as_matrix(h0), dtype=complex)
    h1 = np.asarray(as_matrix(h1), dtype=complex)
    rd = np.asarray(rho_d, dtype=complex)
    n = h0.shape[0]
    l_max = n * n if l_max is None else l_max
    a = -1j * h0
    x = _comm(-1j * h1, rd)
    vecs = []
    for _ in range(l_max + 1):
        vecs.append(np.concatenate([x.real.ravel(), x.imag.ravel()]))
        x = _comm(a, x)
    mat = np.array(vecs)
    s = np.linalg.svd(mat, compute_uv=False)
    rank = int(np.sum(s > tol * max(s[0], 1e-300))) if s[0] > 1e-14 else 0
    target = _orbit_dimension(rd)
    return rank == target, rank, target


@dataclass(frozen=True, eq=False)
class LyapunovTrajectory:
    times: np.ndarray
    states: np.ndarray  # (n_steps+1, [batch,] N, N)
    u: np.ndarray
    V: np.ndarray


def lyapunov_simulate(design: LyapunovDesign, rho0, T: float, n_steps: int) -> LyapunovTrajectory:
    """RK4 integration of the closed loop; ``rho0`` may carry a batch axis."""
    rho = np.asarray(rho0, dtype=complex)
    if rho.shape[-2:] != design.rho_d.shape:
        raise DimensionError("initial state dimension mismatch")
    spec0 = np.sort(np.linalg.eigvalsh(rho), axis=-1)
    spec_d = np.sort(np.linalg.eigvalsh(design.rho_d))
    if np.abs(spec0 - spec_d).max() > 1e-6:
        warnings.warn("initial state is not isospectral with the target", stacklevel=2)
    dt = T / n_steps
    f = design.vector_field
    states = np.empty((n_steps + 1,) + rho.shape, dtype=complex)
    states[0] = rho
    for k in range(n_steps):
        k1 = f(rho)
        k2 = f(rho + 0.5 * dt * k1)
        k3 = f(rho + 0.5 * dt * k2)
        k4 = f(rho + dt * k3)
        rho = rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        states[k + 1] = rho
    times = np.linspace(0.0, T, n_steps + 1)
    return LyapunovTrajectory(times, states, design.control(states), lyapunov_value(states, design.rho_d))


# --------------------------------------------------------------------------
# GRAPE
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GrapeProblem:
    """Gradient-ascent problem on a piecewise-constant control grid.

    Exactly one of ``M`` (state transfer from ``psi0``, maximize
    ``<psi(T)|M|psi(T)>``) or ``target`` (gate fidelity
    ``|tr(W^dagger U(T))|^2 / N^2``) is set. The fluence penalty is
    ``fluence_weight * sum(u**2)``; set the weight to ``dt`` for the
    time integral of ``u^2``.
    """

    cp: ControlProblem
    psi0: np.ndarray | None = None
    M: np.ndarray | None = None
    target: np.ndarray | None = None
    fluence_weight: float = 0.0
    max_iters: int = 200
    gtol: float = 1e-6
    armijo_c: float = 1e-4
    shrink: float = 0.5
    initial_step: float = 1.0
    u_max: float | None = None

    def __post_init__(self):
        if (self.M is None) == (self.target is None):
            raise ValueError("set exactly one of M or target")
        if self.M is not None:
            if self.psi0 is None:
                raise ValueError("state transfer needs psi0")
            object.__setattr__(self, "M", np.asarray(as_matrix(self.M), dtype=complex))
            psi0 = np.asarray(self.psi0, dtype=complex)
            if psi0.shape != (self.cp.dim,):
                raise DimensionError("psi0 dimension mismatch")
            object.__setattr__(self, "psi0", psi0)
        else:
            object.__setattr__(self, "target", np.asarray(self.target, dtype=complex))
        if self.fluence_weight < 0:
            raise ValueError("fluence_weight must be nonnegative")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")

    @property
    def kind(self) -> str:
        return "state" if self.M is not None else "unitary"


def _slice_hamiltonian(cp: ControlProblem, u: np.ndarray, k: int) -> np.ndarray:
    return cp.H0 + sum(u[j, k] * cp.controls[j] for j in range(len(cp.controls)))


def _slice_data(cp: ControlProblem, u: np.ndarray):
    """Per-slice propagators and their derivatives w.r.t. each control amplitude."""
    n = cp.dim
    dt = cp.dt
    n_ctrl = len(cp.controls)
    us = np.empty((cp.n_slices, n, n), dtype=complex)
    dus = np.empty((cp.n_slices, n_ctrl, n, n), dtype=complex)
    big = np.zeros((2 * n, 2 * n), dtype=complex)
    for k in range(cp.n_slices):
        a = -1j * _slice_hamiltonian(cp, u, k) * dt
        if n_ctrl == 0:
            us[k] = expm(a)
        for j in range(n_ctrl):
            # exp([[A, E], [0, A]]) = [[e^A, D e^A[E]], [0, e^A]]
            big[:n, :n] = a
            big[n:, n:] = a
            big[:n, n:] = -1j * cp.controls[j] * dt
            e = expm(big)
            us[k] = e[:n, :n]
            dus[k, j] = e[:n, n:]
    return us, dus


def _objective(problem: GrapeProblem, u: np.ndarray, us=None) -> tuple[float, float]:
    cp = problem.cp
    if us is None:
        us = [expm(-1j * _slice_hamiltonian(cp, u, k) * cp.dt) for k in range(cp.n_slices)]
    if problem.kind == "state":
        psi = problem.psi0
        for uk in us:
            psi = uk @ psi
        fig = float(np.real(np.vdot(psi, problem.M @ psi)))
    else:
        utot = np.eye(cp.dim, dtype=complex)
        for uk in us:
            utot = uk @ utot
        fig = float(abs(np.trace(dag(problem.target) @ utot)) ** 2 / cp.dim ** 2)
    return fig - problem.fluence_weight * float(np.sum(u * u)), fig


def grape_objective(problem: GrapeProblem, u=None) -> float:
    u = problem.cp.u if u is None else np.atleast_2d(np.asarray(u, dtype=float))
    return _objective(problem, u)[0]


def grape_gradient(problem: GrapeProblem, u=None) -> np.ndarray:
    """Exact gradient ``dJ/du`` of shape ``(n_controls, n_slices)``.

    Forward states and backward costates (``chi(T) = M psi(T)``) are
    combined with the exact derivative of each slice exponential.
    """
    cp = problem.cp
    u = cp.u if u is None else np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape != cp.u.shape:
        raise DimensionError(f"u must have shape {cp.u.shape}")
    us, dus = _slice_data(cp, u)
    n_s = cp.n_slices
    grad = np.zeros_like(u)
    if problem.kind == "state":
        fwd = [problem.psi0]
        for uk in us:
            fwd.append(uk @ fwd[-1])
        chi = problem.M @ fwd[-1]
        for k in range(n_s - 1, -1, -1):
            # chi is the costate at the end of slice k
            for j in range(u.shape[0]):
                grad[j, k] = 2.0 * np.real(np.vdot(chi, dus[k, j] @ fwd[k]))
            chi = dag(us[k]) @ chi
    else:
        n = cp.dim
        fwd = [np.eye(n, dtype=complex)]
        for uk in us:
            fwd.append(uk @ fwd[-1])
        z = np.trace(dag(problem.target) @ fwd[-1])
        back = dag(problem.target)  # W^dagger P_k, P_k = U_{n-1} ... U_{k+1}
        for k in range(n_s - 1, -1, -1):
            for j in range(u.shape[0]):
                dz = np.trace(back @ dus[k, j] @ fwd[k])
                grad[j, k] = 2.0 * np.real(np.conj(z) * dz) / n ** 2
            back = back @ us[k]
    return grad - 2.0 * problem.fluence_weight * u


@dataclass(frozen=True, eq=False)
class GrapeResult:
    u: np.ndarray
    J_history: np.ndarray
    figure_of_merit: float
    converged: bool
    iterations: int
    message: str


def grape_optimize(problem: GrapeProblem, u0=None) -> GrapeResult:
    """Gradient ascent with Armijo backtracking; ``J`` never decreases."""
    cp = problem.cp
    u = np.array(cp.u if u0 is None else np.atleast_2d(u0), dtype=float)
    if problem.u_max is not None:
        u = np.clip(u, -problem.u_max, problem.u_max)
    j_cur, fig = _objective(problem, u)
    history = [j_cur]
    converged = False
    message = "max_iters reached"
    it = 0
    for it in range(1, problem.max_iters + 1):
        g = grape_gradient(problem, u)
        gn2 = float(np.sum(g * g))
        if np.sqrt(gn2) < problem.gtol:
            converged = True
            message = "gradient tolerance met"
            it -= 1
            break
        step = problem.initial_step
        accepted = False
        for _ in range(60):
            cand = u + step * g
            if problem.u_max is not None:
                cand = np.clip(cand, -problem.u_max, problem.u_max)
            j_new, fig_new = _objective(problem, cand)
            # projected Armijo condition; equals c * step * |g|^2 without clipping
            if j_new >= j_cur + problem.armijo_c * float(np.sum(g * (cand - u))):
                accepted = True
                break
            step *= problem.shrink
        if not accepted:
            converged = True
            message = "line search stalled"
            it -= 1
            break
        u, j_cur, fig = cand, j_new, fig_new
        history.append(j_cur)
    return GrapeResult(u, np.array(history), fig, converged, len(history) - 1, message)


# --------------------------------------------------------------------------
# dynamical decoupling
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DDProtocol:
    """Ideal pulse sequence cycling through ``group`` with period ``Tc``.

    The control propagator equals ``group[j]`` on slice ``j``; ``group[0]``
    must be the identity so that every cycle closes.
    """

    group: tuple
    Tc: float
    hs: np.ndarray
    he: np.ndarray
    couplings: tuple = ()

    def __post_init__(self):
        grp = tuple(np.asarray(g, dtype=complex) for g in self.group)
        if not grp:
            raise ValueError("group must be nonempty")
        ns = grp[0].shape[0]
        for g in grp:
            if g.shape != (ns, ns) or np.linalg.norm(dag(g) @ g - np.eye(ns)) > ATOL * ns:
                raise ValueError("group elements must be unitary of equal size")
        if np.linalg.norm(grp[0] - np.eye(ns)) > ATOL * ns:
            raise ValueError("group[0] must be the identity")
        if not self.Tc > 0:
            raise ValueError("cycle time must be positive")
        hs = np.asarray(as_matrix(self.hs), dtype=complex)
        he = np.asarray(as_matrix(self.he), dtype=complex)
        if hs.shape != (ns, ns):
            raise DimensionError("system Hamiltonian does not match group dimension")
        cps = tuple((np.asarray(as_matrix(s), dtype=complex), np.asarray(as_matrix(e), dtype=complex))
                    for s, e in self.couplings)
        object.__setattr__(self, "group", grp)
        object.__setattr__(self, "hs", hs)
        object.__setattr__(self, "he", he)
        object.__setattr__(self, "couplings", cps)
        object.__setattr__(self, "Tc", float(self.Tc))

    @property
    def n_g(self) -> int:
        return len(self.group)

    @property
    def dims(self) -> tuple[int, int]:
        return self.hs.shape[0], self.he.shape[0]

    @property
    def dt(self) -> float:
        return self.Tc / self.n_g

    def total_hamiltonian(self, coupled: bool = True) -> np.ndarray:
        return bipartite_hamiltonian(self.hs, self.he, self.couplings if coupled else ())

    def with_cycle(self, tc: float) -> "DDProtocol":
        return DDProtocol(self.group, tc, self.hs, self.he, self.couplings)


def commutant_projection(s, group) -> np.ndarray:
    """Group average ``(1/n_g) sum_j G_j^dagger S G_j``."""
    s = np.asarray(as_matrix(s), dtype=complex)
    return sum(dag(g) @ s @ g for g in group) / len(group)


def dd_average_hamiltonian(protocol: DDProtocol, full: bool = False) -> np.ndarray:
    """First-order average Hamiltonian of the coupling.

    With ``full=True`` the averaged system Hamiltonian and the environment
    Hamiltonian are included, giving the first Magnus term of the whole
    toggling-frame evolution.
    """
    ns, ne = protocol.dims
    out = np.zeros((ns * ne, ns * ne), dtype=complex)
    for s, e in protocol.couplings:
        out += np.kron(commutant_projection(s, protocol.group), e)
    if full:
        out += np.kron(commutant_projection(protocol.hs, protocol.group), np.eye(ne))
        out += np.kron(np.eye(ns), protocol.he)
    return out


def _toggled_cycle(protocol: DDProtocol, coupled: bool = True, decoupled: bool = True) -> np.ndarray:
    ns, ne = protocol.dims
    h = protocol.total_hamiltonian(coupled)
    if not decoupled:
        return expm(-1j * h * protocol.Tc)
    ie = np.eye(ne)
    u = np.eye(ns * ne, dtype=complex)
    for g in protocol.group:
        gg = np.kron(g, ie)
        u = expm(-1j * dag(gg) @ h @ gg * protocol.dt) @ u
    return u


def dd_cycle_propagator(protocol: DDProtocol) -> np.ndarray:
    """Exact joint propagator over one cycle (toggling frame = lab frame at ``Tc``)."""
    return _toggled_cycle(protocol)


@dataclass(frozen=True, eq=False)
class DDResult:
    times: np.ndarray
    fidelity_dd: np.ndarray
    fidelity_free: np.ndarray
    cycles: int


def dd_simulate(protocol: DDProtocol, rho0, T: float) -> DDResult:
    """Reduced-system fidelity at each cycle boundary, with and without DD.

    Each run is compared with the same control setting and the couplings
    switched off.
    """
    k_float = T / protocol.Tc
    k = int(round(k_float))
    if k < 1 or abs(k - k_float) > 1e-9 * max(1.0, k_float):
        raise ValueError(f"T={T} is not a positive multiple of Tc={protocol.Tc}")
    ns, ne = protocol.dims
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (ns * ne, ns * ne):
        raise DimensionError("joint initial state dimension mismatch")
    ops = {
        (c, d): _toggled_cycle(protocol, coupled=c, decoupled=d)
        for c in (True, False) for d in (True, False)
    }
    rhos = {key: rho0 for key in ops}
    fid_dd = [1.0]
    fid_free = [1.0]
    for _ in range(k):
        for key, u in ops.items():
            rhos[key] = u @ rhos[key] @ dag(u)
        red = {key: partial_trace(r, [ns, ne], 0) for key, r in rhos.items()}
        fid_dd.append(fidelity(red[(True, True)], red[(False, True)]))
        fid_free.append(fidelity(red[(True, False)], red[(False, False)]))
    times = protocol.Tc * np.arange(k + 1)
    return DDResult(times, np.array(fid_dd), np.array(fid_free), k)
