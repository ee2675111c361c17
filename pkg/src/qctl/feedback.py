"""Measurement-based feedback.

Covers the Markovian feedback master equation with constructive pure-state
stabilization, and diffusive stochastic master equation (SME) trajectories
under state-feedback laws.

SME trajectories run in a compiled kernel when it is available and in a
vectorized numpy fallback otherwise. Set ``QCTL_PURE_PYTHON=1`` to force
the fallback; ``QCTL_THREADS`` caps the number of worker threads used for
ensembles.
"""
from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _sme_py
from .core import (
    ATOL,
    SIGMA_X,
    SIGMA_Z,
    DimensionError,
    NumericalError,
    as_matrix,
    bloch_from_density,
    dag,
    density_matrix,
    purity,
)
from .dynamics import LindbladModel
from .analysis import gas_check

try:
    if os.environ.get("QCTL_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python backend requested")
    from . import _sme_kernel
except ImportError:
    _sme_kernel = None

BACKENDS = ("compiled", "python")
DEFAULT_BACKEND = "compiled" if _sme_kernel is not None else "python"


class SynthesisError(RuntimeError):
    """Feedback synthesis failed; ``diagnostic`` holds the details."""

    def __init__(self, message: str, diagnostic: dict | None = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


# --------------------------------------------------------------------------
# feedback master equation
# --------------------------------------------------------------------------

def _hermitian(x, name: str) -> np.ndarray:
    x = np.asarray(as_matrix(x), dtype=complex)
    if np.linalg.norm(x - dag(x)) > ATOL * max(1.0, np.linalg.norm(x)):
        raise ValueError(f"{name} must be Hermitian")
    return 0.5 * (x + dag(x))


def fme_closed_loop(h, l, f, hc=None) -> LindbladModel:
    """Average closed loop under output feedback ``F dY``.

    Noise operator ``L - iF`` and Hamiltonian ``H + Hc + (FL + L^dagger F)/2``.
    """
    h = _hermitian(h, "H")
    l = np.asarray(as_matrix(l), dtype=complex)
    f = _hermitian(f, "F")
    hc = np.zeros_like(h) if hc is None else _hermitian(hc, "Hc")
    if not (h.shape == l.shape == f.shape == hc.shape):
        raise DimensionError("H, L, F and Hc must share one dimension")
    htot = h + hc + 0.5 * (f @ l + dag(l) @ f)
    return LindbladModel(htot, (l - 1j * f,))


def _pure_vector(rho_d, tol: float = ATOL) -> np.ndarray:
    rho_d = np.asarray(rho_d, dtype=complex)
    if rho_d.ndim == 1:
        return rho_d / np.linalg.norm(rho_d)
    rho_d = density_matrix(rho_d)
    if abs(purity(rho_d) - 1.0) > max(tol, 1e-9):
        raise ValueError("target state must be pure")
    w, v = np.linalg.eigh(rho_d)
    return v[:, -1]


def stabilizable(rho_d, l, tol: float = 1e-8) -> bool:
    """Pure target reachable as a GAS state by output feedback iff ``[rho_d, L + L^dagger] != 0``."""
    psi = _pure_vector(rho_d)
    p = np.outer(psi, psi.conj())
    l = np.asarray(as_matrix(l), dtype=complex)
    x = l + dag(l)
    return bool(np.linalg.norm(p @ x - x @ p) > tol)


def _householder(psi: np.ndarray) -> np.ndarray:
    """Hermitian unitary mapping ``e_1`` to ``psi`` (up to a global phase) and back."""
    n = len(psi)
    phase = psi[0] / abs(psi[0]) if abs(psi[0]) > 1e-15 else 1.0
    target = psi / phase
    e1 = np.zeros(n, dtype=complex)
    e1[0] = 1.0
    w = e1 - target
    nw = np.vdot(w, w).real
    if nw < 1e-28:
        return np.eye(n, dtype=complex)
    return np.eye(n) - 2.0 * np.outer(w, w.conj()) / nw


@dataclass(frozen=True, eq=False)
class FeedbackDesign:
    F: np.ndarray
    Hc: np.ndarray
    model: LindbladModel
    steady_state: np.ndarray
    basis: np.ndarray
    r_block_coupling: bool = False


def synthesize_feedback(rho_d, l, h, tol: float = 1e-6) -> FeedbackDesign:
    """Construct ``F`` and ``Hc`` that make the pure ``rho_d`` globally attractive.

    Works in a basis where ``rho_d = e_1 e_1^dagger`` (exact Householder
    reflection): sets ``F_Q = -i L_Q`` and ``F_P = i L_Q^dagger`` so that the
    closed-loop noise operator has no ``Q`` block, then picks ``Hc_P`` so
    that ``i (H_tot)_P - 1/2 conj(l_S) l_P = 0``. If the remaining block
    still carries a second steady state, a chain Hamiltonian is added there.
    The result is certified with :func:`qctl.analysis.gas_check`.
    """
    psi = _pure_vector(rho_d)
    l = np.asarray(as_matrix(l), dtype=complex)
    h = _hermitian(h, "H")
    n = len(psi)
    if l.shape != (n, n) or h.shape != (n, n):
        raise DimensionError("rho_d, L and H must share one dimension")
    if not stabilizable(psi, l):
        raise SynthesisError("target is not stabilizable: [rho_d, L + L^dagger] = 0")
    q = _householder(psi)
    lt = q @ l @ q
    ht = q @ h @ q
    ft = np.zeros((n, n), dtype=complex)
    ft[1:, 0] = -1j * lt[1:, 0]
    ft[0, 1:] = np.conj(ft[1:, 0])
    lhat = lt - 1j * ft
    corr = ht + 0.5 * (ft @ lt + dag(lt) @ ft)
    hct = np.zeros((n, n), dtype=complex)
    hct[0, 1:] = -0.5j * np.conj(lhat[0, 0]) * lhat[0, 1:] - corr[0, 1:]
    hct[1:, 0] = np.conj(hct[0, 1:])

    target = np.zeros((n, n), dtype=complex)
    target[0, 0] = 1.0

    def certify(hc_rot):
        model = fme_closed_loop(ht, lt, ft, hc_rot)
        verdict = gas_check(model)
        ok = verdict.gas and np.linalg.norm(verdict.state - target) <= tol
        return ok, verdict

    ok, verdict = certify(hct)
    used_chain = False
    if not ok and n >= 3:
        # mix the remaining block through a chain that starts at the decay direction
        start = np.conj(lhat[0, 1:])
        start = start / np.linalg.norm(start)
        basis_r, _ = np.linalg.qr(np.column_stack([start, np.eye(n - 1)]))
        basis_r = basis_r[:, : n - 1]
        chain = np.diag(np.ones(n - 2), 1)
        chain = chain + chain.T
        hr = basis_r @ chain @ dag(basis_r)
        scale = max(1.0, float(np.linalg.norm(ht, 2)))
        for amp in (1.0, 2.0, 0.5, 4.0):
            trial = hct.copy()
            trial[1:, 1:] += amp * scale * hr
            ok, verdict = certify(trial)
            if ok:
                hct = trial
                used_chain = True
                break
    if not ok:
        raise SynthesisError(
            "closed loop does not have the target as its unique steady state",
            {"verdict": verdict.verdict, "kernel_dim": verdict.kernel_dim},
        )
    f = q @ ft @ q
    hc = q @ hct @ q
    f = 0.5 * (f + dag(f))
    hc = 0.5 * (hc + dag(hc))
    model = fme_closed_loop(h, l, f, hc)
    final = gas_check(model)
    return FeedbackDesign(f, hc, model, final.state, q, used_chain)


# --------------------------------------------------------------------------
# spin operators and feedback laws
# --------------------------------------------------------------------------

def spin_raising(n: int) -> np.ndarray:
    """``F_+`` for spin ``j = (n - 1)/2`` in the basis ``m = j, j-1, ..., -j``."""
    if n < 2:
        raise ValueError("spin operators need N >= 2")
    j = (n - 1) / 2.0
    m = j - np.arange(n)
    fp = np.zeros((n, n), dtype=complex)
    for k in range(1, n):
        # F_+ |m> = sqrt(j(j+1) - m(m+1)) |m+1>
        fp[k - 1, k] = np.sqrt(j * (j + 1) - m[k] * (m[k] + 1))
    return fp


def spin_operators(n: int) -> tuple[np.ndarray, np.ndarray]:
    """``(F_y, F_z)`` for spin ``j = (n - 1)/2`` with ``F_z = diag(j, ..., -j)``."""
    fp = spin_raising(n)
    j = (n - 1) / 2.0
    fz = np.diag(j - np.arange(n)).astype(complex)
    fy = (fp - dag(fp)) / 2j
    return fy, fz


@dataclass(frozen=True, eq=False)
class ConstantLaw:
    u: float = 0.0
    name: str = "none"

    def __call__(self, rho) -> float:
        return float(self.u)


@dataclass(frozen=True, eq=False)
class LinearLaw:
    """``u = c0 + Re tr(K rho)``."""

    c0: float
    K: np.ndarray
    name: str = "linear"

    def __call__(self, rho) -> float:
        return float(self.c0 + np.real(np.trace(self.K @ rho)))


def affine_bloch_law(rho) -> float:
    """``u = -(1 + z)/2 + 2x`` on the Bloch vector of a qubit state."""
    x, _, z = bloch_from_density(rho)
    return -0.5 * (1.0 + z) + 2.0 * x


def affine_law() -> LinearLaw:
    return LinearLaw(-0.5, 2.0 * SIGMA_X - 0.5 * SIGMA_Z, "affine_bloch")


def lyapunov_law(h1, rho_d, gain: float = 1.0) -> LinearLaw:
    """``u = -gain tr([-iH1, rho_d] rho)`` written as ``Re tr(K rho)``."""
    h1 = np.asarray(as_matrix(h1), dtype=complex)
    rho_d = np.asarray(rho_d, dtype=complex)
    return LinearLaw(0.0, 1j * gain * (h1 @ rho_d - rho_d @ h1), "lyapunov")


@dataclass(frozen=True, eq=False)
class PatchedLawConfig:
    """Switching law around the eigenstate ``rho_d`` of ``F_z``.

    ``hysteresis_state`` is ``"lyapunov"`` if the overlap last crossed
    ``gamma`` from below and ``"constant"`` otherwise.
    """

    rho_d: np.ndarray
    F_y: np.ndarray
    gamma: float = 0.45
    u_const: float = 1.0
    hysteresis_state: str = "constant"

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.hysteresis_state not in ("lyapunov", "constant"):
            raise ValueError("hysteresis_state must be 'lyapunov' or 'constant'")
        object.__setattr__(self, "rho_d", np.asarray(self.rho_d, dtype=complex))
        object.__setattr__(self, "F_y", np.asarray(as_matrix(self.F_y), dtype=complex))

    @property
    def K(self) -> np.ndarray:
        # -tr(i[F_y, rho] rho_d) = tr(rho * i[F_y, rho_d])
        return 1j * (self.F_y @ self.rho_d - self.rho_d @ self.F_y)

    @property
    def name(self) -> str:
        return "patched"


def patched_law(rho, config: PatchedLawConfig) -> tuple[float, PatchedLawConfig]:
    """Evaluate the switching law and return the updated hysteresis memory."""
    rho = np.asarray(rho, dtype=complex)
    ov = float(np.real(np.trace(rho @ config.rho_d)))
    state = config.hysteresis_state
    if ov >= config.gamma:
        state = "lyapunov"
    elif ov <= 0.5 * config.gamma:
        state = "constant"
    if state == "lyapunov":
        u = float(np.real(np.trace(config.K @ rho)))
    else:
        u = float(config.u_const)
    if state != config.hysteresis_state:
        config = replace(config, hysteresis_state=state)
    return u, config


def _encode_law(law, n: int):
    zero = np.zeros((n, n), dtype=complex)
    if law is None:
        return 0, 0.0, zero, zero, 0.0, 0.0, 0
    if isinstance(law, ConstantLaw):
        return 0, float(law.u), zero, zero, 0.0, 0.0, 0
    if isinstance(law, LinearLaw):
        return 1, float(law.c0), np.asarray(law.K, dtype=complex), zero, 0.0, 0.0, 0
    if isinstance(law, PatchedLawConfig):
        mode0 = 1 if law.hysteresis_state == "lyapunov" else 0
        return 2, 0.0, law.K, law.rho_d, float(law.gamma), float(law.u_const), mode0
    raise TypeError(f"unsupported feedback law {law!r}")


# --------------------------------------------------------------------------
# SME model and trajectories
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SMEModel:
    """Diffusive SME with Hamiltonian ``H0 + u H1`` and measurement operator ``L``."""

    H0: np.ndarray
    L: np.ndarray
    H1: np.ndarray | None = None
    eta: float = 1.0
    law: object = None

    def __post_init__(self):
        h0 = _hermitian(self.H0, "H0")
        l = np.asarray(as_matrix(self.L), dtype=complex)
        h1 = np.zeros_like(h0) if self.H1 is None else _hermitian(self.H1, "H1")
        if not (h0.shape == l.shape == h1.shape):
            raise DimensionError("H0, H1 and L must share one dimension")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        object.__setattr__(self, "H0", h0)
        object.__setattr__(self, "L", l)
        object.__setattr__(self, "H1", h1)
        object.__setattr__(self, "eta", float(self.eta))
        _encode_law(self.law, h0.shape[0])

    @property
    def dim(self) -> int:
        return self.H0.shape[0]

    def averaged_model(self, u: float = 0.0) -> LindbladModel:
        """Master equation obtained by averaging the noise at fixed control ``u``."""
        return LindbladModel(self.H0 + u * self.H1, (self.L,))

    def drift(self, rho, u: float = 0.0) -> np.ndarray:
        return self.averaged_model(u).generator(rho)

    def diffusion(self, rho) -> np.ndarray:
        lr = self.L @ rho
        tr = np.trace(lr + dag(lr)).real
        return lr + dag(lr) - tr * rho

    def max_stable_dt(self) -> float:
        scale = max(np.linalg.norm(self.H0, 2), np.linalg.norm(self.H1, 2),
                    np.linalg.norm(self.L, 2) ** 2, 1e-300)
        return 1e-2 / scale

    def with_law(self, law) -> "SMEModel":
        return replace(self, law=law)


def sme_step(model: SMEModel, rho, u: float, dw: float, dt: float):
    """One Euler-Maruyama step followed by projection onto density matrices.

    Returns ``(rho', dY, clipped)``; ``dY`` uses the state at the start of the step.
    """
    rho = np.asarray(rho, dtype=complex)
    lr = model.L @ rho
    tr = float(np.trace(lr + dag(lr)).real)
    dy = np.sqrt(model.eta) * tr * dt + dw
    new = rho + model.drift(rho, u) * dt + np.sqrt(model.eta) * model.diffusion(rho) * dw
    if not np.all(np.isfinite(new)):
        raise NumericalError("state became non-finite")
    out, events = _sme_py._project(new[None])
    return out[0], float(dy), bool(events[0])


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Seeded per-step record of one SME trajectory.

    ``states[k]`` is the state at ``times[k]`` (every ``record_every``
    steps); ``u``, ``dW`` and ``dY`` have one entry per step, evaluated at
    the start of the step.
    """

    seed: int
    dt: float
    times: np.ndarray
    states: np.ndarray
    u: np.ndarray
    dW: np.ndarray
    dY: np.ndarray
    clip_events: int
    record_every: int
    eta: float
    metadata: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.u)

    def bloch(self) -> np.ndarray:
        if self.states.shape[-1] != 2:
            raise DimensionError("Bloch coordinates need a two-level system")
        return np.array([bloch_from_density(r) for r in self.states])


DY_CONVENTION = "dY = sqrt(eta) * tr((L + L^dagger) rho) * dt + dW"


def wiener_increments(seed: int, n_traj: int, n_steps: int, dt: float) -> np.ndarray:
    """``dW`` for trajectories ``seed + i``; one counter-based stream per trajectory."""
    out = np.empty((n_traj, n_steps))
    for i in range(n_traj):
        gen = np.random.Generator(np.random.Philox(seed + i))
        out[i] = np.sqrt(dt) * gen.standard_normal(n_steps)
    return out


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("QCTL_THREADS", "1")))
    except ValueError:
        return 1


def _run_kernel(model: SMEModel, rho0, dt: float, dw: np.ndarray, record_every: int,
                backend: str | None = None, threads: int | None = None):
    backend = backend or DEFAULT_BACKEND
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}")
    if backend == "compiled" and _sme_kernel is None:
        raise RuntimeError("compiled SME kernel is not available")
    impl = _sme_kernel if backend == "compiled" else _sme_py
    law, c0, k, p, gamma, u_const, mode0 = _encode_law(model.law, model.dim)
    args = (np.asarray(rho0, dtype=complex), model.H0, model.H1, model.L, model.eta, float(dt))
    tail = (int(record_every), law, c0, np.ascontiguousarray(k), np.ascontiguousarray(p),
            gamma, u_const, mode0)
    dw = np.ascontiguousarray(dw, dtype=float)
    threads = threads or _threads()
    if threads <= 1 or dw.shape[0] < 2 * threads:
        return impl.run(*args, dw, *tail)
    chunks = np.array_split(np.arange(dw.shape[0]), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda idx: impl.run(*args, np.ascontiguousarray(dw[idx]), *tail), chunks))
    return tuple(np.concatenate([part[j] for part in parts]) for j in range(5))


def _validate_run(model: SMEModel, rho0, T: float, dt: float, record_every: int) -> int:
    rho0 = np.asarray(rho0)
    if rho0.shape != (model.dim, model.dim):
        raise DimensionError("initial state dimension mismatch")
    if not (dt > 0 and T > 0):
        raise ValueError("T and dt must be positive")
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * T:
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    if dt > model.max_stable_dt() * (1 + 1e-12):
        warnings.warn(f"dt={dt} exceeds the recommended bound {model.max_stable_dt():.3g}",
                      stacklevel=3)
    return n_steps


def _check_fail(fail: np.ndarray, offset: int = 0) -> None:
    bad = np.nonzero(fail != -1)[0]
    if len(bad):
        i = int(bad[0])
        raise NumericalError(f"trajectory {offset + i} became non-finite at step {int(fail[i])}")


def sme_trajectory(model: SMEModel, rho0, T: float, dt: float, seed: int,
                   record_every: int = 1, backend: str | None = None) -> TrajectoryRecord:
    n_steps = _validate_run(model, rho0, T, dt, record_every)
    dw = wiener_increments(seed, 1, n_steps, dt)
    states, u, dy, clips, fail = _run_kernel(model, density_matrix(rho0), dt, dw,
                                             record_every, backend, threads=1)
    _check_fail(fail)
    times = dt * record_every * np.arange(states.shape[1])
    meta = {"dY": DY_CONVENTION, "law": getattr(model.law, "name", "none"),
            "backend": backend or DEFAULT_BACKEND}
    return TrajectoryRecord(seed, dt, times, states[0], u[0], dw[0], dy[0], int(clips[0]),
                            record_every, model.eta, meta)


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    times: np.ndarray
    mean_states: np.ndarray
    states: np.ndarray  # (n_traj, n_rec, N, N)
    u: np.ndarray
    dY: np.ndarray
    clip_events: np.ndarray
    seed: int
    dt: float
    n_steps: int

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    def final_states(self) -> np.ndarray:
        return self.states[:, -1]


def sme_ensemble(model: SMEModel, rho0, T: float, dt: float, n_traj: int, seed: int,
                 record_every: int = 1, backend: str | None = None,
                 threads: int | None = None) -> EnsembleResult:
    """Independent trajectories with seeds ``seed + i``, merged in index order."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    n_steps = _validate_run(model, rho0, T, dt, record_every)
    dw = wiener_increments(seed, n_traj, n_steps, dt)
    states, u, dy, clips, fail = _run_kernel(model, density_matrix(rho0), dt, dw,
                                             record_every, backend, threads)
    _check_fail(fail)
    times = dt * record_every * np.arange(states.shape[1])
    return EnsembleResult(times, states.mean(axis=0), states, u, dy, clips, seed, dt, n_steps)
