"""Controllability and stability analysis.

Lie closures are computed on real coordinate vectors: complex matrices are
flattened as ``[Re, Im]`` so the Hilbert-Schmidt inner product ``Re tr(A^dagger B)``
becomes the Euclidean dot product.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .core import ATOL, DimensionError, as_matrix, dag, gell_mann_basis, unvec
from .dynamics import LindbladModel, coherence_affine, lindblad_superop

ALGEBRAS = ("su", "gl", "affine")

# structural facts about coherently controlled master equations; attached
# to accessibility verdicts rather than computed
ACCESSIBILITY_FACTS = {
    "small_time_locally_controllable": False,
    "finite_time_controllable": False,
}


# --------------------------------------------------------------------------
# Lie closure
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LieClosureResult:
    dim: int
    basis: tuple
    depth: int
    saturated: bool
    ambient_dim: int

    @property
    def full(self) -> bool:
        return self.dim == self.ambient_dim


def _flatten(m: np.ndarray, real: bool) -> np.ndarray:
    if real:
        return np.real(m).ravel().astype(float)
    return np.concatenate([m.real.ravel(), m.imag.ravel()])


def _unflatten(v: np.ndarray, n: int, real: bool) -> np.ndarray:
    if real:
        return v.reshape(n, n)
    half = n * n
    return (v[:half] + 1j * v[half:]).reshape(n, n)


def _residual(v: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    # two passes of modified Gram-Schmidt
    for _ in range(2):
        for b in basis:
            v = v - np.dot(b, v) * b
    return v


def affine_embed(m, g) -> np.ndarray:
    """Homogeneous ``(n+1) x (n+1)`` matrix ``[[M, g], [0, 0]]``."""
    m = np.asarray(m, dtype=float)
    g = np.asarray(g, dtype=float).ravel()
    n = m.shape[0]
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = m
    out[:n, n] = g
    return out


def _ambient_dim(algebra: str, n: int) -> int:
    if algebra == "su":
        return n * n - 1
    if algebra == "gl":
        return n * n
    return (n - 1) ** 2 + (n - 1)


def _check_generator(g: np.ndarray, algebra: str, tol: float) -> None:
    scale = max(1.0, np.linalg.norm(g))
    if algebra == "su":
        if np.linalg.norm(g + dag(g)) > tol * 1e3 * scale:
            raise ValueError("su(N) generators must be skew-Hermitian")
        if abs(np.trace(g)) > tol * 1e3 * scale:
            raise ValueError("su(N) generators must be traceless")
    else:
        if np.abs(np.imag(g)).max(initial=0.0) > tol * 1e3 * scale:
            raise ValueError(f"{algebra} generators must be real")
        if algebra == "affine" and np.abs(np.real(g)[-1]).max() > tol * 1e3 * scale:
            raise ValueError("affine generators must have a zero last row")


def lie_closure(generators: Sequence, algebra: str = "su", tol: float = 1e-9,
                max_depth: int | None = None) -> LieClosureResult:
    """Orthonormal basis of the Lie algebra generated by ``generators``.

    Brackets are taken breadth-first between newly found directions and the
    original generators only. A candidate is kept when its residual after
    orthogonalization exceeds ``tol`` times the candidate's norm.
    """
    if algebra not in ALGEBRAS:
        raise ValueError(f"algebra must be one of {ALGEBRAS}")
    gens = [np.asarray(as_matrix(g)) for g in generators]
    if not gens:
        raise ValueError("need at least one generator")
    n = gens[0].shape[0]
    if any(g.shape != (n, n) for g in gens):
        raise DimensionError("generators must share one square shape")
    real = algebra != "su"
    for g in gens:
        _check_generator(g, algebra, tol)
    if real:
        gens = [np.real(g).astype(float) for g in gens]
    else:
        gens = [g.astype(complex) for g in gens]
    ambient = _ambient_dim(algebra, n)
    if max_depth is None:
        max_depth = 2 * n * n

    basis: list[np.ndarray] = []
    mats: list[np.ndarray] = []

    def add(m: np.ndarray) -> bool:
        v = _flatten(m, real)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            return False
        r = _residual(v, basis)
        rn = np.linalg.norm(r)
        if rn <= tol * norm or rn <= 1e-14:
            return False
        r = r / rn
        basis.append(r)
        mats.append(_unflatten(r, n, real))
        return True

    frontier = deque()
    for g in gens:
        if add(g):
            frontier.append(mats[-1])
    depth = 1
    saturated = True
    while frontier and len(basis) < ambient:
        if depth >= max_depth:
            saturated = False
            break
        new = deque()
        for b in frontier:
            for g in gens:
                if add(g @ b - b @ g):
                    new.append(mats[-1])
                if len(basis) >= ambient:
                    break
            if len(basis) >= ambient:
                break
        if not new:
            break
        frontier = new
        depth += 1
    return LieClosureResult(len(basis), tuple(mats), depth, saturated, ambient)


def _traceless(h: np.ndarray) -> np.ndarray:
    n = h.shape[0]
    return h - np.trace(h) / n * np.eye(n)


def is_operator_controllable(h0, controls, tol: float = 1e-9) -> tuple[bool, LieClosureResult]:
    """Full-rank test of ``Lie{-iH0, -iH1, ...}`` against su(N).

    Identity components only contribute a global phase and are dropped.
    """
    if isinstance(controls, np.ndarray) and controls.ndim == 2:
        controls = [controls]
    hs = [as_matrix(h0)] + [as_matrix(h) for h in controls]
    gens = [-1j * _traceless(np.asarray(h, dtype=complex)) for h in hs]
    res = lie_closure(gens, "su", tol)
    return res.dim == res.ambient_dim, res


# --------------------------------------------------------------------------
# spectra and coupling graphs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralStructure:
    energies: np.ndarray
    bohr_frequencies: tuple  # (j, k, e_j - e_k) over ordered pairs j != k
    regular: bool
    strongly_regular: bool
    tol: float


def _degeneracy_scale(energies: np.ndarray) -> float:
    s = float(np.abs(energies).max(initial=0.0))
    return s if s > 0 else 1.0


def spectral_structure(h0, tol: float = 1e-8) -> SpectralStructure:
    h0 = as_matrix(h0)
    e = np.sort(np.linalg.eigvalsh(0.5 * (h0 + dag(h0))))
    n = len(e)
    thr = tol * _degeneracy_scale(e)
    regular = bool(np.all(np.diff(e) > thr))
    freqs = [(j, k, e[j] - e[k]) for j in range(n) for k in range(n) if j != k]
    values = np.array([f[2] for f in freqs])
    strong = regular
    if strong and len(values) > 1:
        diffs = np.abs(values[:, None] - values[None, :])
        np.fill_diagonal(diffs, np.inf)
        strong = bool(diffs.min() > thr)
    return SpectralStructure(e, tuple(freqs), regular, strong, tol)


@dataclass(frozen=True)
class CouplingGraph:
    n_nodes: int
    edges: tuple  # (j, k) with j < k, 0-based

    def neighbours(self) -> list[list[int]]:
        adj = [[] for _ in range(self.n_nodes)]
        for j, k in self.edges:
            adj[j].append(k)
            adj[k].append(j)
        return adj

    def connected(self, edges=None) -> bool:
        graph = self if edges is None else CouplingGraph(self.n_nodes, tuple(edges))
        if graph.n_nodes <= 1:
            return True
        adj = graph.neighbours()
        seen = {0}
        queue = deque([0])
        while queue:
            j = queue.popleft()
            for k in adj[j]:
                if k not in seen:
                    seen.add(k)
                    queue.append(k)
        return len(seen) == graph.n_nodes


def coupling_graph(h1, threshold: float = 1e-12) -> CouplingGraph:
    h1 = as_matrix(h1)
    n = h1.shape[0]
    edges = tuple((j, k) for j, k in combinations(range(n), 2)
                  if max(abs(h1[j, k]), abs(h1[k, j])) > threshold)
    return CouplingGraph(n, edges)


def graph_connected(h1, threshold: float = 1e-12) -> tuple[bool, CouplingGraph]:
    g = coupling_graph(h1, threshold)
    return g.connected(), g


@dataclass(frozen=True)
class ControllabilityVerdict:
    verdict: str
    certificate: dict = field(default_factory=dict)


def sufficient_controllability(h0, h1, tol: float = 1e-8,
                               threshold: float = 1e-12) -> ControllabilityVerdict:
    """Graph-theoretic sufficient test for operator controllability.

    Verdicts: ``controllable_by_Thm5`` (strongly regular drift and connected
    coupling graph), ``controllable_by_weakened_test`` or ``inconclusive``.
    Two weakened tests are run when the first fails:

    * ``edge_frequencies_distinct``: the Bohr frequencies carried by the
      graph's edges are nonzero and pairwise distinct, and the graph is
      connected;
    * ``unique_frequency_subgraph``: the edges whose frequency is
      non-degenerate among all transitions form a connected graph.
    """
    h0 = np.asarray(as_matrix(h0), dtype=complex)
    h1 = np.asarray(as_matrix(h1), dtype=complex)
    cert: dict = {}
    off = h0 - np.diag(np.diag(h0))
    if np.linalg.norm(off) > ATOL * max(1.0, np.linalg.norm(h0)):
        e, v = np.linalg.eigh(h0)
        h0 = np.diag(e).astype(complex)
        h1 = dag(v) @ h1 @ v
        cert["diagonalized"] = True
        cert["eigenbasis"] = v
    else:
        cert["diagonalized"] = False
    e = np.real(np.diag(h0))
    st = spectral_structure(np.diag(e), tol)
    graph = coupling_graph(h1, threshold)
    connected = graph.connected()
    cert.update(strongly_regular=st.strongly_regular, regular=st.regular,
                connected=connected, edges=graph.edges)
    if not connected:
        cert["necessary_condition_failed"] = "coupling graph is disconnected"
    if st.strongly_regular and connected:
        return ControllabilityVerdict("controllable_by_Thm5", cert)

    thr = tol * _degeneracy_scale(e)
    n = len(e)
    edge_freq = {ed: abs(e[ed[0]] - e[ed[1]]) for ed in graph.edges}
    vals = list(edge_freq.values())
    distinct = all(v > thr for v in vals) and all(
        abs(a - b) > thr for a, b in combinations(vals, 2))
    cert["edge_frequencies_distinct"] = bool(distinct and connected)

    all_pairs = list(combinations(range(n), 2))
    unique_edges = []
    for ed, f in edge_freq.items():
        if f <= thr:
            continue
        if all(abs(f - abs(e[p[0]] - e[p[1]])) > thr for p in all_pairs if p != ed):
            unique_edges.append(ed)
    sub_ok = graph.connected(unique_edges)
    cert["unique_frequency_edges"] = tuple(unique_edges)
    cert["unique_frequency_subgraph"] = bool(sub_ok)
    if cert["edge_frequencies_distinct"] or sub_ok:
        return ControllabilityVerdict("controllable_by_weakened_test", cert)
    return ControllabilityVerdict("inconclusive", cert)


# --------------------------------------------------------------------------
# invariant subspaces and steady states
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SubspaceSplit:
    """Unitary ``basis`` whose first ``m`` columns span ``H_S``."""

    basis: np.ndarray
    m: int

    def __post_init__(self):
        u = np.asarray(self.basis, dtype=complex)
        n = u.shape[0]
        if u.shape != (n, n):
            raise DimensionError("split basis must be square")
        if np.linalg.norm(dag(u) @ u - np.eye(n)) > ATOL * n:
            raise ValueError("split basis is not unitary")
        if not 0 < self.m < n:
            raise ValueError("need 0 < m < N")
        object.__setattr__(self, "basis", u)

    @classmethod
    def from_vectors(cls, vectors) -> "SubspaceSplit":
        """Complete the span of ``vectors`` (columns) to an orthonormal basis."""
        v = np.atleast_2d(np.asarray(vectors, dtype=complex))
        if v.shape[0] == 1 and v.shape[1] > 1:
            v = v.T
        n, m = v.shape
        q, _ = np.linalg.qr(np.hstack([v, np.eye(n)]))
        return cls(q[:, :n], m)

    def blocks(self, x) -> dict:
        y = dag(self.basis) @ np.asarray(x) @ self.basis
        m = self.m
        return {"S": y[:m, :m], "P": y[:m, m:], "Q": y[m:, :m], "R": y[m:, m:]}


def invariance_check(model: LindbladModel, split: SubspaceSplit, tol: float = 1e-8):
    """Test whether states supported on ``H_S`` stay there.

    Returns ``(invariant, residuals)`` where residuals holds the Frobenius
    norms of the stacked ``L_Q`` blocks and of ``iH_P - 1/2 sum L_S^dagger L_P``.
    """
    hb = split.blocks(model.H)
    lq = 0.0
    cross = 1j * hb["P"]
    for l in model.noise_ops:
        lb = split.blocks(l)
        lq += np.linalg.norm(lb["Q"]) ** 2
        cross = cross - 0.5 * dag(lb["S"]) @ lb["P"]
    res = {"L_Q": float(np.sqrt(lq)), "H_P": float(np.linalg.norm(cross))}
    return bool(res["L_Q"] <= tol and res["H_P"] <= tol), res


@dataclass(frozen=True, eq=False)
class SteadyStates:
    kernel_dim: int
    hermitian_basis: tuple
    state: np.ndarray | None
    singular_values: np.ndarray


def steady_states(model: LindbladModel, rtol: float = 1e-9) -> SteadyStates:
    """Kernel of the generator via SVD, with a Hermitian basis.

    When the kernel is one-dimensional the trace-one state is returned too.
    """
    n = model.dim
    sup = lindblad_superop(model)
    _, s, vh = np.linalg.svd(sup)
    smax = s[0] if s[0] > 0 else 1.0
    null = vh[s <= rtol * smax].conj()
    k = null.shape[0]
    # the kernel is closed under adjoint, so Hermitian and anti-Hermitian
    # parts of kernel vectors span it over the reals
    cands = []
    for v in null:
        x = unvec(v, n)
        cands.append(0.5 * (x + dag(x)))
        cands.append(0.5j * (dag(x) - x))
    herm: list[np.ndarray] = []
    flat: list[np.ndarray] = []
    for c in cands:
        r = _residual(_flatten(c, False), flat)
        rn = np.linalg.norm(r)
        if rn > 1e-8:
            flat.append(r / rn)
            herm.append(_unflatten(r / rn, n, False))
        if len(herm) == k:
            break
    state = None
    if k == 1:
        x = herm[0]
        tr = np.trace(x).real
        if abs(tr) > ATOL:
            state = x / tr
            state = 0.5 * (state + dag(state))
    return SteadyStates(k, tuple(herm), state, s)


@dataclass(frozen=True, eq=False)
class GASVerdict:
    verdict: str  # "GAS" or "not_unique"
    state: np.ndarray | None
    kernel_dim: int

    @property
    def gas(self) -> bool:
        return self.verdict == "GAS"


def gas_check(model: LindbladModel, rtol: float = 1e-9) -> GASVerdict:
    """A steady state is globally attractive iff it is the only one."""
    ss = steady_states(model, rtol)
    if ss.kernel_dim == 1 and ss.state is not None:
        return GASVerdict("GAS", ss.state, 1)
    return GASVerdict("not_unique", None, ss.kernel_dim)


# --------------------------------------------------------------------------
# accessibility of controlled master equations
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AccessibilityResult:
    verdict: str  # "accessible" or "inconclusive"
    dim: int
    target_dim: int
    affine: bool
    closure: LieClosureResult
    facts: dict


def affine_accessibility(model: LindbladModel, controls, tol: float = 1e-9) -> AccessibilityResult:
    """Lie-rank accessibility test in coherence-vector coordinates.

    Uses the drift ``M`` (and ``g`` if nonzero) of the uncontrolled model and
    the Hamiltonian generators ``B_{H_j}``; the target algebra is gl(n) for
    unital models and gl(n) + R^n otherwise, with ``n = N^2 - 1``.
    """
    if isinstance(controls, np.ndarray) and controls.ndim == 2:
        controls = [controls]
    basis = gell_mann_basis(model.dim)
    drift = coherence_affine(model, basis)
    ctrl = [coherence_affine(LindbladModel(as_matrix(h)), basis).M for h in controls]
    n = drift.M.shape[0]
    unital = np.linalg.norm(drift.g) <= ATOL
    if unital:
        res = lie_closure([drift.M] + ctrl, "gl", tol)
        target = n * n
    else:
        gens = [affine_embed(drift.M, drift.g)] + [affine_embed(b, np.zeros(n)) for b in ctrl]
        res = lie_closure(gens, "affine", tol)
        target = n * n + n
    facts = dict(ACCESSIBILITY_FACTS)
    if unital:
        facts["controllable_on_states"] = False
    verdict = "accessible" if res.dim == target else "inconclusive"
    return AccessibilityResult(verdict, res.dim, target, not unital, res, facts)


# --------------------------------------------------------------------------
# majorization
# --------------------------------------------------------------------------

def majorizes(spec_a, spec_b, tol: float = 1e-9) -> bool:
    """True iff ``spec_b`` is majorized by ``spec_a``.

    Both inputs are probability vectors; partial sums of the decreasingly
    sorted ``spec_b`` must not exceed those of ``spec_a``.
    """
    a = np.asarray(spec_a, dtype=float).ravel()
    b = np.asarray(spec_b, dtype=float).ravel()
    if a.shape != b.shape:
        raise DimensionError("spectra must have equal length")
    for v in (a, b):
        if v.min(initial=0.0) < -tol or abs(v.sum() - 1.0) > tol:
            raise ValueError("spectra must be nonnegative and sum to one")
    ca = np.cumsum(np.sort(a)[::-1])
    cb = np.cumsum(np.sort(b)[::-1])
    return bool(np.all(cb[:-1] <= ca[:-1] + tol))
