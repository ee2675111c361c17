import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qctl.analysis import (SubspaceSplit, affine_accessibility, coupling_graph, gas_check,
                           invariance_check, is_operator_controllable, lie_closure, majorizes,
                           spectral_structure, steady_states, sufficient_controllability)
from qctl.core import (SIGMA_X, SIGMA_Z, DimensionError, gell_mann_basis, ket, random_density,
                       random_hermitian, random_unitary, trace_distance)
from qctl.dynamics import LindbladModel, decay_model, mme_propagate, mme_propagate_controlled, \
    unital_qubit_model

from strategies import seeds, unitaries


def brute_force_dim(gens, depth):
    """Rank of all bracket words up to ``depth`` letters (independent oracle)."""
    words = list(gens)
    layer = list(gens)
    for _ in range(depth - 1):
        layer = [a @ b - b @ a for a in gens for b in layer]
        words += layer
    flat = np.array([np.concatenate([w.real.ravel(), w.imag.ravel()]) for w in words])
    s = np.linalg.svd(flat, compute_uv=False)
    return int(np.sum(s > 1e-9 * s[0]))


class TestLieClosure:
    def test_qubit_pair(self):
        res = lie_closure([-1j * SIGMA_Z, -1j * SIGMA_X])
        assert res.dim == 3 and res.full and res.saturated

    def test_single_generator(self):
        assert lie_closure([-1j * SIGMA_Z]).dim == 1

    def test_block_coupling(self):
        h0 = np.diag([1.0, 2.0, -3.0])
        h1 = np.zeros((3, 3))
        h1[0, 1] = h1[1, 0] = 1.0
        ok, res = is_operator_controllable(h0, h1)
        # su(2) on the coupled block plus the residual diagonal direction
        assert not ok and res.dim == 4

    def test_identity_dropped(self):
        ok, res = is_operator_controllable(SIGMA_Z + 3 * np.eye(2), SIGMA_X)
        assert ok and res.dim == 3

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_word_oracle(self, seed):
        rng = np.random.default_rng(seed)
        gens = [-1j * random_hermitian(3, rng, traceless=True) for _ in range(2)]
        assert lie_closure(gens).dim == brute_force_dim(gens, 6) == 8

    def test_degenerate_word_oracle(self):
        h0 = np.diag([1.0, 1.0, -2.0])
        h1 = np.zeros((3, 3), complex)
        h1[0, 1], h1[1, 0] = 1j, -1j
        gens = [-1j * h0, -1j * h1]
        assert lie_closure(gens).dim == brute_force_dim(gens, 6)

    @settings(max_examples=15)
    @given(seeds, unitaries(dim=3))
    def test_conjugation_invariance(self, seed, u):
        rng = np.random.default_rng(seed)
        h0, h1 = (random_hermitian(3, rng, traceless=True) for _ in range(2))
        base = lie_closure([-1j * h0, -1j * h1]).dim
        rot = lie_closure([-1j * u @ h0 @ u.conj().T, -1j * u @ h1 @ u.conj().T]).dim
        assert base == rot

    def test_gl_algebra(self):
        e12 = np.array([[0.0, 1.0], [0.0, 0.0]])
        e21 = e12.T
        assert lie_closure([e12, e21], "gl").dim == 3
        assert lie_closure([e12, e21, np.eye(2)], "gl").dim == 4

    def test_rejects_bad_generator(self):
        with pytest.raises(ValueError):
            lie_closure([SIGMA_Z])  # Hermitian, not skew
        with pytest.raises(ValueError):
            lie_closure([-1j * SIGMA_Z], algebra="sp")
        with pytest.raises(DimensionError):
            lie_closure([-1j * SIGMA_Z, -1j * np.eye(3)])

    def test_depth_cap(self):
        rng = np.random.default_rng(3)
        gens = [-1j * random_hermitian(4, rng, traceless=True) for _ in range(2)]
        res = lie_closure(gens, max_depth=2)
        assert not res.saturated and res.dim < 15


class TestSpectra:
    def test_regular_not_strong(self):
        st_ = spectral_structure(np.diag([1.0, 0.0, -1.0]))
        assert st_.regular and not st_.strongly_regular

    def test_degenerate(self):
        assert not spectral_structure(np.diag([0.0, 0.0, 1.0])).regular

    def test_strongly_regular(self):
        st_ = spectral_structure(np.diag([0.0, 1.0, 3.0]))
        assert st_.strongly_regular
        assert len(st_.bohr_frequencies) == 6

    def test_graph_edges(self):
        h1 = np.zeros((4, 4))
        h1[0, 1] = h1[1, 0] = 1
        h1[2, 3] = h1[3, 2] = 1
        g = coupling_graph(h1)
        assert g.edges == ((0, 1), (2, 3))
        assert not g.connected()
        h1[1, 2] = h1[2, 1] = 1
        assert coupling_graph(h1).connected()


class TestSufficientTest:
    def chain(self, n):
        h1 = np.zeros((n, n))
        for j in range(n - 1):
            h1[j, j + 1] = h1[j + 1, j] = 1
        return h1

    def test_strongly_regular_chain(self):
        v = sufficient_controllability(np.diag([0.0, 1.0, 3.0]), self.chain(3))
        assert v.verdict == "controllable_by_Thm5"
        assert is_operator_controllable(np.diag([0.0, 1.0, 3.0]), self.chain(3))[0]

    def test_equally_spaced_chain_inconclusive(self):
        v = sufficient_controllability(np.diag([1.0, 0.0, -1.0]), self.chain(3))
        assert v.verdict == "inconclusive"
        assert v.certificate["unique_frequency_edges"] == ()

    def test_weakened_by_unique_frequencies(self):
        # frequencies 1 and 3 are unique; edge (0, 2) at 2 is not needed
        h0 = np.diag([0.0, 1.0, 4.0, 2.0])
        h1 = np.zeros((4, 4))
        for j, k in [(0, 1), (1, 2), (2, 3)]:
            h1[j, k] = h1[k, j] = 1
        v = sufficient_controllability(h0, h1)
        assert v.verdict in ("controllable_by_Thm5", "controllable_by_weakened_test")
        assert is_operator_controllable(h0, h1)[0]

    def test_disconnected(self):
        h1 = np.zeros((3, 3))
        h1[0, 1] = h1[1, 0] = 1
        v = sufficient_controllability(np.diag([0.0, 1.0, 3.0]), h1)
        assert v.verdict == "inconclusive"
        assert "necessary_condition_failed" in v.certificate

    def test_non_diagonal_drift(self):
        u = random_unitary(3, np.random.default_rng(1))
        h0 = u @ np.diag([0.0, 1.0, 3.0]) @ u.conj().T
        h1 = u @ self.chain(3) @ u.conj().T
        v = sufficient_controllability(h0, h1)
        assert v.certificate["diagonalized"]
        assert v.verdict == "controllable_by_Thm5"

    @settings(max_examples=20)
    @given(seeds)
    def test_positive_verdict_is_sound(self, seed):
        rng = np.random.default_rng(seed)
        n = 3
        h0 = np.diag(rng.normal(size=n))
        h1 = random_hermitian(n, rng)
        v = sufficient_controllability(h0, h1)
        if v.verdict != "inconclusive":
            assert is_operator_controllable(h0, h1)[0]


class TestInvariance:
    def test_decay_ground_invariant(self):
        m = decay_model(1.0, 0.5)
        ok, res = invariance_check(m, SubspaceSplit.from_vectors(ket(0, 2)))
        assert ok and res["L_Q"] < 1e-12

    def test_decay_excited_not_invariant(self):
        m = decay_model(1.0, 0.5)
        ok, res = invariance_check(m, SubspaceSplit.from_vectors(ket(1, 2)))
        assert not ok
        assert res["L_Q"] == pytest.approx(1.0)

    def test_coherent_leak(self):
        ok, res = invariance_check(LindbladModel(SIGMA_X), SubspaceSplit.from_vectors(ket(0, 2)))
        assert not ok and res["H_P"] == pytest.approx(1.0)

    def test_split_validation(self):
        with pytest.raises(ValueError):
            SubspaceSplit(np.eye(2), 0)
        with pytest.raises(ValueError):
            SubspaceSplit(np.ones((2, 2)), 1)


class TestSteadyStates:
    def test_decay_ground(self):
        v = gas_check(decay_model(1.0, 0.5))
        assert v.gas
        assert np.allclose(v.state, np.diag([1, 0]), atol=1e-12)

    def test_unital_mixed(self):
        v = gas_check(unital_qubit_model(SIGMA_Z, (1.0, 2.0, 2.5)))
        assert v.gas and np.allclose(v.state, np.eye(2) / 2, atol=1e-12)

    def test_dephasing_not_unique(self):
        v = gas_check(LindbladModel(SIGMA_Z, [SIGMA_Z]))
        assert not v.gas and v.kernel_dim == 2

    def test_closed_system_kernel(self):
        ss = steady_states(LindbladModel(np.diag([0.0, 1.0, 3.0])))
        assert ss.kernel_dim == 3
        assert all(np.allclose(h, h.conj().T) for h in ss.hermitian_basis)

    @settings(max_examples=20)
    @given(seeds, st.integers(2, 3))
    def test_generic_model_unique(self, seed, n):
        rng = np.random.default_rng(seed)
        ls = [rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)) for _ in range(2)]
        m = LindbladModel(random_hermitian(n, rng), ls)
        v = gas_check(m)
        assert v.gas
        w = np.linalg.eigvalsh(v.state)
        assert w.min() > -1e-9 and np.trace(v.state).real == pytest.approx(1.0)
        assert np.abs(m.generator(v.state)).max() < 1e-9

    @given(seeds)
    def test_attraction_matches_simulation(self, seed):
        rho0 = random_density(2, np.random.default_rng(seed))
        m = decay_model(1.0, 0.5)
        _, states = mme_propagate(m, rho0, 50.0, 50)
        assert trace_distance(states[-1], gas_check(m).state) < 1e-3


class TestAccessibility:
    def test_unital_example(self):
        m = unital_qubit_model(SIGMA_Z, (1.0, 2.0, 2.5))
        res = affine_accessibility(m, SIGMA_X)
        assert res.verdict == "accessible"
        assert res.dim == res.target_dim == 9
        assert not res.affine
        assert res.facts["controllable_on_states"] is False
        assert res.facts["small_time_locally_controllable"] is False

    def test_decay_affine(self):
        res = affine_accessibility(decay_model(1.0, 0.5), SIGMA_X)
        assert res.affine and res.dim == res.target_dim == 12

    def test_closed_system_inconclusive(self):
        res = affine_accessibility(LindbladModel(SIGMA_Z), SIGMA_X)
        assert res.verdict == "inconclusive" and res.dim == 3


class TestMajorization:
    @pytest.mark.parametrize("a,b,expected", [
        ([1, 0, 0], [0.5, 0.5, 0], True),
        ([0.5, 0.5, 0], [1, 0, 0], False),
        ([0.6, 0.3, 0.1], np.ones(3) / 3, True),
        ([0.5, 0.25, 0.25], [0.4, 0.4, 0.2], False),
    ])
    def test_examples(self, a, b, expected):
        assert majorizes(a, b) is expected

    def test_validation(self):
        with pytest.raises(ValueError):
            majorizes([0.5, 0.6], [0.5, 0.5])
        with pytest.raises(DimensionError):
            majorizes([1.0], [0.5, 0.5])

    @settings(max_examples=15)
    @given(seeds)
    def test_unital_trajectory(self, seed):
        rng = np.random.default_rng(seed)
        ls = [random_hermitian(3, rng) for _ in range(2)]
        m = LindbladModel(random_hermitian(3, rng), ls)
        controls = [random_hermitian(3, rng)]
        u = rng.normal(size=(1, 40))
        _, states = mme_propagate_controlled(m, controls, u, 2.0, random_density(3, rng))
        spectra = [np.linalg.eigvalsh(0.5 * (s + s.conj().T)) for s in states]
        for i, j in itertools.combinations(range(0, 41, 8), 2):
            assert majorizes(np.clip(spectra[i], 0, None) / spectra[i].clip(0).sum(),
                             np.clip(spectra[j], 0, None) / spectra[j].clip(0).sum(), tol=1e-8)
