import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qctl.core import SIGMA_PLUS, SIGMA_Z, DimensionError, random_hermitian
from qctl.dynamics import decay_model, lindblad_superop
from qctl.networks import (Component, Concat, NetworkError, Series, SLHTriple, format_network,
                           load_components, parse_network, random_slh, reduce_network,
                           slh_concat, slh_identity, slh_series, slh_to_mme)

from strategies import seeds

NET_DIR = Path(__file__).resolve().parents[1] / "configs" / "networks"
NET_FILES = sorted(NET_DIR.glob("*.net"))


@pytest.fixture(scope="module")
def components():
    return load_components(json.loads((NET_DIR / "components.json").read_text()))


def triple(seed, n_ports=2, dim=3):
    return random_slh(n_ports, dim, np.random.default_rng(seed))


class TestAlgebra:
    def test_one_port_cascade_formula(self):
        rng = np.random.default_rng(0)
        l1, l2 = (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)) for _ in range(2))
        h1, h2 = random_hermitian(2, rng), random_hermitian(2, rng)
        g = slh_series(SLHTriple(np.eye(1), (l2,), h2), SLHTriple(np.eye(1), (l1,), h1))
        x = l2.conj().T @ l1
        assert np.allclose(g.L[0], l1 + l2)
        assert np.allclose(g.H, h1 + h2 + (x - x.conj().T) / 2j)

    @settings(max_examples=20)
    @given(seeds, seeds, seeds, st.integers(1, 3))
    def test_associativity(self, a, b, c, n):
        g1, g2, g3 = triple(a, n), triple(b, n), triple(c, n)
        left = slh_series(g3, slh_series(g2, g1))
        right = slh_series(slh_series(g3, g2), g1)
        assert left.allclose(right, 1e-10)

    @given(seeds, st.integers(1, 3))
    def test_identity(self, seed, n):
        g = triple(seed, n)
        ident = slh_identity(n, g.dim)
        assert slh_series(ident, g).allclose(g, 1e-12)
        assert slh_series(g, ident).allclose(g, 1e-12)

    @given(seeds, seeds)
    def test_concat(self, a, b):
        g1, g2 = triple(a, 1), triple(b, 2)
        g = slh_concat(g1, g2)
        assert g.n_ports == 3
        assert np.allclose(g.S[:1, 1:], 0) and np.allclose(g.S[1:, 1:], g2.S)
        assert np.allclose(g.H, g1.H + g2.H)

    @given(seeds)
    def test_series_preserves_unitarity(self, seed):
        g = slh_series(triple(seed), triple(seed + 1))
        assert np.allclose(g.S @ g.S.conj().T, np.eye(2))
        assert np.allclose(g.H, g.H.conj().T)

    def test_decay_reproduces_model(self):
        g = SLHTriple(np.eye(1), (SIGMA_PLUS,), 0.5 * SIGMA_Z)
        m = slh_to_mme(g)
        ref = decay_model(1.0, 0.5)
        assert np.array_equal(m.H, ref.H)
        assert np.array_equal(m.noise_ops[0], ref.noise_ops[0])
        assert np.array_equal(lindblad_superop(m), lindblad_superop(ref))

    def test_validation(self):
        with pytest.raises(ValueError):
            SLHTriple(np.array([[2.0]]), (SIGMA_PLUS,), SIGMA_Z)
        with pytest.raises(ValueError):
            SLHTriple(np.eye(1), (SIGMA_PLUS,), SIGMA_PLUS)
        with pytest.raises(DimensionError):
            SLHTriple(np.eye(1), (np.eye(3),), SIGMA_Z)
        with pytest.raises(DimensionError):
            slh_series(triple(0, 1), triple(1, 2))
        with pytest.raises(DimensionError):
            slh_concat(triple(0, 1, 2), triple(1, 1, 3))

    def test_json_round_trip(self):
        g = triple(4)
        back = SLHTriple.from_json(json.loads(json.dumps(g.to_json())))
        assert back.allclose(g, 0)


class TestParser:
    def test_precedence(self):
        tree = parse_network("a + b ; c")
        assert tree == Series((Concat((Component("a"), Component("b"))), Component("c")))

    def test_parentheses(self):
        tree = parse_network("a + (b ; c)")
        assert tree == Concat((Component("a"), Series((Component("b"), Component("c")))))

    def test_comments_and_whitespace(self):
        assert parse_network("# header\n  a ;\n b  # tail\n") == parse_network("a;b")

    @pytest.mark.parametrize("path", NET_FILES, ids=lambda p: p.name)
    def test_round_trip(self, path, components):
        tree = parse_network(path.read_text())
        text = format_network(tree)
        assert parse_network(text) == tree
        assert format_network(parse_network(text)) == text
        reduce_network(tree, components)

    @pytest.mark.parametrize("text,line,col", [
        ("a ; ", 1, 5),
        ("a +\n  ; b", 2, 3),
        ("(a ; b", 1, 7),
        ("a b", 1, 3),
        ("a $ b", 1, 3),
    ])
    def test_error_positions(self, text, line, col):
        with pytest.raises(NetworkError) as err:
            parse_network(text)
        assert (err.value.line, err.value.col) == (line, col)


class TestReduction:
    def test_cascade_oracle(self, components):
        g = reduce_network(parse_network((NET_DIR / "cascade.net").read_text()), components)
        la, lb = components["cav_a"].L[0], components["cav_b"].L[0]
        h = components["cav_a"].H + components["cav_b"].H
        assert np.allclose(g.S, [[1j]])
        assert np.allclose(g.L[0], lb + 1j * la)
        assert np.allclose(g.H, h + (lb.conj().T @ la + la.conj().T @ lb) / 2)

    def test_series_order(self, components):
        g = reduce_network(parse_network("cav_a ; cav_b"), components)
        assert g.allclose(slh_series(components["cav_b"], components["cav_a"]))

    def test_decay_file(self, components):
        g = reduce_network(parse_network((NET_DIR / "decay.net").read_text()), components)
        ref = decay_model(1.0, 0.5)
        m = slh_to_mme(g)
        assert np.allclose(m.H, ref.H) and np.allclose(m.noise_ops[0], ref.noise_ops[0])

    def test_parallel_ports(self, components):
        g = reduce_network(parse_network("atom + cav_b"), components)
        assert g.n_ports == 2

    def test_undefined_component(self, components):
        with pytest.raises(NetworkError) as err:
            reduce_network(parse_network("atom ;\n  ghost"), components)
        assert (err.value.line, err.value.col) == (2, 3)

    def test_port_mismatch(self, components):
        with pytest.raises(NetworkError):
            reduce_network(parse_network("(atom + cav_b) ; phase"), components)

    def test_bad_component_name(self):
        with pytest.raises(NetworkError):
            load_components({"1bad": {"H": [[0, 0], [0, 0]]}})
