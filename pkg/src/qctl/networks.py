"""SLH algebra for reducible quantum optical networks.

A component is a triple ``(S, L, H)``: a scalar scattering matrix over
``n`` ports, ``n`` coupling operators and a Hamiltonian, all acting on one
system space. Networks are written in a small language::

    expr := term (';' term)*
    term := atom ('+' atom)*
    atom := NAME | '(' expr ')'

``A ; B`` feeds the output of ``A`` into ``B`` (the series product with
``B`` on the left) and ``+`` places components side by side. ``#`` starts
a comment that runs to the end of the line.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import ATOL, DimensionError, dag, matrix_from_json, matrix_to_json
from .dynamics import LindbladModel


class NetworkError(ValueError):
    """Parse or reduction failure; ``line`` and ``col`` are 1-based when known."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        where = f" (line {line}, column {col})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.col = col


# --------------------------------------------------------------------------
# SLH triples
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SLHTriple:
    S: np.ndarray
    L: tuple
    H: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.H, dtype=complex)
        n_sys = h.shape[0]
        if h.shape != (n_sys, n_sys):
            raise DimensionError("H must be square")
        if np.linalg.norm(h - dag(h)) > ATOL * max(1.0, np.linalg.norm(h)):
            raise ValueError("H must be Hermitian")
        ls = tuple(np.asarray(l, dtype=complex) for l in self.L)
        if any(l.shape != h.shape for l in ls):
            raise DimensionError("coupling operators must match H in dimension")
        n = len(ls)
        s = np.asarray(self.S, dtype=complex).reshape(n, n)
        if np.linalg.norm(s @ dag(s) - np.eye(n)) > ATOL * max(1, n):
            raise ValueError("S must be unitary")
        object.__setattr__(self, "S", s)
        object.__setattr__(self, "L", ls)
        object.__setattr__(self, "H", 0.5 * (h + dag(h)))

    @property
    def n_ports(self) -> int:
        return len(self.L)

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    def allclose(self, other: "SLHTriple", atol: float = 1e-10) -> bool:
        if self.n_ports != other.n_ports or self.dim != other.dim:
            return False
        return (np.allclose(self.S, other.S, atol=atol, rtol=0)
                and all(np.allclose(a, b, atol=atol, rtol=0) for a, b in zip(self.L, other.L))
                and np.allclose(self.H, other.H, atol=atol, rtol=0))

    def to_json(self) -> dict:
        return {
            "S": matrix_to_json(self.S),
            "L": [matrix_to_json(l) for l in self.L],
            "H": matrix_to_json(self.H),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "SLHTriple":
        h = matrix_from_json(obj["H"])
        ls = [matrix_from_json(l) for l in obj.get("L", [])]
        if "S" in obj:
            s = matrix_from_json(obj["S"]) if len(ls) else np.zeros((0, 0))
        else:
            s = np.eye(len(ls))
        return cls(s, tuple(ls), h)


def slh_identity(n_ports: int, dim: int) -> SLHTriple:
    return SLHTriple(np.eye(n_ports), tuple(np.zeros((dim, dim)) for _ in range(n_ports)),
                     np.zeros((dim, dim)))


def slh_series(g2: SLHTriple, g1: SLHTriple) -> SLHTriple:
    """``g2 <| g1``: the output of ``g1`` drives ``g2``.

    ``S = S2 S1``, ``L = L2 + S2 L1`` and ``H = H1 + H2 + (X - X^dagger)/(2i)``
    with ``X = sum_ij L2_i^dagger S2_ij L1_j``.
    """
    if g1.n_ports != g2.n_ports:
        raise DimensionError(f"series needs equal port counts, got {g2.n_ports} and {g1.n_ports}")
    if g1.dim != g2.dim:
        raise DimensionError("series needs a common system space")
    n = g1.n_ports
    s = g2.S @ g1.S
    ls = tuple(g2.L[i] + sum(g2.S[i, j] * g1.L[j] for j in range(n)) for i in range(n))
    x = np.zeros_like(g1.H)
    for i in range(n):
        for j in range(n):
            if g2.S[i, j] != 0:
                x = x + g2.S[i, j] * dag(g2.L[i]) @ g1.L[j]
    h = g1.H + g2.H + (x - dag(x)) / 2j
    return SLHTriple(s, ls, h)


def slh_concat(g1: SLHTriple, g2: SLHTriple) -> SLHTriple:
    """Side-by-side composition: block-diagonal ``S``, stacked ``L``, ``H1 + H2``."""
    if g1.dim != g2.dim:
        raise DimensionError("concatenation needs a common system space")
    n1, n2 = g1.n_ports, g2.n_ports
    s = np.zeros((n1 + n2, n1 + n2), dtype=complex)
    s[:n1, :n1] = g1.S
    s[n1:, n1:] = g2.S
    return SLHTriple(s, g1.L + g2.L, g1.H + g2.H)


def slh_to_mme(g: SLHTriple) -> LindbladModel:
    """Vacuum-input unconditional master equation; ``S`` does not enter."""
    return LindbladModel(g.H, g.L)


def random_slh(n_ports: int, dim: int, rng: np.random.Generator) -> SLHTriple:
    from .core import random_hermitian, random_unitary

    s = random_unitary(n_ports, rng) if n_ports else np.zeros((0, 0))
    ls = tuple((rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2 * dim)
               for _ in range(n_ports))
    return SLHTriple(s, ls, random_hermitian(dim, rng))


# --------------------------------------------------------------------------
# network expressions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Component:
    name: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Series:
    """Children in signal-flow order."""

    children: tuple
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Concat:
    children: tuple
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


_TOKEN = re.compile(r"\s+|#[^\n]*|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[;+()])")


def _tokenize(text: str) -> list[tuple[str, str, int, int]]:
    tokens = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise NetworkError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        if m.lastgroup is not None:
            tokens.append((m.lastgroup, m.group(), line, m.start() - line_start + 1))
        chunk = m.group()
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = m.start() + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(("end", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, tok, expected: str):
        found = "end of input" if tok[0] == "end" else repr(tok[1])
        raise NetworkError(f"expected {expected}, found {found}", tok[2], tok[3])

    def expr(self):
        first = self.peek()
        parts = [self.term()]
        while self.peek()[1] == ";":
            self.take()
            parts.append(self.term())
        return parts[0] if len(parts) == 1 else Series(tuple(parts), first[2], first[3])

    def term(self):
        first = self.peek()
        parts = [self.atom()]
        while self.peek()[1] == "+":
            self.take()
            parts.append(self.atom())
        return parts[0] if len(parts) == 1 else Concat(tuple(parts), first[2], first[3])

    def atom(self):
        tok = self.peek()
        if tok[0] == "name":
            self.take()
            return Component(tok[1], tok[2], tok[3])
        if tok[1] == "(":
            self.take()
            inner = self.expr()
            if self.peek()[1] != ")":
                self.fail(self.peek(), "')'")
            self.take()
            return inner
        self.fail(tok, "a component name or '('")


def parse_network(text: str):
    """Parse a network expression into a tree of Component/Series/Concat nodes."""
    p = _Parser(text)
    tree = p.expr()
    if p.peek()[0] != "end":
        p.fail(p.peek(), "';', '+' or end of input")
    return tree


def format_network(node) -> str:
    """Inverse of :func:`parse_network` up to whitespace and comments."""
    if isinstance(node, Component):
        return node.name
    if isinstance(node, Series):
        parts = []
        for c in node.children:
            s = format_network(c)
            parts.append(f"({s})" if isinstance(c, Series) else s)
        return " ; ".join(parts)
    if isinstance(node, Concat):
        parts = []
        for c in node.children:
            s = format_network(c)
            parts.append(f"({s})" if isinstance(c, (Series, Concat)) else s)
        return " + ".join(parts)
    raise TypeError(f"not a network node: {node!r}")


def reduce_network(node, components: Mapping[str, SLHTriple]) -> SLHTriple:
    """Fold a parsed network into one triple, innermost nodes first."""
    if isinstance(node, Component):
        if node.name not in components:
            raise NetworkError(f"undefined component {node.name!r}", node.line, node.col)
        return components[node.name]
    if isinstance(node, Series):
        acc = reduce_network(node.children[0], components)
        for child in node.children[1:]:
            nxt = reduce_network(child, components)
            if nxt.n_ports != acc.n_ports:
                raise NetworkError(
                    f"series port mismatch: {acc.n_ports} ports feed {nxt.n_ports}",
                    child.line, child.col)
            if nxt.dim != acc.dim:
                raise NetworkError("series components act on different system spaces",
                                   child.line, child.col)
            acc = slh_series(nxt, acc)
        return acc
    if isinstance(node, Concat):
        acc = reduce_network(node.children[0], components)
        for child in node.children[1:]:
            nxt = reduce_network(child, components)
            if nxt.dim != acc.dim:
                raise NetworkError("concatenated components act on different system spaces",
                                   child.line, child.col)
            acc = slh_concat(acc, nxt)
        return acc
    raise TypeError(f"not a network node: {node!r}")


def load_components(obj: Mapping) -> dict[str, SLHTriple]:
    """Component table from JSON: ``{name: {"S": ..., "L": [...], "H": ...}}``."""
    table = obj.get("components", obj)
    out = {}
    for name, spec in table.items():
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
            raise NetworkError(f"invalid component name {name!r}")
        out[name] = SLHTriple.from_json(spec)
    return out
