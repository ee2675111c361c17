"""Hypothesis strategies for states and operators."""
import numpy as np
from hypothesis import strategies as st

from qctl.core import random_density, random_hermitian, random_unitary

seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims = st.integers(min_value=2, max_value=4)


@st.composite
def densities(draw, dim=None):
    n = draw(dims) if dim is None else dim
    return random_density(n, np.random.default_rng(draw(seeds)))


@st.composite
def hermitians(draw, dim=None, traceless=False):
    n = draw(dims) if dim is None else dim
    return random_hermitian(n, np.random.default_rng(draw(seeds)), traceless=traceless)


@st.composite
def unitaries(draw, dim=None):
    n = draw(dims) if dim is None else dim
    return random_unitary(n, np.random.default_rng(draw(seeds)))
