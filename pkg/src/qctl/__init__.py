"""Finite-dimensional quantum control toolkit.

Submodules
----------
core
    States, observables, measurement, operator bases and superoperators.
dynamics
    Closed-system propagation and Markovian master equations.
analysis
    Lie-algebraic controllability, steady states and accessibility.
synthesis
    Lyapunov control, GRAPE and dynamical decoupling.
feedback
    Stochastic master equations and measurement-based feedback.
networks
    SLH algebra and network expressions.
cli
    Batch command-line front end.
"""
__version__ = "0.1.0"

from .core import (ATOL, DimensionError, InvalidStateError, NumericalError, Observable,  # noqa: E402
                   bloch_from_density, coherence_vector, density_from_bloch, density_matrix,
                   expectation, fidelity, gell_mann_basis, measure, partial_trace, pauli,
                   trace_distance)
from .dynamics import (ControlProblem, LindbladModel, canonicalize, decay_model,  # noqa: E402
                       lindblad_superop, mme_propagate, propagator, unital_qubit_model)
from .analysis import (affine_accessibility, gas_check, is_operator_controllable,  # noqa: E402
                       lie_closure, majorizes, steady_states, sufficient_controllability)
from .synthesis import (DDProtocol, GrapeProblem, LyapunovDesign, dd_simulate,  # noqa: E402
                        grape_optimize, lyapunov_simulate)
from .feedback import (DEFAULT_BACKEND, PatchedLawConfig, SMEModel, sme_ensemble,  # noqa: E402
                       sme_trajectory, synthesize_feedback)
from .networks import (SLHTriple, parse_network, reduce_network, slh_concat,  # noqa: E402
                       slh_series, slh_to_mme)

__all__ = [
    "ATOL", "DimensionError", "InvalidStateError", "NumericalError", "Observable",
    "bloch_from_density", "coherence_vector", "density_from_bloch", "density_matrix",
    "expectation", "fidelity", "gell_mann_basis", "measure", "partial_trace", "pauli",
    "trace_distance",
    "ControlProblem", "LindbladModel", "canonicalize", "decay_model", "lindblad_superop",
    "mme_propagate", "propagator", "unital_qubit_model",
    "affine_accessibility", "gas_check", "is_operator_controllable", "lie_closure", "majorizes",
    "steady_states", "sufficient_controllability",
    "DDProtocol", "GrapeProblem", "LyapunovDesign", "dd_simulate", "grape_optimize",
    "lyapunov_simulate",
    "DEFAULT_BACKEND", "PatchedLawConfig", "SMEModel", "sme_ensemble", "sme_trajectory",
    "synthesize_feedback",
    "SLHTriple", "parse_network", "reduce_network", "slh_concat", "slh_series", "slh_to_mme",
]
