"""Data-driven models for local trajectory optimization.

Simulators, perturbation sampling, basis-function and neural surrogates,
linear time-varying identification, ILQR, and the diagnostics that compare
them.
"""

__version__ = "0.1.0"
