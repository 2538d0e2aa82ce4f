"""Numerical lab for the one-dimensional Peierls-Nabarro equation with an order-1 Levy operator.

Modules: ``nonlocal_operator`` (I1 on grids and lines), ``physics_models``
(potentials, forcings, layer), ``evolution`` (IMEX solvers), ``effective_hamiltonian``
(cell problem and Hbar tables), ``hull_ansatz`` (corrector, lattice sums,
ansatz residual, Orowan sweep), ``homogenized_hj`` (monotone HJ scheme) and ``cli``.
"""

__version__ = "0.1.0"

from .errors import (BudgetExceededError, ConvergenceError, InvalidConfigurationError,
                     OutOfHullError, PNLabError, StabilityError)

__all__ = ["__version__", "PNLabError", "InvalidConfigurationError", "StabilityError",
           "ConvergenceError", "OutOfHullError", "BudgetExceededError"]
