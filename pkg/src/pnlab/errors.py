"""Exception types shared by the solvers."""


class PNLabError(Exception):
    """Base class for all errors raised by pnlab."""


class InvalidConfigurationError(PNLabError, ValueError):
    """A numerical parameter or input violates a documented constraint."""


class StabilityError(InvalidConfigurationError):
    """Time step exceeds the monotonicity / stability bound."""


class ConvergenceError(PNLabError, RuntimeError):
    """An iterative solve did not reach its tolerance within budget."""


class OutOfHullError(PNLabError, ValueError):
    """A (p, L) query falls outside the tabulated effective Hamiltonian."""

    def __init__(self, message, node=None, p=None, L=None):
        super().__init__(message)
        self.node = node
        self.p = p
        self.L = L


class BudgetExceededError(PNLabError, RuntimeError):
    """A time integration would exceed its step budget."""
