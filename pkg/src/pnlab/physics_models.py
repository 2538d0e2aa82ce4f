"""Periodic misfit potential, periodic forcing, and the layer solution.

The default potential is W(v) = (1 - cos 2 pi v) / (4 pi^2), so that
W'(v) = sin(2 pi v) / (2 pi) and alpha = W''(0) = 1.  For this potential and
the half-Laplacian the layer solution is phi(x) = 1/2 + arctan(x)/pi.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.integrate import trapezoid
from scipy.interpolate import PchipInterpolator

from .errors import ConvergenceError, InvalidConfigurationError
from .nonlocal_operator import (HALF_LAPLACIAN_G0, LevyKernel1D, LineOperator, LineProfile,
                                TailModel, apply_line)

TWO_PI = 2.0 * math.pi


def _sup_bound(f, df_bound: float, samples: int) -> float:
    """Certified sup|f| on [0, 1) for a 1-periodic f with |f''| <= df_bound."""
    v = np.linspace(0.0, 1.0, samples, endpoint=False)
    spacing = 1.0 / samples
    # at an interior extremum f' = 0, so the nearest sample is off by <= |f''| (h/2)^2 / 2
    return float(np.abs(f(v)).max() + df_bound * spacing**2 / 8)


@dataclass(frozen=True)
class PeriodicPotential:
    """W(v) = sum_m b_m (1 - cos(2 pi m v)), m = 1..len(coefficients)."""

    coefficients: tuple[float, ...] = (1.0 / (4 * math.pi**2),)
    alpha: float = field(init=False)
    w1_sup: float = field(init=False)
    w2_sup: float = field(init=False)

    def __post_init__(self):
        b = tuple(float(c) for c in self.coefficients)
        if not b or not all(math.isfinite(c) for c in b):
            raise InvalidConfigurationError("potential needs at least one finite coefficient")
        object.__setattr__(self, "coefficients", b)
        m = np.arange(1, len(b) + 1)
        bb = np.asarray(b)
        object.__setattr__(self, "alpha", float(np.sum(bb * (TWO_PI * m) ** 2)))
        d3 = float(np.sum(np.abs(bb) * (TWO_PI * m) ** 3))
        d4 = float(np.sum(np.abs(bb) * (TWO_PI * m) ** 4))
        samples = 4096 * len(b)
        object.__setattr__(self, "w1_sup", _sup_bound(lambda v: self.eval(v)[1], d3, samples))
        object.__setattr__(self, "w2_sup", _sup_bound(lambda v: self.eval(v)[2], d4, samples))

    @property
    def _modes(self):
        return np.arange(1, len(self.coefficients) + 1), np.asarray(self.coefficients)

    def eval(self, v):
        """Return (W, W', W'') at ``v`` (scalar or array)."""
        m, b = self._modes
        v = np.asarray(v, dtype=float)
        arg = TWO_PI * np.multiply.outer(v, m)
        c, s = np.cos(arg), np.sin(arg)
        W = (b * (1 - c)).sum(-1)
        W1 = (b * TWO_PI * m * s).sum(-1)
        W2 = (b * (TWO_PI * m) ** 2 * c).sum(-1)
        return W, W1, W2

    def dW(self, v):
        if len(self.coefficients) == 1:
            b = self.coefficients[0]
            return b * TWO_PI * np.sin(TWO_PI * np.asarray(v, dtype=float))
        return self.eval(v)[1]

    def d2W(self, v):
        return self.eval(v)[2]

    def d3W(self, v):
        m, b = self._modes
        arg = TWO_PI * np.multiply.outer(np.asarray(v, dtype=float), m)
        return (-b * (TWO_PI * m) ** 3 * np.sin(arg)).sum(-1)

    def is_w_class(self, samples: int = 20000) -> bool:
        """W > 0 strictly inside (0, 1) and alpha > 0, checked on samples."""
        v = np.linspace(0, 1, samples + 1)[1:-1]
        return bool(self.alpha > 0 and np.all(self.eval(v)[0] > 0))

    def odd_derivative(self) -> bool:
        """W'(-s) = -W'(s); always true for cosine series."""
        return True

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(list(self.coefficients)).encode()).hexdigest()[:16]


def eval_potential(pot: PeriodicPotential, v):
    W, W1, W2 = pot.eval(v)
    if np.ndim(W) == 0:
        return float(W), float(W1), float(W2)
    return W, W1, W2


@dataclass(frozen=True)
class ForcingMode:
    j: int
    k: int
    a: float
    theta: float = 0.0

    def __post_init__(self):
        if int(self.j) != self.j or int(self.k) != self.k:
            raise InvalidConfigurationError("forcing frequencies must be integers")


@dataclass(frozen=True)
class Forcing:
    """sigma(tau, y) = sum a cos(2 pi (j tau + k y) + theta); 1-periodic in both variables."""

    modes: tuple[ForcingMode, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(
            m if isinstance(m, ForcingMode) else ForcingMode(**m) for m in self.modes))

    def __call__(self, tau, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(np.asarray(tau), y).shape)
        for md in self.modes:
            out = out + md.a * np.cos(TWO_PI * (md.j * tau + md.k * y) + md.theta)
        return out

    @property
    def is_zero(self) -> bool:
        return all(md.a == 0 for md in self.modes)

    @property
    def sup(self) -> float:
        return float(sum(abs(md.a) for md in self.modes))

    @property
    def lipschitz(self) -> float:
        return float(sum(abs(md.a) * TWO_PI * math.hypot(md.j, md.k) for md in self.modes))

    @property
    def space_independent(self) -> bool:
        return all(md.k == 0 or md.a == 0 for md in self.modes)

    def is_even_in_y(self) -> bool:
        """Sufficient mode-wise test for sigma(tau, -y) = sigma(tau, y)."""
        return all(md.a == 0 or md.k == 0 or (md.j == 0 and abs(math.sin(md.theta)) < 1e-12)
                   for md in self.modes)

    def is_odd_in_y(self) -> bool:
        """Sufficient mode-wise test for sigma(tau, -y) = -sigma(tau, y)."""
        return all(md.a == 0 or (md.k != 0 and md.j == 0 and abs(math.cos(md.theta)) < 1e-12)
                   for md in self.modes)

    def digest(self) -> str:
        payload = [[m.j, m.k, m.a, m.theta] for m in self.modes]
        return hashlib.sha256(json.dumps(payload).encode()).hexdigest()[:16]


def eval_forcing(f: Forcing, tau: float, y: float) -> float:
    return float(f(tau, y))


# ---------------------------------------------------------------------------
# Layer solution
# ---------------------------------------------------------------------------

def closed_form_layer(x):
    """(phi, phi', phi'') of the arctan layer for the default potential."""
    x = np.asarray(x, dtype=float)
    phi = 0.5 + np.arctan(x) / math.pi
    d1 = 1.0 / (math.pi * (1 + x * x))
    d2 = -2 * x / (math.pi * (1 + x * x) ** 2)
    if phi.ndim == 0:
        return float(phi), float(d1), float(d2)
    return phi, d1, d2


@dataclass(frozen=True)
class LayerProfile:
    """Layer phi on [-R, R] with derivatives and far-field tail phi ~ H(x) + K/x."""

    profile: LineProfile
    dphi: np.ndarray
    d2phi: np.ndarray
    potential: PeriodicPotential
    closed_form: bool
    residual: float = float("nan")
    tail_fit: float = float("nan")

    @property
    def radius(self) -> float:
        return self.profile.radius

    @property
    def nodes(self) -> np.ndarray:
        return self.profile.nodes

    @property
    def phi(self) -> np.ndarray:
        return self.profile.values

    @property
    def tail_coefficient(self) -> float:
        """Theoretical far-field coefficient: phi - H(x) ~ -1/(alpha pi x)."""
        return -1.0 / (self.potential.alpha * math.pi)

    def evaluate(self, x):
        """phi, phi', phi'' anywhere on the line (closed form, or spline + far-field model)."""
        x = np.asarray(x, dtype=float)
        if self.closed_form:
            return closed_form_layer(x)
        K = self.tail_coefficient
        inside = np.abs(x) <= self.radius
        phi = np.empty_like(x)
        d1 = np.empty_like(x)
        d2 = np.empty_like(x)
        spl = self.profile._spline
        xi = x[inside]
        phi[inside], d1[inside], d2[inside] = spl(xi), spl(xi, 1), spl(xi, 2)
        xo = x[~inside]
        phi[~inside] = (xo > 0) + K / xo
        d1[~inside] = -K / xo**2
        d2[~inside] = 2 * K / xo**3
        return phi, d1, d2


def _fit_dphi_tail(x, dphi):
    """Least-squares K in phi' ~ K/x^2 over R/4 <= |x| <= R/2."""
    R = np.abs(x).max()
    win = (np.abs(x) >= R / 4) & (np.abs(x) <= R / 2)
    g = 1.0 / x[win] ** 2
    return float(np.dot(g, dphi[win]) / np.dot(g, g))


def closed_form_layer_profile(R: float = 100.0, n: int = 4001,
                              potential: PeriodicPotential | None = None) -> LayerProfile:
    pot = potential or PeriodicPotential()
    x = np.linspace(-R, R, n)
    phi, d1, d2 = closed_form_layer(x)
    prof = LineProfile(R, phi, TailModel.step(0.0, 1.0, -1.0 / (pot.alpha * math.pi)))
    return LayerProfile(prof, d1, d2, pot, closed_form=True, tail_fit=_fit_dphi_tail(x, d1))


def solve_layer(pot: PeriodicPotential, R: float = 100.0, n: int = 4096,
                kernel: LevyKernel1D | None = None, tol: float = 1e-5,
                max_iter: int = 60) -> LayerProfile:
    """Relax I1[phi] = W'(phi) on [-R, R] with step tails (0, 1) plus the 1/x correction.

    Pseudo-transient continuation: implicit Euler steps of d_t phi = I1[phi] - W'(phi)
    with a geometrically growing step, i.e. damped Newton in the limit.  The
    initial guess is the arctan profile.  The result is translated so that
    phi(0) = 1/2 by monotone interpolation.
    """
    kernel = kernel or LevyKernel1D(HALF_LAPLACIAN_G0, 1.0)
    if not pot.is_w_class():
        raise InvalidConfigurationError("solve_layer needs a potential in the (W) class")
    op = LineOperator(R, n, kernel)
    x = op.nodes
    tail = TailModel.step(0.0, 1.0, -1.0 / (pot.alpha * math.pi))
    lo, hi = op.edge_values(tail)
    # initial ramp matched to the potential's core width
    phi = 0.5 + np.arctan(pot.alpha * x) / math.pi
    phi[0], phi[-1] = lo, hi
    A = op.matrix[1:-1, 1:-1]
    t = op.tail_vector(tail)[1:-1] + op.matrix[1:-1, 0] * lo + op.matrix[1:-1, -1] * hi
    dt = 1.0
    res = math.inf
    for _ in range(max_iter):
        u = phi[1:-1]
        F = A @ u + t - pot.dW(u)
        res = float(np.abs(F).max())
        if res <= tol * 1e-3:
            break
        J = A - np.diag(pot.d2W(u))
        step = scipy.linalg.solve(np.eye(u.size) / dt - J, F, assume_a="gen")
        phi[1:-1] = u + step
        dt = min(dt * 4.0, 1e12)
    u = phi[1:-1]
    res = float(np.abs(A @ u + t - pot.dW(u)).max())
    if res > tol:
        raise ConvergenceError(f"layer relaxation stalled at residual {res:.3e}")
    if np.any(np.diff(phi) <= 0):
        raise ConvergenceError("relaxed layer is not strictly increasing")

    # phase fix phi(0) = 1/2
    inv = PchipInterpolator(phi, x)
    shift = float(inv(0.5))
    if abs(shift) > 1e-12:
        fwd = PchipInterpolator(x, phi, extrapolate=True)
        phi = fwd(x + shift)
        phi[0], phi[-1] = lo, hi
    prof = LineProfile(R, phi, tail)
    d1 = prof._spline(x, 1)
    d2 = prof._spline(x, 2)
    return LayerProfile(prof, d1, d2, pot, closed_form=False, residual=res,
                        tail_fit=_fit_dphi_tail(x, d1))


def layer_residual(layer: LayerProfile, kernel: LevyKernel1D | None = None,
                   window: float | None = None) -> float:
    """sup |I1[phi] - W'(phi)| over nodes within ``window`` (default R/2)."""
    kernel = kernel or LevyKernel1D(HALF_LAPLACIAN_G0, 1.0)
    x = layer.nodes
    window = layer.radius / 2 if window is None else window
    pts = x[np.abs(x) <= window]
    lhs = apply_line(layer.profile, kernel, pts)
    return float(np.abs(lhs - layer.potential.dW(layer.profile(pts))).max())


def compute_c0(layer: LayerProfile) -> float:
    """c0 = 1 / int (phi')^2, trapezoid on [-R, R] plus the fitted 1/x^2 tail."""
    d1 = layer.dphi
    if np.any(d1 <= 0):
        raise InvalidConfigurationError("degenerate layer: phi' <= 0 somewhere")
    x = layer.nodes
    core = float(trapezoid(d1 * d1, x))
    K = layer.tail_fit
    tail = 2 * K * K / (3 * layer.radius**3)
    return 1.0 / (core + tail)
