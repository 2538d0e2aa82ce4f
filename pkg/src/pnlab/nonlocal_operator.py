"""Order-1 Levy operator on periodic grids and on truncated whole-line profiles.

In one space dimension the operator reads

    I1[u](x) = g0 * PV int (u(x+z) - u(x)) / z**2 dz
             = g0 * int_0^inf (u(x+z) + u(x-z) - 2 u(x)) / z**2 dz

with Fourier symbol m(xi) = -pi * g0 * |xi|.  ``g0 = 1/pi`` is the
half-Laplacian normalisation, I1 = -(-Delta)^(1/2).

Three evaluation paths are provided:

* ``apply_spectral``: exact on the trigonometric interpolant (default path).
* ``apply_quadrature``: direct quadrature of the split integral with
  periodic images; used to cross-check the spectral path.
* ``apply_line`` / ``LineOperator``: profiles on [-R, R] with an analytic
  tail model beyond the window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import toeplitz
from scipy.special import polygamma

from .errors import InvalidConfigurationError

HALF_LAPLACIAN_G0 = 1.0 / math.pi


# ---------------------------------------------------------------------------
# Periodic substrate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic grid with ``n`` nodes x_j = j*h on [0, period)."""

    period: float
    n: int

    def __post_init__(self):
        if not (self.period > 0 and math.isfinite(self.period)):
            raise InvalidConfigurationError(f"grid period must be positive, got {self.period}")
        n = int(self.n)
        if n != self.n or n < 8 or n & (n - 1):
            raise InvalidConfigurationError(
                f"grid node count must be a power of two >= 8, got {self.n}")
        object.__setattr__(self, "period", float(self.period))
        object.__setattr__(self, "n", n)

    @property
    def spacing(self) -> float:
        return self.period / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n) * self.spacing

    def wavenumbers(self) -> np.ndarray:
        """Integer wavenumbers k matching ``np.fft.rfft`` ordering."""
        return np.arange(self.n // 2 + 1)


@dataclass(frozen=True)
class ScalarField:
    """Immutable grid function."""

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise InvalidConfigurationError(
                f"field has {v.size} samples, grid expects {self.grid.n}")
        if not np.all(np.isfinite(v)):
            raise InvalidConfigurationError("field contains non-finite samples")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: PeriodicGrid, f) -> "ScalarField":
        return cls(grid, f(grid.nodes))

    def mean(self) -> float:
        return float(self.values.mean())


@dataclass(frozen=True)
class LevyKernel1D:
    """Kernel strength ``g0`` and split radius ``r`` of the 1-D Levy measure g0/|z|^2."""

    g0: float = HALF_LAPLACIAN_G0
    r: float = 1.0

    def __post_init__(self):
        if not self.g0 > 0:
            raise InvalidConfigurationError(f"kernel strength g0 must be > 0, got {self.g0}")
        if not self.r > 0:
            raise InvalidConfigurationError(f"split radius r must be > 0, got {self.r}")


def levy_symbol(k, kernel: LevyKernel1D, period: float):
    """Fourier multiplier of I1 for integer wavenumber(s) ``k`` on a period-``period`` cell."""
    k = np.asarray(k, dtype=float)
    m = -math.pi * kernel.g0 * np.abs(2.0 * math.pi * k / period)
    return float(m) if m.ndim == 0 else m


def rfft_symbol(grid: PeriodicGrid, kernel: LevyKernel1D) -> np.ndarray:
    return levy_symbol(grid.wavenumbers(), kernel, grid.period)


def spectral_apply_array(values: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    """Apply a precomputed rfft symbol to raw samples."""
    return np.fft.irfft(np.fft.rfft(values) * symbol, len(values))


def apply_spectral(field: ScalarField, kernel: LevyKernel1D) -> ScalarField:
    out = spectral_apply_array(field.values, rfft_symbol(field.grid, kernel))
    return ScalarField(field.grid, out)


# ---------------------------------------------------------------------------
# Direct quadrature with periodic images
# ---------------------------------------------------------------------------

def _outer_residue_weights(n: int, M: int, cutoff: int | None) -> np.ndarray:
    """S[rho] = sum over m >= M, m = rho (mod n) of w_m / m^2, half weight at m = M.

    With ``cutoff=None`` the image sum runs to infinity in closed form via the
    trigamma function; otherwise it stops at m = cutoff*n (half weight there).
    """
    S = np.zeros(n)
    if cutoff is None:
        rho = np.arange(n)
        q0 = np.maximum(np.ceil((M - rho) / n), 0)
        q0[rho == 0] = np.maximum(q0[rho == 0], 1)
        S = polygamma(1, (rho + q0 * n) / n) / n**2
    else:
        m = np.arange(M, cutoff * n + 1, dtype=float)
        w = 1.0 / m**2
        w[-1] *= 0.5
        np.add.at(S, (m % n).astype(int), w)
    S[M % n] -= 0.5 / M**2
    return S


def apply_quadrature(field: ScalarField, kernel: LevyKernel1D,
                     cutoff: int | None = None) -> ScalarField:
    """Evaluate I1 = I1^{1,r} + I1^{2,r} by trapezoidal quadrature in z.

    Both pieces use the symmetric second-difference integrand
    (u(x+z) + u(x-z) - 2u(x))/z^2, which removes the gradient term of the
    inner integral exactly.  The inner/outer boundary snaps to the grid node
    at or below ``r``.  ``cutoff`` is the number of periods kept in the outer
    image sum; the truncated remainder is replaced by its mean-value estimate
    2*g0*(mean(u) - u(x))/(cutoff*period).  ``cutoff=None`` sums all images
    exactly.
    """
    grid = field.grid
    h = grid.spacing
    if kernel.r < 2 * h * (1 - 1e-12):
        raise InvalidConfigurationError(
            f"split radius r={kernel.r} must be at least 2h={2 * h}")
    u = field.values
    M = int(math.floor(kernel.r / h + 1e-9))

    # z = 0 endpoint of the trapezoid: F(0) = u''(x) from the second difference
    acc = (np.roll(u, -1) + np.roll(u, 1) - 2 * u) / (2 * h)

    inner = np.zeros_like(u)
    for m in range(1, M + 1):
        w = 0.5 if m == M else 1.0
        inner += w * (np.roll(u, -m) + np.roll(u, m) - 2 * u) / m**2
    acc += inner / h

    S = _outer_residue_weights(grid.n, M, cutoff)
    Shat = np.fft.rfft(S)
    outer = np.fft.irfft(np.fft.rfft(u) * 2 * Shat.real, grid.n) - 2 * u * S.sum()
    acc += outer / h
    if cutoff is not None:
        acc += 2 * (u.mean() - u) / (cutoff * grid.period)
    return ScalarField(grid, kernel.g0 * acc)


# ---------------------------------------------------------------------------
# Whole-line profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailModel:
    """Asymptotics u(y) = level + coef/y beyond the window, per side."""

    kind: str
    left_level: float = 0.0
    right_level: float = 0.0
    left_coef: float = 0.0
    right_coef: float = 0.0

    def __post_init__(self):
        if self.kind not in ("step", "algebraic", "zero"):
            raise InvalidConfigurationError(f"unknown tail model {self.kind!r}")

    @classmethod
    def step(cls, left: float, right: float, coef: float = 0.0) -> "TailModel":
        """Levels ``left``/``right`` with an optional common algebraic correction."""
        return cls("step", left, right, coef, coef)

    @classmethod
    def algebraic(cls, coef: float) -> "TailModel":
        return cls("algebraic", 0.0, 0.0, coef, coef)

    @classmethod
    def zero(cls) -> "TailModel":
        return cls("zero")

    def value(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore"):
            right = self.right_level + self.right_coef / y
            left = self.left_level + self.left_coef / y
        return np.where(y > 0, right, left)


@dataclass(frozen=True)
class LineProfile:
    """Samples of a whole-line function on ``linspace(-R, R, n)`` plus a tail model."""

    radius: float
    values: np.ndarray
    tail: TailModel | None
    _spline: CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidConfigurationError("line radius must be positive")
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 8:
            raise InvalidConfigurationError("line profile needs at least 8 samples")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_spline", CubicSpline(self.nodes, v))

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(-self.radius, self.radius, self.values.size)

    @property
    def spacing(self) -> float:
        return 2 * self.radius / (self.values.size - 1)

    def __call__(self, x):
        """Spline inside the window, tail model outside."""
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= self.radius
        out = np.empty_like(x)
        out[inside] = self._spline(x[inside])
        if np.any(~inside):
            if self.tail is None:
                raise InvalidConfigurationError("profile has no tail model")
            out[~inside] = self.tail.value(x[~inside])
        return out


def _tail_integral(a, s):
    """J(a, s) = int_a^inf dz / (z^2 (z + s)) for a > 0, a + s > 0."""
    a = np.asarray(a, dtype=float)
    q = np.asarray(s, dtype=float) / a
    small = np.abs(q) < 1e-4
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = (q - np.log1p(q)) / q**2
    series = 0.5 - q / 3 + q**2 / 4 - q**3 / 5
    return np.where(small, series, exact) / a**2


def _tail_terms(tail: TailModel, x, u_x, a, b):
    """Analytic contribution of |z| beyond the window, divided by g0."""
    right = (tail.right_level - u_x) / a + tail.right_coef * _tail_integral(a, x)
    left = (tail.left_level - u_x) / b - tail.left_coef * _tail_integral(b, -x)
    return right + left


def apply_line(profile: LineProfile, kernel: LevyKernel1D, x, chunk: int = 128) -> np.ndarray:
    """Evaluate I1 of a whole-line profile at points at least ``r`` inside the window."""
    if profile.tail is None:
        raise InvalidConfigurationError("apply_line needs a tail model")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    R, h = profile.radius, profile.spacing
    if np.any(np.abs(x) > R - kernel.r + 1e-12):
        raise InvalidConfigurationError(
            f"evaluation points must lie within [-R+r, R-r] = [{-R + kernel.r}, {R - kernel.r}]")
    out = np.empty_like(x)
    spline = profile._spline
    uR, uL = profile.values[-1], profile.values[0]
    for start in range(0, x.size, chunk):
        xs = x[start:start + chunk]
        a, b = R - xs, R + xs
        Ma = np.floor(a / h + 1e-9).astype(int)
        Mb = np.floor(b / h + 1e-9).astype(int)
        mmax = int(max(Ma.max(), Mb.max()))
        m = np.arange(1, mmax + 1)
        z = m * h
        ux = spline(xs)
        acc = (spline(xs + h) + spline(xs - h) - 2 * ux) / (2 * h)
        for side, M, edge, uedge in ((1.0, Ma, a, uR), (-1.0, Mb, b, uL)):
            pts = xs[:, None] + side * z[None, :]
            valid = m[None, :] <= M[:, None]
            pts = np.where(valid, pts, xs[:, None])
            G = (spline(pts) - ux[:, None]) / z[None, :]**2
            w = np.where(valid, h, 0.0)
            w[np.arange(xs.size), M - 1] = h / 2
            acc += (w * G).sum(axis=1)
            frac = edge - M * h
            G_end = G[np.arange(xs.size), M - 1]
            acc += 0.5 * frac * (G_end + (uedge - ux) / edge**2)
        acc += _tail_terms(profile.tail, xs, ux, a, b)
        out[start:start + chunk] = kernel.g0 * acc
    return out


class LineOperator:
    """Dense node-wise discretisation of I1 on ``linspace(-R, R, n)``.

    For interior nodes, I1[u]_j = (A @ u)_j + (tail vector)_j.  Boundary rows
    of A are zero; solvers fix the two edge samples from the tail model.  The
    node equations coincide with ``apply_line`` evaluated at the nodes.
    """

    def __init__(self, radius: float, n: int, kernel: LevyKernel1D):
        self.radius = float(radius)
        self.n = int(n)
        self.kernel = kernel
        self.nodes = np.linspace(-radius, radius, n)
        h = self.spacing = 2 * radius / (n - 1)
        col = np.zeros(n)
        d = np.arange(1, n)
        col[1:] = 1.0 / (h * d**2)
        A = toeplitz(col)
        A[:, 0] *= 0.5
        A[:, -1] *= 0.5
        A[0, :] = 0.0
        A[-1, :] = 0.0
        j = np.arange(1, n - 1)
        self._a = self.radius - self.nodes[j]
        self._b = self.radius + self.nodes[j]
        diag = -A[j].sum(axis=1) - 1.0 / self._a - 1.0 / self._b
        A[j, j] = diag - 1.0 / h
        A[j, j + 1] += 0.5 / h
        A[j, j - 1] += 0.5 / h
        A *= kernel.g0
        self.matrix = A

    def tail_vector(self, tail: TailModel) -> np.ndarray:
        t = np.zeros(self.n)
        x = self.nodes[1:-1]
        t[1:-1] = self.kernel.g0 * (
            tail.right_level / self._a + tail.left_level / self._b
            + tail.right_coef * _tail_integral(self._a, x)
            - tail.left_coef * _tail_integral(self._b, -x))
        return t

    def apply(self, values: np.ndarray, tail: TailModel) -> np.ndarray:
        """I1 at every node; the two edge entries are returned as NaN."""
        out = self.matrix @ values + self.tail_vector(tail)
        out[[0, -1]] = np.nan
        return out

    def edge_values(self, tail: TailModel) -> tuple[float, float]:
        return float(tail.value(-self.radius)), float(tail.value(self.radius))
