"""Corrector psi, truncated hull sums and the residual of the hull-function ansatz.

For small density p = delta p0 and stress L = delta L0 the hull function is
approximated by the truncated sum

    s(x) = L delta / alpha - n + sum_{|i| <= n} phi(x_i) + delta sum psi(x_i),
    x_i = (x - i) / (delta |p0|),

and its quality is measured by the residual

    NL[s] = lam * s' - delta |p0| I1[s] + W'(s) - delta L,
    lam = delta^2 c0 |p0| L.

The corrector psi solves the linearised layer equation
I1[psi] = W''(phi) psi + (L/alpha)(W''(phi) - alpha) + c phi', c = L c0,
normalised by <psi, phi'> = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import numpy as np
import scipy.linalg
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline

from .effective_hamiltonian import CellSpec, map_cells
from .errors import ConvergenceError, InvalidConfigurationError
from .nonlocal_operator import (HALF_LAPLACIAN_G0, LevyKernel1D, LineOperator, LineProfile,
                                TailModel, apply_line)
from .physics_models import LayerProfile, compute_c0


# ---------------------------------------------------------------------------
# Corrector
# ---------------------------------------------------------------------------

def _fit_inverse(x, v) -> float:
    """Least-squares K in v ~ K/x."""
    g = 1.0 / x
    return float(np.dot(g, v) / np.dot(g, g))


@dataclass(frozen=True)
class PsiProfile:
    """Corrector on [-R, R] with sided algebraic tails psi ~ K_left/x, K_right/x."""

    profile: LineProfile
    dpsi: np.ndarray
    d2psi: np.ndarray
    operator_values: np.ndarray
    layer: LayerProfile
    L0: float
    c: float
    K2: float
    K3: float
    multiplier: float
    residual: float

    @property
    def nodes(self) -> np.ndarray:
        return self.profile.nodes

    @property
    def psi(self) -> np.ndarray:
        return self.profile.values

    @property
    def radius(self) -> float:
        return self.profile.radius

    def evaluate(self, x):
        """psi, psi', psi'' on the whole line."""
        x = np.asarray(x, dtype=float)
        tail = self.profile.tail
        inside = np.abs(x) <= self.radius
        out = [np.empty_like(x) for _ in range(3)]
        spl = self.profile._spline
        xi = x[inside]
        for d in range(3):
            out[d][inside] = spl(xi, d)
        xo = x[~inside]
        K = np.where(xo > 0, tail.right_coef, tail.left_coef)
        out[0][~inside] = K / xo
        out[1][~inside] = -K / xo**2
        out[2][~inside] = 2 * K / xo**3
        return tuple(out)

    def source(self, x):
        """Right side of the corrector equation, W''(phi) psi + (L/alpha)(W''(phi) - alpha) + c phi'."""
        pot = self.layer.potential
        phi, d1, _ = self.layer.evaluate(x)
        w2 = pot.d2W(phi)
        return w2 * self.evaluate(x)[0] + self.L0 / pot.alpha * (w2 - pot.alpha) + self.c * d1

    def apply_operator(self, x):
        """I1[psi]: line-operator node values inside R/2 (spline), the equation beyond."""
        x = np.asarray(x, dtype=float)
        win = self.radius / 2
        nodes = self.nodes
        sel = np.abs(nodes) <= win
        spl = CubicSpline(nodes[sel], self.operator_values[sel])
        inside = np.abs(x) <= win
        out = np.empty_like(x)
        out[inside] = spl(x[inside])
        out[~inside] = self.source(x[~inside])
        return out


def solve_psi(layer: LayerProfile, L0: float, kernel: LevyKernel1D | None = None,
              tol: float = 1e-5, extra_source: float = 0.0, check: bool = True) -> PsiProfile:
    """Bordered solve of the corrector equation with <psi, phi'> = 0.

    Unknowns are the interior samples, per side the coefficients of
    psi ~ K/x + C/x^2 (tied to least-squares fits on R/4 <= |x| <= R/2) and
    a multiplier mu on phi'.  The edge samples come from these fits; beyond
    the window only the K/x part enters the operator (the C/x^2 part
    contributes O(C/R^3)).  ``extra_source`` adds extra_source * phi' to the
    right side without adjusting c; the equation residual then grows
    linearly with it.
    """
    kernel = kernel or LevyKernel1D(HALF_LAPLACIAN_G0, 1.0)
    pot = layer.potential
    R, x = layer.radius, layer.nodes
    n = x.size
    op = LineOperator(R, n, kernel)
    A = op.matrix
    d1 = layer.dphi
    w2 = pot.d2W(layer.phi)
    c0 = compute_c0(layer)
    c = L0 * c0
    rhs = L0 / pot.alpha * (w2 - pot.alpha) + c * d1 + extra_source * d1

    j = np.arange(1, n - 1)
    m = n - 2
    tR = op.tail_vector(TailModel("algebraic", right_coef=1.0))[j]
    tL = op.tail_vector(TailModel("algebraic", left_coef=1.0))[j]
    h = op.spacing
    wq = np.full(n, h)
    wq[[0, -1]] = h / 2

    # unknowns: interior samples, (K, C) per side, multiplier
    M = np.zeros((m + 5, m + 5))
    b = np.zeros(m + 5)
    M[:m, :m] = A[np.ix_(j, j)] - np.diag(w2[j])
    iKL, iCL, iKR, iCR, iMu = range(m, m + 5)
    # edge samples psi(-R) = -K_L/R + C_L/R^2, psi(R) = K_R/R + C_R/R^2
    M[:m, iKL] = A[j, 0] / (-R) + tL
    M[:m, iCL] = A[j, 0] / R**2
    M[:m, iKR] = A[j, -1] / R + tR
    M[:m, iCR] = A[j, -1] / R**2
    M[:m, iMu] = -d1[j]
    b[:m] = rhs[j]
    # gauge <psi, phi'> = 0 (trapezoid, edge samples from the tails)
    M[iMu, :m] = wq[j] * d1[j]
    M[iMu, iKL] = wq[0] * d1[0] / (-R)
    M[iMu, iCL] = wq[0] * d1[0] / R**2
    M[iMu, iKR] = wq[-1] * d1[-1] / R
    M[iMu, iCR] = wq[-1] * d1[-1] / R**2
    # per side, (K, C) are the least-squares fit of psi ~ K/x + C/x^2 on R/4..R/2
    for iK, iC, side in ((iKL, iCL, -1), (iKR, iCR, 1)):
        win = (side * x[j] >= R / 4) & (side * x[j] <= R / 2)
        xw = x[j][win]
        B = np.stack([1 / xw, 1 / xw**2], axis=1)
        G = B.T @ B
        for row, basis, g in ((iK, B[:, 0], G[0]), (iC, B[:, 1], G[1])):
            M[row, np.flatnonzero(win)] = basis
            M[row, iK] -= g[0]
            M[row, iC] -= g[1]
    try:
        z = scipy.linalg.solve(M, b)
    except scipy.linalg.LinAlgError as exc:
        raise ConvergenceError("corrector system is singular") from exc
    KL, KR, mu = float(z[iKL]), float(z[iKR]), float(z[iMu])
    psi = np.empty(n)
    psi[1:-1] = z[:m]
    psi[0] = -KL / R + z[iCL] / R**2
    psi[-1] = KR / R + z[iCR] / R**2
    tail = TailModel("algebraic", 0.0, 0.0, KL, KR)
    i1 = A @ psi + op.tail_vector(tail)
    i1[[0, -1]] = np.nan
    res_vec = i1[j] - w2[j] * psi[j] - rhs[j]
    residual = float(np.abs(res_vec).max())
    if check and residual > tol:
        raise ConvergenceError(f"corrector residual {residual:.3e} exceeds {tol:.1e}")
    # edge operator values from the equation so the stored array is finite
    i1[0] = w2[0] * psi[0] + rhs[0]
    i1[-1] = w2[-1] * psi[-1] + rhs[-1]

    prof = LineProfile(R, psi, tail)
    dpsi, d2psi = prof._spline(x, 1), prof._spline(x, 2)
    K2 = 0.5 * (KL + KR)
    win = (np.abs(x) >= R / 4) & (np.abs(x) <= R / 2)
    K3 = float(max(np.max(np.abs(psi[win] - K2 / x[win]) * x[win] ** 2),
                   np.max(np.abs(dpsi[win]) * (1 + x[win] ** 2)),
                   np.max(np.abs(d2psi[win]) * (1 + x[win] ** 2))))
    return PsiProfile(prof, dpsi, d2psi, i1, layer, float(L0), float(c), K2, K3, mu, residual)


def zero_psi(layer: LayerProfile) -> PsiProfile:
    """Corrector for L = 0, identically zero."""
    x = layer.nodes
    z = np.zeros_like(x)
    return PsiProfile(LineProfile(layer.radius, z, TailModel.algebraic(0.0)), z, z.copy(),
                      z.copy(), layer, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


# ---------------------------------------------------------------------------
# Lattice sums
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatticeSums:
    """Partial sums (long double) and their limits (mpmath) at x = i0 + gamma."""

    x: float
    n: int
    i0: int
    gamma: float
    S1: np.longdouble
    S2: np.longdouble
    S3: np.longdouble
    limits: tuple

    def errors(self) -> tuple[float, float, float]:
        """|partial - limit| for S1, S2, S3, evaluated in extended precision."""
        out = []
        for part, lim in zip((self.S1, self.S2, self.S3), self.limits):
            out.append(float(abs(mpmath.mpf(np.format_float_positional(part, unique=True)) - lim)))
        return tuple(out)


def split_point(x: float) -> tuple[int, float]:
    """x = i0 + gamma with gamma in (-1/2, 1/2]."""
    i0 = math.ceil(x - 0.5)
    return i0, x - i0


def lattice_limits(gamma: float):
    """Closed forms of the three sums as n -> infinity (mpmath, 30 digits)."""
    with mpmath.workdps(30):
        g = mpmath.mpf(gamma)
        s1 = mpmath.mpf(0) if g == 0 else mpmath.pi * mpmath.cot(mpmath.pi * g) - 1 / g
        s2 = mpmath.psi(1, 1 + g)
        s3 = mpmath.psi(1, 1 - g)
    return s1, s2, s3


def lattice_sums(x: float, n: int) -> LatticeSums:
    """Partial sums over |i| <= n of 1/(x - i) (i != i0), and of 1/(x - i)^2 for i < i0, i > i0."""
    i0, gamma = split_point(float(x))
    if n <= abs(i0):
        raise InvalidConfigurationError(f"n = {n} must exceed |i0| = {abs(i0)}")
    ld = np.longdouble
    g = ld(gamma)
    # j = i0 - i runs over [i0 - n, i0 + n] without 0; pair +-j to cancel exactly
    J = n - abs(i0)
    jj = np.arange(1, J + 1, dtype=ld)
    sym = (1 / (g + jj) + 1 / (g - jj))
    if i0 > 0:
        extra = np.arange(J + 1, n + i0 + 1, dtype=ld)
    else:
        extra = -np.arange(J + 1, n - i0 + 1, dtype=ld)
    S1 = np.sum(sym[::-1]) + np.sum(1 / (g + extra[::-1]))
    left = np.arange(1, n + i0 + 1, dtype=ld)      # i < i0: x - i = gamma + k
    right = np.arange(1, n - i0 + 1, dtype=ld)     # i > i0: x - i = gamma - k
    S2 = np.sum(1 / (g + left[::-1]) ** 2)
    S3 = np.sum(1 / (right[::-1] - g) ** 2)
    return LatticeSums(float(x), int(n), i0, gamma, S1, S2, S3, lattice_limits(gamma))


# ---------------------------------------------------------------------------
# Ansatz and residual
# ---------------------------------------------------------------------------

def default_truncation(delta: float, p0: float, factor: float = 8.0, floor: int = 64) -> int:
    """n = max(floor, ceil(factor / (delta |p0|)))."""
    return max(floor, math.ceil(factor / (delta * abs(p0))))


@dataclass(frozen=True)
class AnsatzParams:
    delta: float
    p0: float
    L: float
    layer: LayerProfile
    psi: PsiProfile
    n: int | None = None
    kernel: LevyKernel1D = field(default_factory=LevyKernel1D)

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidConfigurationError("delta must be positive")
        if self.p0 == 0:
            raise InvalidConfigurationError("p0 must be non-zero")
        if 1.0 / (self.delta * abs(self.p0)) < 2 - 1e-12:
            raise InvalidConfigurationError("the layer spacing 1/(delta |p0|) must be at least 2")
        if self.n is None:
            object.__setattr__(self, "n", default_truncation(self.delta, self.p0))
        if int(self.n) != self.n or self.n < 1:
            raise InvalidConfigurationError("truncation n must be a positive integer")
        if self.psi.L0 != self.L and not (self.L == 0 and self.psi.c == 0):
            raise InvalidConfigurationError(
                f"corrector was solved for L = {self.psi.L0}, ansatz uses L = {self.L}")

    @property
    def alpha(self) -> float:
        return self.layer.potential.alpha

    @property
    def scale(self) -> float:
        """delta |p0|, the layer width in x."""
        return self.delta * abs(self.p0)

    @property
    def c0(self) -> float:
        return compute_c0(self.layer)

    @property
    def lam_bar(self) -> float:
        return self.delta**2 * self.c0 * abs(self.p0) * self.L

    def points(self, x) -> np.ndarray:
        """x_i for i = -n..n, shape (len(x), 2n+1)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        i = np.arange(-self.n, self.n + 1)
        return (x[:, None] - i[None, :]) / self.scale


def eval_ansatz(params: AnsatzParams, x):
    """(s, s', s'') of the truncated sum at ``x``."""
    xi = params.points(x)
    phi, d1, d2 = params.layer.evaluate(xi)
    psi, q1, q2 = params.psi.evaluate(xi)
    dl = params.delta
    s = params.L * dl / params.alpha - params.n + (phi + dl * psi).sum(axis=1)
    s1 = (d1 + dl * q1).sum(axis=1) / params.scale
    s2 = (d2 + dl * q2).sum(axis=1) / params.scale**2
    return s, s1, s2


def _layer_operator(params: AnsatzParams, pts: np.ndarray) -> np.ndarray:
    """I1[phi] at ``pts``: W'(phi) for the closed form, line operator near the core otherwise."""
    layer = params.layer
    phi = layer.evaluate(pts)[0]
    out = layer.potential.dW(phi)
    if layer.closed_form:
        return out
    win = layer.radius / 2
    nodes = layer.nodes[np.abs(layer.nodes) <= win]
    vals = apply_line(layer.profile, params.kernel, nodes)
    inside = np.abs(pts) <= win
    out[inside] = CubicSpline(nodes, vals)(pts[inside])
    return out


@dataclass(frozen=True)
class ResidualReport:
    x: np.ndarray
    values: np.ndarray
    sup: float
    delta: float
    n: int
    lam_bar: float
    displacement: float

    def __post_init__(self):
        if self.values.size and not math.isclose(self.sup, float(np.abs(self.values).max())):
            raise InvalidConfigurationError("sup-norm must equal the max of the per-point values")


def residual(params: AnsatzParams, x) -> ResidualReport:
    """NL[s] at the points ``x`` (kept well inside the truncation range)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(np.abs(x) > params.n / 2):
        raise InvalidConfigurationError("evaluation points must satisfy |x| <= n/2")
    s, s1, _ = eval_ansatz(params, x)
    xi = params.points(x)
    flat = xi.ravel()
    i1_phi = _layer_operator(params, flat).reshape(xi.shape).sum(axis=1)
    if params.L == 0 and params.psi.c == 0 and not np.any(params.psi.psi):
        i1_psi = np.zeros_like(i1_phi)
    else:
        i1_psi = params.psi.apply_operator(flat).reshape(xi.shape).sum(axis=1)
    lam = params.lam_bar
    pot = params.layer.potential
    nl = lam * s1 - (i1_phi + params.delta * i1_psi) + pot.dW(s) - params.delta * params.L
    return ResidualReport(x, nl, float(np.abs(nl).max()), params.delta, params.n, lam,
                          float(np.abs(s - x).max()))


def period_grid(points: int = 401) -> np.ndarray:
    """One period [-1/2, 1/2] including integer and half-integer points."""
    return np.linspace(-0.5, 0.5, points)


# ---------------------------------------------------------------------------
# Decay envelopes
# ---------------------------------------------------------------------------

@dataclass
class DecayReport:
    constants: dict
    worst_violation: float
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def decay_checks(layer: LayerProfile, psi: PsiProfile | None = None) -> DecayReport:
    """Fit the far-field envelopes of phi and psi on 1 <= |x| <= R/2 and verify them.

    Envelope constants are the tightest values over the sampled range:
    K1 bounds x^2 |phi - H + 1/(alpha pi x)| and (1+x^2)|phi'|, (1+x^2)|phi''|;
    K0 is the lower bound of (1+x^2) phi'.  For psi, K3 bounds
    x^2 |psi - K2/x| and (1+x^2)|psi'|, (1+x^2)|psi''|, and K2 is refitted on
    R/8..R/4 and R/4..R/2 to test its consistency.  ``worst_violation`` is
    the largest excess of any sample over its envelope (<= 0 means all hold).
    """
    R = layer.radius
    x = layer.nodes
    sel = (np.abs(x) >= 1) & (np.abs(x) <= R / 2)
    xs = x[sel]
    env = 1 + xs**2
    phi, d1, d2 = layer.phi[sel], layer.dphi[sel], layer.d2phi[sel]
    H = (xs >= 0).astype(float)
    rem = np.abs(phi - H + 1 / (layer.potential.alpha * math.pi * xs)) * xs**2
    K1 = float(max(rem.max(), (d1 * env).max(), (np.abs(d2) * env).max()))
    K0 = float((d1 * env).min())
    consts = {"K0": K0, "K1": K1, "phi_remainder": float(rem.max())}
    viol = [float(np.max(rem - K1)), float(np.max(d1 * env - K1)), float(K0 - np.min(d1 * env)),
            float(np.max(np.abs(d2) * env - K1))]
    checks = {"phi_K0_positive": K0 > 0, "phi_K1_finite": math.isfinite(K1)}
    if psi is not None:
        q, q1, q2 = psi.psi[sel], psi.dpsi[sel], psi.d2psi[sel]
        K2 = psi.K2
        ax = np.abs(xs)
        inner, outer = (ax >= R / 8) & (ax <= R / 4), (ax >= R / 4)
        K2a = _fit_inverse(xs[inner], q[inner])
        K2b = _fit_inverse(xs[outer], q[outer])
        prem = np.abs(q - K2 / xs) * xs**2
        K3 = float(max(prem.max(), (np.abs(q1) * env).max(), (np.abs(q2) * env).max()))
        consts.update(K2=K2, K3=K3, K2_inner=K2a, K2_outer=K2b)
        viol += [float(np.max(prem - K3)), float(np.max(np.abs(q1) * env - K3)),
                 float(np.max(np.abs(q2) * env - K3))]
        scale = max(abs(K2a), abs(K2b))
        # fits below this resolution count as K2 = 0
        resolution = 1e-9 * (float(np.abs(xs * q).max()) + abs(psi.L0))
        checks["psi_K3_finite"] = math.isfinite(K3)
        checks["psi_K2_two_window"] = bool(scale <= resolution or abs(K2a - K2b) <= 0.2 * scale)
    worst = max(viol)
    checks["envelopes_hold"] = worst <= 0
    return DecayReport(consts, worst, checks)


# ---------------------------------------------------------------------------
# Orowan sweep
# ---------------------------------------------------------------------------

@dataclass
class OrowanResult:
    delta: list
    lam: list
    err: list
    ratio: list
    extrapolate: float
    target: float

    @property
    def monotone(self) -> bool:
        """Ordered by decreasing delta, the ratios move monotonically toward the target."""
        gaps = [abs(r - self.target) for r in self.ratio]
        d = np.diff(self.ratio)
        same_dir = bool(np.all(d > 0) or np.all(d < 0))
        return same_dir and all(b < a for a, b in zip(gaps, gaps[1:]))

    @property
    def relative_error(self) -> float:
        return abs(self.extrapolate - self.target) / abs(self.target)


def orowan_horizon(delta: float, p0: float, L0: float, c0: float) -> float:
    """T = max(200, 50 / expected drift)."""
    return max(200.0, 50.0 / (c0 * abs(p0 * L0) * delta**2))


def orowan_sweep(deltas, p0=1, L0: float = 1.0, base: CellSpec | None = None,
                 dt: float = 0.01, c0: float = 2 * math.pi, workers: int = 1) -> OrowanResult:
    """Cell drifts at (delta p0, delta L0) and Richardson extrapolation of lam/delta^2.

    The extrapolate assumes a first-order correction in delta:
    2 f(d) - f(2 d) from the two smallest deltas, which must differ by 2x.
    """
    deltas = sorted((Fraction(d) for d in deltas), reverse=True)
    p0 = Fraction(p0)
    base = base or CellSpec(p=0, L=0)
    specs = []
    for d in deltas:
        T = orowan_horizon(float(d), float(p0), L0, c0)
        specs.append(CellSpec(p=d * p0, L=float(d) * L0, potential=base.potential,
                              forcing=base.forcing, kernel=base.kernel,
                              resolution=base.resolution, T=T, dt=dt, tol=base.tol))
    ests = map_cells(specs, workers)
    ratio = [e.lam / float(d) ** 2 for e, d in zip(ests, deltas)]
    if len(deltas) >= 2 and deltas[-2] == 2 * deltas[-1]:
        extrap = 2 * ratio[-1] - ratio[-2]
    else:
        extrap = ratio[-1]
    return OrowanResult([float(d) for d in deltas], [e.lam for e in ests], [e.err for e in ests],
                        ratio, float(extrap), float(c0 * abs(p0) * L0))
