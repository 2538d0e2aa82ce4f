"""Monotone scheme for d_t u = Hbar(u_x, I1[u]) and the eps -> 0 comparison.

The unknown is the periodic part v = u - p x on a period-1 grid.  Per node

    p_j = p + (v_{j+1} - v_{j-1}) / (2h),   L_j = I1[v]_j (spectral),
    v_j += dt * (Hbar(p_j, L_j) + theta * (v_{j+1} - 2 v_j + v_{j-1}) / h).

Hbar is the bilinear interpolant of a tabulated HbarTable; queries outside
the table raise rather than extrapolate.  The affine part is invisible to I1.
With theta >= max|dHbar/dp| / 2, Hbar non-decreasing in L, and
dt (2 theta / h + Lip_L |I1_jj|) <= 1, the update is order preserving.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .effective_hamiltonian import HbarTable
from .errors import InvalidConfigurationError, OutOfHullError, StabilityError
from .evolution import InitialData, StepperConfig, solve_eps_problem
from .nonlocal_operator import LevyKernel1D, PeriodicGrid, ScalarField, rfft_symbol
from .physics_models import Forcing, PeriodicPotential


def hbar_interpolate(table: HbarTable, p, L):
    """Bilinear interpolation of the table; exact at nodes."""
    p = np.asarray(p, dtype=float)
    L = np.asarray(L, dtype=float)
    P, Lg, lam = table.p, table.L, table.lam
    bad = (p < P[0]) | (p > P[-1]) | (L < Lg[0]) | (L > Lg[-1]) | ~np.isfinite(p) | ~np.isfinite(L)
    if np.any(bad):
        k = int(np.flatnonzero(np.atleast_1d(bad))[0])
        pk, Lk = float(np.atleast_1d(p)[k]), float(np.atleast_1d(L)[k])
        raise OutOfHullError(
            f"(p, L) = ({pk:.6g}, {Lk:.6g}) outside table hull "
            f"[{P[0]}, {P[-1]}] x [{Lg[0]}, {Lg[-1]}] at node {k}", node=k, p=pk, L=Lk)
    if P.size == 1 and Lg.size == 1:
        return np.full(np.broadcast(p, L).shape, lam[0, 0])[()]
    i = np.clip(np.searchsorted(P, p, side="right") - 1, 0, max(P.size - 2, 0))
    j = np.clip(np.searchsorted(Lg, L, side="right") - 1, 0, max(Lg.size - 2, 0))
    if P.size > 1:
        tp = (p - P[i]) / (P[i + 1] - P[i])
        i1 = i + 1
    else:
        tp, i1 = np.zeros_like(p), i
    if Lg.size > 1:
        tl = (L - Lg[j]) / (Lg[j + 1] - Lg[j])
        j1 = j + 1
    else:
        tl, j1 = np.zeros_like(L), j
    out = ((1 - tp) * (1 - tl) * lam[i, j] + tp * (1 - tl) * lam[i1, j]
           + (1 - tp) * tl * lam[i, j1] + tp * tl * lam[i1, j1])
    return out[()] if np.ndim(out) == 0 else out


def table_lipschitz(table: HbarTable) -> tuple[float, float]:
    """Largest difference quotients in p and in L (bounds for the interpolant)."""
    lp = float(np.max(np.abs(np.diff(table.lam, axis=0)) / np.diff(table.p)[:, None])) \
        if table.p.size > 1 else 0.0
    lL = float(np.max(np.abs(np.diff(table.lam, axis=1)) / np.diff(table.L)[None, :])) \
        if table.L.size > 1 else 0.0
    return lp, lL


@dataclass(frozen=True)
class HJProblem:
    grid: PeriodicGrid
    table: HbarTable
    u0: InitialData
    T: float = 1.0
    kernel: LevyKernel1D = field(default_factory=LevyKernel1D)
    margin: float = 0.25

    def __post_init__(self):
        h = self.grid.spacing
        v = self.u0.bump(self.grid.nodes)
        p = float(self.u0.p) + (np.roll(v, -1) - np.roll(v, 1)) / (2 * h)
        L = _spectral(v, self.grid, self.kernel)
        check_coverage(self.table, p, L, self.margin)


def check_coverage(table: HbarTable, p, L, margin: float = 0.25) -> None:
    """Require the table to cover the (p, L) ranges widened by ``margin`` of their spans."""
    for name, vals, ax in (("p", p, table.p), ("L", L, table.L)):
        lo, hi = float(np.min(vals)), float(np.max(vals))
        pad = margin * max(hi - lo, 1e-12)
        if lo - pad < ax[0] or hi + pad > ax[-1]:
            raise InvalidConfigurationError(
                f"table {name}-range [{ax[0]}, {ax[-1]}] does not cover "
                f"[{lo - pad:.4g}, {hi + pad:.4g}] ({int(margin * 100)}% margin)")


def _spectral(v, grid: PeriodicGrid, kernel: LevyKernel1D) -> np.ndarray:
    return np.fft.irfft(np.fft.rfft(v) * rfft_symbol(grid, kernel), grid.n)


def operator_diagonal(grid: PeriodicGrid, kernel: LevyKernel1D) -> float:
    """Diagonal entry of the spectral I1 matrix (negative)."""
    e = np.zeros(grid.n)
    e[0] = 1.0
    return float(_spectral(e, grid, kernel)[0])


@dataclass(frozen=True)
class SchemeConfig:
    theta: float
    dt: float

    def __post_init__(self):
        if not (self.theta >= 0 and self.dt > 0):
            raise InvalidConfigurationError("theta must be >= 0 and dt > 0")

    @staticmethod
    def bound(problem: HJProblem, theta: float) -> float:
        """Largest dt keeping the update order preserving."""
        _, lip_L = table_lipschitz(problem.table)
        diag = abs(operator_diagonal(problem.grid, problem.kernel))
        rate = 2 * theta / problem.grid.spacing + lip_L * diag
        return math.inf if rate == 0 else 1.0 / rate

    @classmethod
    def auto(cls, problem: HJProblem, safety: float = 0.5) -> "SchemeConfig":
        lip_p, _ = table_lipschitz(problem.table)
        theta = 0.5 * lip_p
        return cls(theta, safety * cls.bound(problem, theta))

    def check(self, problem: HJProblem) -> None:
        lip_p, _ = table_lipschitz(problem.table)
        if self.theta < 0.5 * lip_p * (1 - 1e-12):
            raise StabilityError(f"theta = {self.theta:g} below |dHbar/dp|/2 = {0.5 * lip_p:g}")
        if self.dt > self.bound(problem, self.theta) * (1 + 1e-12):
            raise StabilityError(f"dt = {self.dt:g} violates the CFL bound "
                                 f"{self.bound(problem, self.theta):g}")


def _rate(problem: HJProblem, v: np.ndarray, theta: float, symbol: np.ndarray) -> np.ndarray:
    h = problem.grid.spacing
    vp, vm = np.roll(v, -1), np.roll(v, 1)
    p = float(problem.u0.p) + (vp - vm) / (2 * h)
    L = np.fft.irfft(np.fft.rfft(v) * symbol, v.size)
    return hbar_interpolate(problem.table, p, L) + theta * (vp - 2 * v + vm) / h


def step_hj(problem: HJProblem, state: ScalarField, cfg: SchemeConfig) -> ScalarField:
    """One explicit Lax-Friedrichs step of the periodic part."""
    cfg.check(problem)
    symbol = rfft_symbol(problem.grid, problem.kernel)
    v = state.values
    return ScalarField(problem.grid, v + cfg.dt * _rate(problem, v, cfg.theta, symbol))


def solve_hj(problem: HJProblem, cfg: SchemeConfig | None = None, times=None,
             initial: np.ndarray | None = None) -> tuple[np.ndarray, list[np.ndarray]]:
    """Integrate to T; return the requested times (default T only) and periodic-part snapshots.

    The step is shrunk so that every requested time is hit exactly.
    """
    cfg = cfg or SchemeConfig.auto(problem)
    cfg.check(problem)
    times = np.array(sorted(set([problem.T] if times is None else list(times))), dtype=float)
    if times[0] < 0 or times[-1] > problem.T + 1e-12:
        raise InvalidConfigurationError("snapshot times must lie in [0, T]")
    symbol = rfft_symbol(problem.grid, problem.kernel)
    v = problem.u0.bump(problem.grid.nodes) if initial is None else np.array(initial, float)
    t, snaps = 0.0, []
    for target in times:
        gap = target - t
        k = int(math.ceil(gap / cfg.dt - 1e-9)) if gap > 0 else 0
        if k:
            dt = gap / k
            for _ in range(k):
                v = v + dt * _rate(problem, v, cfg.theta, symbol)
        t = target
        snaps.append(v.copy())
    return times, snaps


@dataclass
class ComparisonReport:
    eps: list
    times: np.ndarray
    differences: np.ndarray   # shape (len(eps), len(times))
    hj_n: int

    @property
    def final(self) -> np.ndarray:
        return self.differences[:, -1]

    @property
    def strictly_decreasing(self) -> bool:
        """Differences at T strictly decrease as eps decreases (eps listed largest first)."""
        order = np.argsort(-np.asarray([float(e) for e in self.eps]))
        d = self.final[order]
        return bool(np.all(np.diff(d) < 0))


def compare_homogenization(eps_list, u0: InitialData, T: float, table: HbarTable,
                           hj_n: int = 256, checkpoints: int = 4,
                           potential: PeriodicPotential | None = None,
                           forcing: Forcing | None = None, kernel: LevyKernel1D | None = None,
                           points_per_cell: int = 16, dt_factor: float = 0.1,
                           workers: int = 1) -> ComparisonReport:
    """sup_x |u^eps - u^0| at t = T k / checkpoints, k = 1..checkpoints, for each eps.

    Both solutions are compared over one period on the coarser of the two
    (nested, power-of-two) grids.  The eps-run step is
    dt_factor * eps / ||W''||, shrunk so that every checkpoint is hit.
    """
    kernel = kernel or LevyKernel1D()
    potential = potential or PeriodicPotential()
    forcing = forcing or Forcing()
    times = T * np.arange(1, checkpoints + 1) / checkpoints
    grid = PeriodicGrid(1.0, hj_n)
    problem = HJProblem(grid, table, u0, T, kernel)
    _, hj_snaps = solve_hj(problem, times=times)

    args = [(e, u0, T, checkpoints, potential, forcing, kernel, points_per_cell, dt_factor)
            for e in eps_list]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            eps_snaps = list(pool.map(_eps_task, args))
    else:
        eps_snaps = [_eps_task(a) for a in args]

    diffs = np.empty((len(args), times.size))
    for a, (per_unit, snaps) in enumerate(eps_snaps):
        # compare on the coarser of the two nested power-of-two grids
        m = min(per_unit, hj_n)
        se, sh = per_unit // m, hj_n // m
        for k, s in enumerate(snaps):
            diffs[a, k] = float(np.abs(s[:per_unit:se] - hj_snaps[k][::sh]).max())
    return ComparisonReport(list(eps_list), times, diffs, hj_n)


def _eps_task(args):
    eps, u0, T, checkpoints, potential, forcing, kernel, ppc, dt_factor = args
    dt0 = dt_factor * float(eps) / potential.w2_sup
    per_check = int(math.ceil(T / (checkpoints * dt0) - 1e-9))
    cfg = StepperConfig(T / (checkpoints * per_check))
    tr = solve_eps_problem(eps, u0, T, cfg, potential, forcing, kernel,
                           points_per_cell=ppc, probe_stride=per_check, keep_snapshots=True)
    per_unit = tr.info["n"] // tr.info["period"]
    return per_unit, tr.snapshots[1:]
