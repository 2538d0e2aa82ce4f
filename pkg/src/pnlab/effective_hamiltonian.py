"""Cell problem, ergodic drift extraction and tabulated effective Hamiltonian.

The cell problem

    d_tau w = I1[w] + L - W'(w + p y) + sigma(tau, y),   w(0, y) = 0,

is integrated on the period-b cell for p = a/b.  Its long-time drift
lambda = lim w/tau is the effective Hamiltonian Hbar(p, L).  Estimates carry
an a-posteriori error proxy: the discrepancy between least-squares slopes
fitted on the two halves of the averaging window.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import InvalidConfigurationError
from .evolution import (EvolutionProblem, Reaction, StepperConfig, Trajectory, next_pow2,
                        as_fraction, run_to_time)
from .nonlocal_operator import LevyKernel1D, PeriodicGrid, ScalarField
from .physics_models import Forcing, PeriodicPotential

TABLE_FORMAT = "pnlab-hbar-table/1"
# Slope resolution floor, relative to the drift accumulated over the window.
ROUNDOFF_FACTOR = 1e3 * np.finfo(float).eps


@dataclass(frozen=True)
class CellSpec:
    p: Fraction
    L: float
    potential: PeriodicPotential = field(default_factory=PeriodicPotential)
    forcing: Forcing = field(default_factory=Forcing)
    kernel: LevyKernel1D = field(default_factory=LevyKernel1D)
    resolution: int = 16
    T: float = 200.0
    T0: float | None = None
    dt: float | None = None
    probes_per_unit: float = 5.0
    tol: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "p", as_fraction(self.p, "p"))
        object.__setattr__(self, "L", float(self.L))
        if not math.isfinite(self.L):
            raise InvalidConfigurationError("L must be finite")
        if self.resolution < 2:
            raise InvalidConfigurationError("resolution must be at least 2 nodes per unit")
        if not self.T > 0:
            raise InvalidConfigurationError("horizon T must be positive")
        if not (self.burn_in >= self.T / 4 and self.burn_in < self.T):
            raise InvalidConfigurationError(
                f"burn-in T0 = {self.burn_in} must lie in [T/4, T) for T = {self.T}")

    @property
    def period(self) -> int:
        return self.p.denominator

    @property
    def burn_in(self) -> float:
        return self.T / 2 if self.T0 is None else float(self.T0)

    @property
    def n(self) -> int:
        return next_pow2(self.resolution * self.period)

    def time_step(self) -> float:
        """Explicit dt, or the default rule.

        The default keeps dt * ||W''|| <= 0.1 and also caps the per-step
        displacement, dt * (|L| + ||W'|| + ||sigma||) <= 0.1, plus 20 steps per
        forcing period.
        """
        if self.dt is not None:
            return float(self.dt)
        speed = abs(self.L) + self.potential.w1_sup + self.forcing.sup
        jmax = max([abs(m.j) for m in self.forcing.modes if m.a] or [0])
        dt = min(0.1 / self.potential.w2_sup, 0.1 / speed)
        if jmax:
            dt = min(dt, 0.05 / jmax)
        return dt

    def problem(self) -> EvolutionProblem:
        grid = PeriodicGrid(self.period, self.n)
        react = Reaction(self.potential, self.forcing, L=self.L, p=float(self.p), kappa=1.0)
        return EvolutionProblem(grid, self.kernel, react, ScalarField(grid, np.zeros(grid.n)),
                                track_drift=True)


@dataclass(frozen=True)
class LambdaEstimate:
    lam: float
    err: float
    rho: float
    converged: bool
    p: Fraction | None = None
    L: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.rho) and self.err >= 0):
            raise InvalidConfigurationError("invalid estimate: rho must be finite and err >= 0")


def solve_cell(spec: CellSpec) -> tuple[Trajectory, ScalarField]:
    """Integrate the cell problem from w = 0; probes are dense on [T0, T]."""
    problem = spec.problem()
    cfg = StepperConfig(spec.time_step())
    steps_per_probe = max(1, int(round(1.0 / (spec.probes_per_unit * cfg.dt))))
    traj = run_to_time(problem, spec.T, steps_per_probe, cfg, record_from=spec.burn_in)
    traj.info.update(T0=spec.burn_in, T=spec.T, p=str(spec.p), L=spec.L, n=spec.n)
    return traj, traj.final


def _slope(t, y) -> float:
    tc = t - t.mean()
    return float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))


def estimate_lambda(run: Trajectory, T0: float | None = None, tol: float = 1e-3,
                    min_probes: int = 100) -> LambdaEstimate:
    """Least-squares drift of mean(w) on [T0, T] with a two-half-window error proxy.

    The proxy is floored at the slope resolution of double precision,
    ``ROUNDOFF_FACTOR * (1 + max|mean w|) / (T - T0)``, so that exactly
    stationary runs still report a positive error bar.
    """
    T0 = run.info.get("T0", 0.0) if T0 is None else T0
    sel = run.times >= T0
    t, m = run.times[sel], run.mean[sel]
    if t.size < min_probes:
        raise InvalidConfigurationError(
            f"only {t.size} probes past burn-in, need at least {min_probes}")
    lam = _slope(t, m)
    mid = 0.5 * (t[0] + t[-1])
    a, b = t <= mid, t >= mid
    e = abs(_slope(t[a], m[a]) - _slope(t[b], m[b]))
    floor = ROUNDOFF_FACTOR * (1.0 + float(np.abs(m).max())) / (t[-1] - t[0])
    e = max(e, floor)
    rho = float(np.abs(run.origin[sel] - lam * t).max())
    return LambdaEstimate(lam, e, rho, bool(e <= tol))


def _cell_task(spec: CellSpec) -> LambdaEstimate:
    traj, _ = solve_cell(spec)
    est = estimate_lambda(traj, tol=spec.tol)
    return replace(est, p=spec.p, L=spec.L)


def map_cells(specs, workers: int = 1) -> list[LambdaEstimate]:
    """Evaluate cells in order, in a process pool when ``workers > 1``."""
    specs = list(specs)
    if workers <= 1 or len(specs) <= 1:
        return [_cell_task(s) for s in specs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_cell_task, specs))


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

@dataclass
class HbarTable:
    p: np.ndarray
    L: np.ndarray
    lam: np.ndarray
    err: np.ndarray
    converged: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.L = np.asarray(self.L, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float).reshape(self.p.size, self.L.size)
        self.err = np.asarray(self.err, dtype=float).reshape(self.lam.shape)
        self.converged = np.asarray(self.converged, dtype=bool).reshape(self.lam.shape)
        for name, ax in (("p", self.p), ("L", self.L)):
            if ax.size > 1 and np.any(np.diff(ax) <= 0):
                raise InvalidConfigurationError(f"table {name} values must be strictly increasing")

    def value(self, i: int, j: int) -> float:
        return float(self.lam[i, j])

    def monotonicity_violations(self) -> list[tuple[int, int, float]]:
        """(i, j, drop) where lam[i, j+1] < lam[i, j] beyond 2x the error proxies."""
        out = []
        for i in range(self.p.size):
            for j in range(self.L.size - 1):
                drop = self.lam[i, j] - self.lam[i, j + 1]
                slack = 2 * max(self.err[i, j], self.err[i, j + 1])
                if drop > slack:
                    out.append((i, j, float(drop)))
        return out

    def bounds_violations(self, potential: PeriodicPotential,
                          forcing: Forcing) -> list[tuple[int, int, float]]:
        """Entries outside L -/+ (||W'|| + ||sigma||), widened by their error proxy."""
        c = potential.w1_sup + forcing.sup
        out = []
        for i in range(self.p.size):
            for j, L in enumerate(self.L):
                lam, e = self.lam[i, j], self.err[i, j]
                excess = max(L - c - e - lam, lam - (L + c + e))
                if excess > 0:
                    out.append((i, j, float(excess)))
        return out

    def to_dict(self) -> dict:
        return {
            "format": TABLE_FORMAT,
            "meta": self.meta,
            "p": [float(v) for v in self.p],
            "L": [float(v) for v in self.L],
            "lambda": [float(v) for v in self.lam.ravel()],
            "err": [float(v) for v in self.err.ravel()],
            "converged": [bool(v) for v in self.converged.ravel()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HbarTable":
        if d.get("format") != TABLE_FORMAT:
            raise InvalidConfigurationError(f"unknown table format {d.get('format')!r}")
        return cls(d["p"], d["L"], d["lambda"], d["err"], d["converged"], dict(d.get("meta", {})))

    def save(self, path) -> Path:
        # json writes floats with repr, which round-trips exactly
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "HbarTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_table(p_list, L_list, base: CellSpec, workers: int = 1) -> HbarTable:
    """Parallel map of solve_cell + estimate_lambda over the (p, L) grid."""
    ps = [as_fraction(p, "p") for p in p_list]
    Ls = [float(L) for L in L_list]
    if ps != sorted(ps) or Ls != sorted(Ls):
        raise InvalidConfigurationError("p and L lists must be sorted")
    specs = [replace(base, p=p, L=L) for p in ps for L in Ls]
    ests = map_cells(specs, workers)
    meta = {
        "resolution": base.resolution,
        "T": base.T,
        "T0": base.burn_in,
        "dt": base.dt,
        "tol": base.tol,
        "potential": base.potential.digest(),
        "forcing": base.forcing.digest(),
        "kernel": [base.kernel.g0, base.kernel.r],
        "p_exact": [str(p) for p in ps],
    }
    table = HbarTable([float(p) for p in ps], Ls, [e.lam for e in ests], [e.err for e in ests],
                      [e.converged for e in ests], meta)
    table.meta["monotonicity_violations"] = len(table.monotonicity_violations())
    return table


# ---------------------------------------------------------------------------
# Symmetries
# ---------------------------------------------------------------------------

@dataclass
class SymmetryReport:
    rows: list = field(default_factory=list)

    @property
    def worst_ratio(self) -> float:
        """max deviation / allowed slack over all checks (<= 1 passes)."""
        return max((r["deviation"] / r["slack"] for r in self.rows), default=0.0)

    @property
    def passed(self) -> bool:
        return all(r["deviation"] <= r["slack"] for r in self.rows)


def symmetry_suite(base: CellSpec, pairs, checks=("iii", "iv"), workers: int = 1) -> SymmetryReport:
    """Check Hbar(p, L) = Hbar(-p, L) ("iii") and Hbar(p, -L) = -Hbar(p, L) ("iv").

    "iii" needs sigma even in y; "iv" needs sigma odd in y (W' is always odd
    for cosine-series potentials).  With L = 0 the "iv" check becomes
    |Hbar(p, 0)| <= e.  Slack is twice the larger error proxy.
    """
    checks = tuple(checks)
    if "iii" in checks and not base.forcing.is_even_in_y():
        raise InvalidConfigurationError("p -> -p symmetry needs a forcing even in y")
    if "iv" in checks and not (base.forcing.is_odd_in_y() and base.potential.odd_derivative()):
        raise InvalidConfigurationError("L -> -L symmetry needs odd W' and a forcing odd in y")
    keys = set()
    for p, L in pairs:
        p = as_fraction(p, "p")
        keys.add((p, float(L)))
        if "iii" in checks:
            keys.add((-p, float(L)))
        if "iv" in checks:
            keys.add((p, -float(L)))
    keys = sorted(keys)
    ests = dict(zip(keys, map_cells([replace(base, p=p, L=L) for p, L in keys], workers)))
    report = SymmetryReport()
    for p, L in pairs:
        p, L = as_fraction(p, "p"), float(L)
        a = ests[(p, L)]
        if "iii" in checks:
            b = ests[(-p, L)]
            report.rows.append(dict(check="iii", p=str(p), L=L, deviation=abs(a.lam - b.lam),
                                    slack=2 * max(a.err, b.err)))
        if "iv" in checks:
            if L == 0:
                report.rows.append(dict(check="iv0", p=str(p), L=L, deviation=abs(a.lam),
                                        slack=a.err))
            else:
                b = ests[(p, -L)]
                report.rows.append(dict(check="iv", p=str(p), L=L, deviation=abs(a.lam + b.lam),
                                        slack=2 * max(a.err, b.err)))
    return report
