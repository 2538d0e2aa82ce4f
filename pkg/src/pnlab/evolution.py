"""IMEX time integration of d_tau u = I1[u] + f(tau, y, u) on periodic grids.

The reaction has the form

    f(tau, y, u) = L - W'(kappa * (u + p*y)) + sigma(kappa*tau, kappa*y)

which covers the cell problem (kappa = 1, unknown w) and the eps-problem
(kappa = 1/eps, unknown the periodic part of u^eps, L = 0).  The linear part
is treated implicitly in Fourier space and the reaction explicitly:

    u_hat+ = (u_hat + dt f_hat) / (1 - dt m(k)).

The spectral I1 matrix has non-negative off-diagonal entries, so the
implicit solve is order preserving for every dt; the explicit part is
order preserving when dt * kappa * ||W''|| <= 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import BudgetExceededError, InvalidConfigurationError, StabilityError
from .nonlocal_operator import LevyKernel1D, PeriodicGrid, ScalarField, rfft_symbol
from .physics_models import Forcing, PeriodicPotential

TWO_PI = 2.0 * math.pi
MAX_DENOMINATOR = 4096


@dataclass(frozen=True)
class Reaction:
    """f(tau, y, u) = L - W'(kappa (u + p y)) + sigma(kappa tau, kappa y)."""

    potential: PeriodicPotential = field(default_factory=PeriodicPotential)
    forcing: Forcing = field(default_factory=Forcing)
    L: float = 0.0
    p: float = 0.0
    kappa: float = 1.0

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant of f in u."""
        return self.kappa * self.potential.w2_sup

    @property
    def sup_bound(self) -> float:
        """Bound on |f - L|."""
        return self.potential.w1_sup + self.forcing.sup

    def __call__(self, tau: float, y: np.ndarray, u: np.ndarray) -> np.ndarray:
        out = self.L - self.potential.dW(self.kappa * (u + self.p * y))
        if not self.forcing.is_zero:
            out = out + self.forcing(self.kappa * tau, self.kappa * y)
        return out

    def bind(self, y: np.ndarray):
        """Return f(tau, u) at fixed nodes ``y`` with the per-node terms precomputed."""
        kappa, L, dW = self.kappa, self.L, self.potential.dW
        shift = kappa * self.p * y
        if len(self.potential.coefficients) == 1:
            amp = self.potential.coefficients[0] * TWO_PI
            w = TWO_PI * kappa
            shift = TWO_PI * shift

            def core(u):
                return L - amp * np.sin(w * u + shift)
        else:
            def core(u):
                return L - dW(kappa * u + shift)
        if self.forcing.is_zero:
            return lambda tau, u: core(u)
        forcing, ky = self.forcing, kappa * y
        return lambda tau, u: core(u) + forcing(kappa * tau, ky)


@dataclass(frozen=True)
class EvolutionProblem:
    grid: PeriodicGrid
    kernel: LevyKernel1D
    reaction: Reaction
    initial: ScalarField
    track_drift: bool = False

    def __post_init__(self):
        if self.initial.grid != self.grid:
            raise InvalidConfigurationError("initial field lives on a different grid")

    @property
    def shift_quantum(self) -> float:
        """Shift of u leaving the reaction invariant (1/kappa)."""
        return 1.0 / self.reaction.kappa


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    scheme: str = "imex-euler"
    max_steps: int = 50_000_000

    def __post_init__(self):
        if self.scheme != "imex-euler":
            raise InvalidConfigurationError(f"unknown scheme {self.scheme!r}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InvalidConfigurationError(f"dt must be positive, got {self.dt}")

    @staticmethod
    def stability_bound(problem: EvolutionProblem) -> float:
        lip = problem.reaction.lipschitz
        return math.inf if lip == 0 else 0.5 / lip

    @classmethod
    def default(cls, problem: EvolutionProblem) -> "StepperConfig":
        lip = problem.reaction.lipschitz
        return cls(dt=0.1 / lip if lip > 0 else 0.1)

    def check(self, problem: EvolutionProblem) -> None:
        bound = self.stability_bound(problem)
        if self.dt > bound * (1 + 1e-12):
            raise StabilityError(f"dt = {self.dt:g} exceeds the stability bound {bound:g}")


@dataclass
class Trajectory:
    """Probe history of a run; ``final`` is the last state."""

    times: np.ndarray
    mean: np.ndarray
    origin: np.ndarray
    sup: np.ndarray
    inf: np.ndarray
    deviation: np.ndarray
    final: ScalarField
    snapshots: list | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise InvalidConfigurationError("trajectory times must be strictly increasing")

    def __len__(self):
        return self.times.size


class _Stepper:
    """Precomputed arrays for repeated IMEX steps on one problem."""

    def __init__(self, problem: EvolutionProblem, dt: float):
        self.problem = problem
        self.dt = dt
        self.y = problem.grid.nodes
        self.denom = 1.0 / (1.0 - dt * rfft_symbol(problem.grid, problem.kernel))
        self.n = problem.grid.n
        self.f = problem.reaction.bind(self.y)

    def advance(self, u: np.ndarray, tau: float) -> np.ndarray:
        return np.fft.irfft(np.fft.rfft(u + self.dt * self.f(tau, u)) * self.denom, self.n)


def step(problem: EvolutionProblem, state: ScalarField, tau: float,
         cfg: StepperConfig) -> ScalarField:
    """One IMEX-Euler step from time ``tau``."""
    cfg.check(problem)
    return ScalarField(problem.grid, _Stepper(problem, cfg.dt).advance(state.values, tau))


def run_to_time(problem: EvolutionProblem, T: float, probe_stride: int,
                cfg: StepperConfig, keep_snapshots: bool = False,
                record_from: float = 0.0) -> Trajectory:
    """Integrate to time T, recording probes every ``probe_stride`` steps.

    The step is shrunk to T / ceil(T / dt) so that the run ends exactly at T.
    Probes before ``record_from`` are skipped, except the initial one.
    With ``track_drift`` the state is kept near zero by subtracting whole
    multiples of the reaction's shift quantum; probes include the offset.
    """
    cfg.check(problem)
    if T < 0:
        raise InvalidConfigurationError("T must be non-negative")
    if probe_stride < 1:
        raise InvalidConfigurationError("probe stride must be >= 1")
    nsteps = int(math.ceil(T / cfg.dt - 1e-9)) if T > 0 else 0
    if nsteps > cfg.max_steps:
        raise BudgetExceededError(f"{nsteps} steps requested, budget is {cfg.max_steps}")
    dt = T / nsteps if nsteps else cfg.dt
    st = _Stepper(problem, dt)
    track = problem.track_drift
    quantum = problem.shift_quantum

    u = np.array(problem.initial.values)
    u0 = problem.initial.values
    offset = 0.0
    nprobe = nsteps // probe_stride + 1
    times = np.empty(nprobe)
    probes = np.empty((5, nprobe))
    snaps = [] if keep_snapshots else None
    count = 0

    def record(s):
        nonlocal count
        t = s * dt
        times[count] = t
        probes[0, count] = u.mean() + offset
        probes[1, count] = u[0] + offset
        probes[2, count] = u.max() + offset
        probes[3, count] = u.min() + offset
        probes[4, count] = np.abs(u + offset - u0).max()
        if snaps is not None:
            snaps.append(u + offset)
        count += 1

    record(0)
    for s in range(1, nsteps + 1):
        u = st.advance(u, (s - 1) * dt)
        if s % probe_stride == 0:
            if track:
                k = math.floor(u.mean() / quantum)
                if k:
                    u -= k * quantum
                    offset += k * quantum
            if s * dt >= record_from:
                record(s)
    times, probes = times[:count], probes[:, :count]
    return Trajectory(times, probes[0], probes[1], probes[2], probes[3], probes[4],
                      ScalarField(problem.grid, u + offset), snaps,
                      info={"dt": dt, "steps": nsteps})


# ---------------------------------------------------------------------------
# eps-problem
# ---------------------------------------------------------------------------

def as_fraction(x, what: str) -> Fraction:
    """Exact rational from int/Fraction/str or a float with a small denominator."""
    if isinstance(x, float):
        fr = Fraction(x)
        if fr.denominator > MAX_DENOMINATOR:
            raise InvalidConfigurationError(f"{what} = {x!r} is not a small-denominator rational")
        return fr
    try:
        fr = Fraction(x)
    except (TypeError, ValueError) as exc:
        raise InvalidConfigurationError(f"{what} = {x!r} is not rational") from exc
    if fr.denominator > MAX_DENOMINATOR:
        raise InvalidConfigurationError(f"{what} = {x} has denominator above {MAX_DENOMINATOR}")
    return fr


@dataclass(frozen=True)
class InitialData:
    """u0(x) = p x + sum a cos(2 pi k x + theta), bump 1-periodic."""

    p: Fraction = Fraction(0)
    modes: tuple[tuple[int, float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "p", as_fraction(self.p, "p"))
        modes = tuple((int(k), float(a), float(th)) for k, a, th in self.modes)
        if any(k <= 0 for k, _, _ in modes):
            raise InvalidConfigurationError("bump wavenumbers must be positive integers")
        object.__setattr__(self, "modes", modes)

    @classmethod
    def sine(cls, p, amplitude: float, k: int = 1) -> "InitialData":
        return cls(p, ((k, amplitude, -math.pi / 2),))

    def bump(self, x, derivative: int = 0):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for k, a, th in self.modes:
            w = TWO_PI * k
            arg = w * x + th
            out = out + a * w**derivative * np.cos(arg + derivative * math.pi / 2)
        return out

    def __call__(self, x):
        return float(self.p) * np.asarray(x, dtype=float) + self.bump(x)

    def bump_norms(self) -> tuple[float, float]:
        """Bounds on ||b||_inf and ||b''||_inf."""
        return (sum(abs(a) for _, a, _ in self.modes),
                sum(abs(a) * (TWO_PI * k) ** 2 for k, a, _ in self.modes))

    def operator_bound(self, kernel: LevyKernel1D) -> float:
        """|I1[u0]| <= g0 (r ||b''|| + 4 ||b|| / r); the affine part is annihilated."""
        b0, b2 = self.bump_norms()
        return kernel.g0 * (kernel.r * b2 + 4 * b0 / kernel.r)


def eps_period(eps: Fraction, p: Fraction) -> int:
    """Smallest integer period Lambda with p Lambda / eps an integer."""
    m = (1 / eps)
    if m.denominator != 1:
        raise InvalidConfigurationError(f"eps must be 1/m for an integer m, got {eps}")
    a, b = p.numerator, p.denominator
    return b // math.gcd(b, abs(a) * m.numerator) if a else 1


def next_pow2(x: float) -> int:
    return max(8, 1 << max(0, math.ceil(math.log2(max(x, 1.0)))))


def solve_eps_problem(eps, u0: InitialData, T: float, cfg: StepperConfig | None = None,
                      potential: PeriodicPotential | None = None,
                      forcing: Forcing | None = None, kernel: LevyKernel1D | None = None,
                      points_per_cell: int = 16, probe_stride: int = 1,
                      keep_snapshots: bool = False) -> Trajectory:
    """Integrate d_t u = I1[u] - W'(u/eps) + sigma(t/eps, x/eps) from u0 = p x + bump.

    The unknown is the periodic part u - p x on the smallest compatible
    integer period; the grid has at least ``points_per_cell`` nodes per eps.
    Probes and snapshots refer to the periodic part.  The growth bound
    |u(t) - u0| <= C t with C = D ||u0||_{2,inf} + ||W'|| + ||sigma|| is
    evaluated on probes with t <= 1 and stored in ``info``.
    """
    eps = as_fraction(eps, "eps")
    if eps <= 0:
        raise InvalidConfigurationError("eps must be positive")
    potential = potential or PeriodicPotential()
    forcing = forcing or Forcing()
    kernel = kernel or LevyKernel1D()
    period = eps_period(eps, u0.p)
    n = next_pow2(points_per_cell * period / float(eps))
    grid = PeriodicGrid(period, n)
    react = Reaction(potential, forcing, L=0.0, p=float(u0.p), kappa=float(1 / eps))
    problem = EvolutionProblem(grid, kernel, react, ScalarField(grid, u0.bump(grid.nodes)))
    cfg = cfg or StepperConfig(0.1 * float(eps) / potential.w2_sup)
    traj = run_to_time(problem, T, probe_stride, cfg, keep_snapshots=keep_snapshots)
    C = u0.operator_bound(kernel) + potential.w1_sup + forcing.sup
    early = (traj.times > 0) & (traj.times <= 1.0)
    ratio = float(np.max(traj.deviation[early] / (C * traj.times[early]))) if early.any() else 0.0
    traj.info.update(eps=str(eps), p=str(u0.p), period=period, n=n,
                     growth_constant=C, growth_ratio=ratio)
    return traj
