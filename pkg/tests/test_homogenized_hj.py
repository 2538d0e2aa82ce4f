import math
from fractions import Fraction

import numpy as np
import pytest

from pnlab.effective_hamiltonian import CellSpec, HbarTable, build_table
from pnlab.errors import InvalidConfigurationError, OutOfHullError, StabilityError
from pnlab.evolution import InitialData
from pnlab.experiments import hj_comparison_trials
from pnlab.homogenized_hj import (HJProblem, SchemeConfig, compare_homogenization,
                                  hbar_interpolate, solve_hj, step_hj, table_lipschitz)
from pnlab.nonlocal_operator import PeriodicGrid, ScalarField

W1 = 1 / (2 * math.pi)


def rotation(L):
    L = np.asarray(L, dtype=float)
    return np.sign(L) * np.sqrt(np.maximum(L**2 - W1**2, 0.0))


def synthetic(P=np.linspace(-1, 2, 13), Ls=np.linspace(-2, 2, 17), f=None):
    f = f or (lambda p, L: L * (1 + 0.2 * np.cos(p)) + 0.1 * np.sin(2 * p) * L**2 * np.sign(L))
    pp, LL = np.meshgrid(P, Ls, indexing="ij")
    lam = f(pp, LL)
    return HbarTable(P, Ls, lam, np.full(lam.shape, 1e-9), np.ones(lam.shape, bool))


@pytest.fixture(scope="module")
def built_table():
    p = [Fraction(k, 4) for k in range(-2, 7)]
    L = [k / 4 for k in range(-4, 5)]
    return build_table(p, L, CellSpec(p=0, L=0, T=100.0), workers=1)


class TestInterpolate:
    def test_nodes_exact(self):
        t = synthetic()
        for i in (0, 4, 12):
            for j in (0, 7, 16):
                assert hbar_interpolate(t, t.p[i], t.L[j]) == t.lam[i, j]

    def test_midpoint_is_mean(self):
        t = synthetic()
        mid = 0.5 * (t.L[3] + t.L[4])
        assert hbar_interpolate(t, t.p[2], mid) == pytest.approx(0.5 * (t.lam[2, 3] + t.lam[2, 4]))

    def test_monotone_rows(self):
        t = synthetic()
        L = np.sort(np.random.default_rng(0).uniform(-2, 2, 1000))
        for p in (-0.9, 0.3, 1.7):
            assert np.all(np.diff(hbar_interpolate(t, np.full_like(L, p), L)) >= 0)

    def test_out_of_hull(self):
        t = synthetic()
        with pytest.raises(OutOfHullError) as exc:
            hbar_interpolate(t, np.array([0.0, 5.0]), np.array([0.0, 0.0]))
        assert exc.value.node == 1 and exc.value.p == 5.0


class TestScheme:
    def test_affine_stationary(self):
        t = synthetic()
        pr = HJProblem(PeriodicGrid(1.0, 64), t, InitialData(Fraction(1, 2)), T=1.0)
        _, snaps = solve_hj(pr)
        assert np.abs(snaps[-1]).max() == 0.0

    def test_constant_table(self):
        t = synthetic(f=lambda p, L: 0 * p + 0.3)
        pr = HJProblem(PeriodicGrid(1.0, 32), t, InitialData(Fraction(1, 2)))
        st = step_hj(pr, ScalarField(pr.grid, np.zeros(32)), SchemeConfig(0.0, 0.01))
        assert np.allclose(st.values, 0.003, atol=1e-15)

    def test_rotation_table_consistency(self):
        # table over L shifted by one, so that spatially constant data drift at the p = 0 rate for L = 1
        t = synthetic(f=lambda p, L: rotation(L + 1.0) + 0 * p)
        pr = HJProblem(PeriodicGrid(1.0, 32), t, InitialData(Fraction(0)), T=2.0)
        _, snaps = solve_hj(pr)
        assert abs(snaps[-1].mean() / 2.0 - 0.987253616903688814811277764002) <= 1e-3

    def test_integer_shift(self):
        t = synthetic()
        pr = HJProblem(PeriodicGrid(1.0, 64), t, InitialData.sine(Fraction(1, 2), 0.05), T=0.5)
        v = pr.u0.bump(pr.grid.nodes)
        _, a = solve_hj(pr, initial=v)
        _, b = solve_hj(pr, initial=v + 1)
        assert np.abs(b[-1] - a[-1] - 1).max() <= 1e-12

    def test_cfl_enforced(self):
        t = synthetic()
        pr = HJProblem(PeriodicGrid(1.0, 64), t, InitialData(Fraction(1, 2)))
        lip_p, _ = table_lipschitz(t)
        with pytest.raises(StabilityError, match="theta"):
            SchemeConfig(0.1 * lip_p, 1e-4).check(pr)
        cfg = SchemeConfig.auto(pr)
        with pytest.raises(StabilityError, match="CFL"):
            SchemeConfig(cfg.theta, 3 * cfg.dt).check(pr)

    def test_coverage_margin(self):
        t = synthetic(P=np.linspace(0.0, 1.0, 5))
        with pytest.raises(InvalidConfigurationError, match="margin"):
            HJProblem(PeriodicGrid(1.0, 64), t, InitialData.sine(Fraction(1, 2), 0.1))

    def test_comparison_principle_synthetic(self):
        assert min(hj_comparison_trials(synthetic(), 100, 1000, seed=3)) >= 0.0


class TestComparison:
    def test_zero_bump_stationary(self, built_table):
        rep = compare_homogenization([Fraction(1, 4), Fraction(1, 8)], InitialData(Fraction(0)),
                                     0.5, built_table, hj_n=64, checkpoints=2)
        assert rep.differences.max() <= 1e-6

    def test_grid_refinement_below_eps_gap(self, built_table):
        u0 = InitialData.sine(Fraction(1, 2), 0.1)
        eps = [Fraction(1, 4), Fraction(1, 8)]
        a = compare_homogenization(eps, u0, 0.5, built_table, hj_n=128, checkpoints=1)
        b = compare_homogenization(eps, u0, 0.5, built_table, hj_n=256, checkpoints=1)
        assert abs(a.final[1] - b.final[1]) < abs(b.final[0] - b.final[1])
        assert b.strictly_decreasing

    def test_comparison_principle_built_table(self, built_table):
        assert min(hj_comparison_trials(built_table, 10, 1000, seed=4)) >= 0.0
