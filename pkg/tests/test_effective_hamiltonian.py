import math
from fractions import Fraction

import numpy as np
import pytest

from pnlab.effective_hamiltonian import (CellSpec, HbarTable, build_table, estimate_lambda,
                                         map_cells, solve_cell, symmetry_suite)
from pnlab.errors import InvalidConfigurationError
from pnlab.physics_models import Forcing, ForcingMode, PeriodicPotential

# Rotation numbers (int_0^1 dv / (L - sin(2 pi v)/(2 pi)))^-1, mpmath quad at 30 digits.
ROTATION = {
    0.5: 0.473993358697582973992230634373,
    1.0: 0.987253616903688814811277764002,
    2.0: 1.99365736877965456412647955434,
    3.0: 2.99577530934638279943495072889,
    5.0: 4.99746632845979419082617373028,
}
W1 = 1 / (2 * math.pi)


def lam(p, L, **kw):
    return map_cells([CellSpec(p=p, L=L, **kw)])[0]


class TestCell:
    def test_homogeneous_stays_homogeneous(self):
        traj, final = solve_cell(CellSpec(p=0, L=1.0, T=20.0))
        assert np.ptp(final.values) <= 1e-12

    @pytest.mark.parametrize("L", sorted(ROTATION))
    def test_rotation_number(self, L):
        assert abs(lam(0, L).lam - ROTATION[L]) <= 1e-3

    def test_bounds_along_trajectory(self):
        spec = CellSpec(p=Fraction(1, 2), L=0.3, T=40.0)
        traj, _ = solve_cell(spec)
        t = traj.times
        assert np.all(traj.mean <= (0.3 + W1) * t + 1e-9)
        assert np.all(traj.mean >= (0.3 - W1) * t - 1e-9)

    @pytest.mark.parametrize("p", [Fraction(1, 4), Fraction(1, 2), Fraction(1)])
    def test_zero_stress_zero_drift(self, p):
        assert abs(lam(p, 0.0).lam) <= 1e-3

    def test_lambounds_at_two(self):
        v = lam(Fraction(1, 3), 2.0).lam
        assert 2 - W1 <= v <= 2 + W1

    @pytest.mark.parametrize("L", [-20.0, 20.0])
    def test_coercive(self, L):
        v = lam(Fraction(1, 2), L, T=50.0).lam
        assert math.copysign(1, v) == math.copysign(1, L) and abs(v) >= 19

    def test_initial_slope_is_minus_w_prime(self):
        # w(0) = 0 and L = 0: dw/dtau = I1[0] - W'(p y) at tau = 0
        traj, _ = solve_cell(CellSpec(p=Fraction(1, 4), L=0.0, T=1e-3, T0=2.5e-4, dt=1e-5,
                                      probes_per_unit=1e5))
        assert traj.final.values[1] == pytest.approx(
            -1e-3 * math.sin(2 * math.pi * 0.25 * traj.final.grid.nodes[1]) / (2 * math.pi),
            rel=2e-2)

    def test_too_few_probes(self):
        traj, _ = solve_cell(CellSpec(p=0, L=1.0, T=10.0, probes_per_unit=1))
        with pytest.raises(InvalidConfigurationError, match="probes"):
            estimate_lambda(traj)

    def test_burn_in_validation(self):
        with pytest.raises(InvalidConfigurationError, match="burn-in"):
            CellSpec(p=0, L=1.0, T=100.0, T0=10.0)

    def test_period_is_denominator(self):
        assert CellSpec(p=Fraction(3, 4), L=0).period == 4

    def test_error_proxy_positive(self):
        est = lam(0, 0.0)
        assert est.err > 0 and est.converged


class TestTable:
    def test_single_entry_equals_estimate(self):
        base = CellSpec(p=0, L=0, T=100.0)
        t = build_table([Fraction(1, 2)], [1.0], base)
        assert t.lam[0, 0] == map_cells([CellSpec(p=Fraction(1, 2), L=1.0, T=100.0)])[0].lam

    def test_row_monotone(self):
        t = build_table([Fraction(1, 2)], [-1.0, -0.5, 0.0, 0.5, 1.0], CellSpec(p=0, L=0, T=100.0))
        assert t.monotonicity_violations() == []
        assert t.bounds_violations(PeriodicPotential(), Forcing()) == []

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        t = HbarTable([0.0, 0.5], [-1.0, 0.0, 1.0], rng.normal(size=6), rng.uniform(size=6) * 1e-7,
                      [True] * 6, {"T": 200.0})
        back = HbarTable.load(t.save(tmp_path / "t.json"))
        assert np.array_equal(back.lam, t.lam) and np.array_equal(back.err, t.err)
        assert np.array_equal(back.p, t.p) and back.meta == t.meta

    def test_rejects_unsorted(self):
        with pytest.raises(InvalidConfigurationError):
            build_table([Fraction(1, 2), Fraction(0)], [0.0], CellSpec(p=0, L=0))

    def test_wrong_format(self):
        with pytest.raises(InvalidConfigurationError):
            HbarTable.from_dict({"format": "other"})

    def test_detects_violation(self):
        t = HbarTable([0.0], [0.0, 1.0], [0.5, 0.1], [1e-6, 1e-6], [True, True])
        assert len(t.monotonicity_violations()) == 1


class TestSymmetry:
    def test_half_one(self):
        rep = symmetry_suite(CellSpec(p=0, L=0, T=100.0), [(Fraction(1, 2), 1.0)])
        assert rep.passed and len(rep.rows) == 2

    def test_zero_stress_row(self):
        rep = symmetry_suite(CellSpec(p=0, L=0, T=100.0),
                             [(Fraction(1, 4), 0.0), (Fraction(1, 2), 0.0)], checks=("iv",))
        assert rep.passed and {r["check"] for r in rep.rows} == {"iv0"}

    def test_refuses_without_hypothesis(self):
        odd = Forcing((ForcingMode(0, 1, 0.1, -math.pi / 2),))
        with pytest.raises(InvalidConfigurationError, match="even"):
            symmetry_suite(CellSpec(p=0, L=0, forcing=odd), [(Fraction(1, 2), 1.0)],
                           checks=("iii",))
        even = Forcing((ForcingMode(1, 0, 0.1),))
        with pytest.raises(InvalidConfigurationError, match="odd"):
            symmetry_suite(CellSpec(p=0, L=0, forcing=even), [(Fraction(1, 2), 1.0)],
                           checks=("iv",))

    def test_odd_forcing_iv(self):
        odd = Forcing((ForcingMode(0, 1, 0.1, -math.pi / 2),))
        rep = symmetry_suite(CellSpec(p=0, L=0, forcing=odd, T=100.0), [(Fraction(1, 2), 0.8)],
                             checks=("iv",))
        assert rep.passed
