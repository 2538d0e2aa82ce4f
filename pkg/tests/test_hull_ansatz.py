import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from pnlab.errors import InvalidConfigurationError
from pnlab.hull_ansatz import (AnsatzParams, OrowanResult, decay_checks, default_truncation,
                               eval_ansatz, lattice_limits, lattice_sums, orowan_horizon,
                               period_grid, residual, solve_psi, split_point, zero_psi)
from pnlab.physics_models import PeriodicPotential, closed_form_layer_profile, solve_layer

# Limits from mpmath (cotangent identity and nsum of the tails), 30 digits.
LIMITS = {
    0.5: (-2.0, 0.934802200544679309417245499938, 4.93480220054467930941724549994),
    0.25: (-0.858407346410206761537356616721, 1.19732915450711073927131911934,
           2.54187964767160649839766288042),
    -0.3: (1.05083266483113491506043701077, 2.83404915669461055540287145875,
           1.13425343499661936766809920115),
}
BASEL = math.pi**2 / 6


@pytest.fixture(scope="module")
def layer():
    return closed_form_layer_profile(100.0, 4001)


@pytest.fixture(scope="module")
def psi1(layer):
    return solve_psi(layer, 1.0)


@pytest.fixture(scope="module")
def two_mode():
    pot = PeriodicPotential((1 / (4 * math.pi**2), 0.3 / (16 * math.pi**2)))
    lay = solve_layer(pot, R=100.0, n=2048)
    return lay, solve_psi(lay, 1.0)


class TestPsi:
    def test_zero_source(self, layer):
        prof = solve_psi(layer, 0.0)
        assert prof.c == 0.0 and np.abs(prof.psi).max() == 0.0

    def test_c_equals_two_pi(self, psi1):
        assert abs(psi1.c - 2 * math.pi) <= 1e-3
        assert math.isfinite(psi1.K2)

    def test_residual(self, psi1):
        assert psi1.residual <= 1e-5

    def test_default_potential_corrector_vanishes(self, psi1):
        # for W = (1 - cos 2 pi v)/(4 pi^2) the source is proportional to the kernel element
        assert np.abs(psi1.psi).max() <= 1e-10

    def test_linear_in_L0(self, two_mode):
        lay, p1 = two_mode
        p2 = solve_psi(lay, 2.0)
        assert np.abs(p2.psi - 2 * p1.psi).max() <= 1e-8

    def test_orthogonality(self, two_mode):
        lay, prof = two_mode
        assert abs(trapezoid(prof.psi * lay.dphi, lay.nodes)) <= 1e-8

    def test_envelope_invariant(self, two_mode):
        lay, prof = two_mode
        x = lay.nodes
        sel = np.abs(x) >= 1
        assert np.all(np.abs(prof.psi[sel]) <= (abs(prof.K2) + prof.K3) / np.abs(x[sel]))

    def test_nontrivial(self, two_mode):
        _, prof = two_mode
        assert np.abs(prof.psi).max() > 1e-3 and prof.residual <= 1e-5

    def test_solvability_shadow(self, two_mode):
        lay, _ = two_mode
        res = [solve_psi(lay, 1.0, extra_source=e, check=False).residual for e in (0.01, 0.02, 0.04)]
        assert res[1] / res[0] == pytest.approx(2, rel=0.1)
        assert res[2] / res[1] == pytest.approx(2, rel=0.1)

    def test_zero_psi(self, layer):
        z = zero_psi(layer)
        assert z.c == 0.0 and not np.any(z.psi)


class TestLattice:
    @pytest.mark.parametrize("gamma", sorted(LIMITS))
    def test_limits(self, gamma):
        assert np.allclose([float(v) for v in lattice_limits(gamma)], LIMITS[gamma], atol=1e-14)

    @pytest.mark.parametrize("gamma", sorted(LIMITS))
    def test_partial_sums_within_one_over_n(self, gamma):
        n = 100_000
        assert max(lattice_sums(gamma, n).errors()) <= 1 / n

    def test_gamma_zero(self):
        for n in (1, 7, 100, 5000):
            assert lattice_sums(0.0, n).S1 == 0
        lim = lattice_limits(0.0)
        assert float(lim[1]) == pytest.approx(BASEL, abs=1e-14)
        assert float(lim[2]) == pytest.approx(BASEL, abs=1e-14)

    def test_random_gammas(self):
        rng = np.random.default_rng(5)
        n = 10_000
        for g in rng.uniform(-0.4999, 0.5, 20):
            assert max(lattice_sums(float(g), n).errors()) <= 1 / n

    def test_shifted_point(self):
        # x = i0 + gamma with i0 != 0: the asymmetric range adds about 2 |i0| / n to S1
        ls = lattice_sums(3.25, 10_000)
        assert ls.i0 == 3 and ls.gamma == 0.25
        assert ls.errors()[0] <= 7 / 10_000

    def test_split_point(self):
        assert split_point(2.5) == (2, 0.5)
        assert split_point(-2.5) == (-3, 0.5)

    def test_rejects_small_n(self):
        with pytest.raises(InvalidConfigurationError):
            lattice_sums(5.2, 5)


class TestAnsatz:
    def test_displacement_at_zero(self, layer):
        prm = AnsatzParams(0.25, 1.0, 0.0, layer, zero_psi(layer), n=64)
        s, _, _ = eval_ansatz(prm, 0.0)
        assert abs(s[0]) <= 1.0

    def test_shift_by_one(self, layer, psi1):
        prm = AnsatzParams(0.125, 1.0, 1.0, layer, psi1, n=256)
        s = eval_ansatz(prm, np.array([0.1, 1.1]))[0]
        assert abs(s[1] - s[0] - 1) <= 1 / prm.n

    def test_cauchy_in_n(self, layer, psi1):
        x = np.linspace(-0.5, 0.5, 11)
        vals = [eval_ansatz(AnsatzParams(0.125, 1.0, 1.0, layer, psi1, n=n), x) for n in
                (64, 128, 256, 512)]
        for d in range(3):
            diffs = [np.abs(vals[i + 1][d] - vals[i][d]).max() for i in range(3)]
            assert diffs[0] > diffs[1] > diffs[2]
        # tail bound ~ K / n with K from the 1/x tail of phi at scale delta |p0|
        assert np.abs(vals[3][0] - vals[2][0]).max() <= 1.0 / 256

    def test_residual_terms_cauchy(self, layer, psi1):
        x = period_grid(41)
        nl = [residual(AnsatzParams(0.125, 1.0, 1.0, layer, psi1, n=n), x).values
              for n in (64, 128, 256)]
        assert np.abs(nl[2] - nl[1]).max() < np.abs(nl[1] - nl[0]).max()

    def test_residual_calibrated_delta_squared(self, layer, psi1):
        x = period_grid()
        sup4 = residual(AnsatzParams(0.25, 1.0, 1.0, layer, psi1, n=256), x).sup
        C = sup4 / 0.25**2
        assert residual(AnsatzParams(0.125, 1.0, 1.0, layer, psi1, n=256), x).sup <= C * 0.125**2

    def test_zero_stress_paths_agree(self, layer):
        x = period_grid(101)
        a = residual(AnsatzParams(0.125, 1.0, 0.0, layer, zero_psi(layer)), x)
        b = residual(AnsatzParams(0.125, 1.0, 0.0, layer, solve_psi(layer, 0.0)), x)
        assert np.abs(a.values - b.values).max() <= 1e-12 and a.lam_bar == 0.0

    def test_sup_is_max(self, layer, psi1):
        rep = residual(AnsatzParams(0.25, 1.0, 1.0, layer, psi1), period_grid(81))
        assert rep.sup == np.abs(rep.values).max()

    def test_rejects_far_points(self, layer, psi1):
        with pytest.raises(InvalidConfigurationError):
            residual(AnsatzParams(0.25, 1.0, 1.0, layer, psi1, n=4), [3.0])

    def test_standing_assumption(self, layer, psi1):
        with pytest.raises(InvalidConfigurationError):
            AnsatzParams(0.75, 1.0, 1.0, layer, psi1)
        with pytest.raises(InvalidConfigurationError):
            AnsatzParams(0.25, 0.0, 1.0, layer, psi1)

    def test_mismatched_corrector(self, layer, psi1):
        with pytest.raises(InvalidConfigurationError, match="corrector"):
            AnsatzParams(0.25, 1.0, 2.0, layer, psi1)

    def test_default_truncation(self):
        assert default_truncation(0.25, 1.0) == 64
        assert default_truncation(1 / 32, 1.0) == 256
        assert default_truncation(0.25, 1.0, floor=1) == 32


class TestDecay:
    def test_closed_form_phi(self, layer):
        rep = decay_checks(layer)
        assert rep.passed and rep.constants["phi_remainder"] <= 1.0
        assert 0 < rep.constants["K0"] <= rep.constants["K1"]

    def test_zero_psi_constants(self, layer):
        rep = decay_checks(layer, zero_psi(layer))
        assert rep.passed and rep.constants["K2"] == 0 and rep.constants["K3"] == 0

    def test_psi_two_window(self, two_mode):
        lay, prof = two_mode
        rep = decay_checks(lay, prof)
        assert rep.passed and rep.worst_violation <= 0


class TestOrowanHelpers:
    def test_horizon(self):
        assert orowan_horizon(1 / 32, 1, 1, 2 * math.pi) == pytest.approx(50 * 1024 / (2 * math.pi))
        assert orowan_horizon(0.5, 1, 1, 2 * math.pi) == 200.0

    def test_monotone_flag(self):
        r = OrowanResult([0.125, 0.0625], [0, 0], [0, 0], [5.5, 6.2], 6.9, 2 * math.pi)
        assert r.monotone
        r = OrowanResult([0.125, 0.0625], [0, 0], [0, 0], [5.5, 7.2], 8.9, 2 * math.pi)
        assert not r.monotone
