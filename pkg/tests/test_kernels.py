import math

import numpy as np
import pytest

from kinrev.kernels import (
    KernelSpec,
    check_boundedness_and_domination,
    check_mass_conservation,
    check_power_law,
    check_transverse_normalization,
    eval_a0,
    eval_ell,
    eval_k,
    eval_second_moment,
    second_moment_quadrature,
    transverse_mass_within,
)
from kinrev.quadrature import integrate_half_line

ALL_SPECS = [
    KernelSpec("gaussian_flux", alpha=1.0, beta=1.0),
    KernelSpec("gaussian_flux", alpha=2.0, beta=0.5),
    KernelSpec("width_coupled", alpha=1.0),
    KernelSpec("power_family", alpha=1.0, beta=-1.0),
    KernelSpec("power_family", alpha=1.0, beta=0.0),
    KernelSpec("power_family", alpha=1.0, beta=1.0),
    KernelSpec("power_family", alpha=1.0, beta=2.0),
    KernelSpec("tabulated", m=6.0),
]


class TestEvalK:
    def test_gaussian_flux_direct_substitution(self):
        spec = KernelSpec("gaussian_flux", beta=1.0)
        assert eval_k(spec, 0.0, 2.0) == pytest.approx(4.0, abs=1e-14)

    def test_vanishes_at_zero_relative_velocity(self):
        spec = KernelSpec("gaussian_flux", beta=2.0)
        assert eval_k(spec, 1.3, 0.0) == 0.0

    def test_width_coupled_substitution(self):
        spec = KernelSpec("width_coupled")
        assert eval_k(spec, 1.0, 1.0) == pytest.approx(2.0 * math.exp(-1.0), rel=1e-14)

    def test_invalid_parameters_rejected(self):
        with pytest.raises(ValueError):
            KernelSpec("gaussian_flux", beta=-1.0)
        with pytest.raises(ValueError):
            KernelSpec("power_family", beta=3.0)
        with pytest.raises(ValueError):
            KernelSpec("tabulated", m=4.0)
        with pytest.raises(ValueError):
            KernelSpec("gaussian_flux", dim=4)


class TestEvalA0:
    def test_gaussian_center(self):
        assert eval_a0(KernelSpec("gaussian_flux", alpha=1.0, c1=1.0), 0.0) == 1.0

    def test_gaussian_substitution(self):
        spec = KernelSpec("gaussian_flux", alpha=2.0, c1=3.0)
        assert eval_a0(spec, 1.0) == pytest.approx(3.0 * math.exp(-2.0), rel=1e-14)
        assert eval_a0(spec, -1.0) == eval_a0(spec, 1.0)

    def test_tabulated_algebraic_tail(self):
        spec = KernelSpec("tabulated", m=6.0)
        assert eval_a0(spec, 2.0) == pytest.approx(2.0 ** -6, rel=1e-14)
        assert eval_a0(spec, 0.5) == 1.0


class TestEvalEll:
    def test_gaussian_unit_coefficient(self):
        spec = KernelSpec("gaussian_flux", beta=math.pi / 4.0)
        assert eval_ell(spec, 0.5) == pytest.approx(0.75, rel=1e-13)

    def test_vanishes_at_zero(self):
        for spec in ALL_SPECS:
            assert eval_ell(spec, 0.0) == 0.0

    def test_width_coupled_value(self):
        spec = KernelSpec("width_coupled")
        assert eval_ell(spec, 1.0) == pytest.approx(1.0 + math.sqrt(math.pi) / 2.0, rel=1e-13)

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"{s.family}-b{s.beta}")
    def test_closed_form_matches_quadrature(self, spec):
        for w in (0.03, 0.4, 1.7):
            assert eval_second_moment(spec, w) == pytest.approx(
                second_moment_quadrature(spec, w), rel=1e-9, abs=1e-12)


class TestMassConservation:
    def test_gaussian_small_grid(self):
        rep = check_mass_conservation(KernelSpec("gaussian_flux", beta=2.0),
                                      [0.5, -0.5, 1.0, -1.0], tol=1e-8)
        assert rep["pass"]
        assert rep["max_abs_error"] <= 1e-10

    def test_zero_point(self):
        rep = check_mass_conservation(KernelSpec("gaussian_flux"), [0.0])
        assert rep["max_abs_error"] <= 1e-12

    def test_power_family_normalization_vs_fine_oracle(self):
        spec = KernelSpec("power_family", beta=1.0)
        rep = check_mass_conservation(spec, [0.3, 1.0, 2.0], tol=1e-8)
        assert rep["pass"]
        # oracle: the same flux quadrature at 10x finer tolerance
        for u in (0.3, 1.0, 2.0):
            fine = integrate_half_line(
                lambda v: v * eval_k(spec, v, u), abs_tol=1e-11)
            assert fine == pytest.approx(abs(u), abs=1e-10)

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"{s.family}-b{s.beta}")
    def test_all_families_on_standard_grid(self, spec):
        grid = [1e-3, -1e-3, 1e-2, -1e-2, 1e-1, -1e-1, 1.0, -1.0]
        rep = check_mass_conservation(spec, grid, tol=1e-8)
        assert rep["pass"], rep


class TestPowerLaw:
    @pytest.mark.parametrize("spec,expected", [
        (KernelSpec("gaussian_flux"), 1.0),
        (KernelSpec("width_coupled"), 1.5),
        (KernelSpec("power_family", beta=-1.0), 2.0),
        (KernelSpec("power_family", beta=0.0), 1.5),
        (KernelSpec("power_family", beta=1.0), 1.0),
        (KernelSpec("power_family", beta=2.0), 0.5),
        (KernelSpec("tabulated", m=6.0), 1.5),
    ], ids=lambda v: str(v))
    def test_exponent_recovery(self, spec, expected):
        rep = check_power_law(spec, gamma=0.1)
        assert abs(rep["p_est"] - expected) <= 0.05
        assert abs(rep["p_est"] - spec.p_declared) <= 0.05
        assert rep["monotone_ok"]

    def test_sandwich_bounds_ell(self):
        gamma = 0.1
        for spec in ALL_SPECS:
            rep = check_power_law(spec, gamma)
            p, c, C = rep["p_est"], rep["c_fit"], rep["C_fit"]
            u = np.linspace(-gamma, gamma, 101)
            u = u[u != 0.0]
            ell = np.array([eval_ell(spec, x) for x in u])
            assert np.all(c * np.abs(u) ** p <= ell * (1 + 1e-12))
            assert np.all(ell <= u ** 2 + C * np.abs(u) ** p * (1 + 1e-12))


class TestBoundedness:
    def test_gaussian_sup_bound(self):
        rep = check_boundedness_and_domination(
            KernelSpec("gaussian_flux", beta=1.0), gamma=0.1, v_inf=0.0)
        assert rep["sup_k"] <= 0.2 + 1e-12
        assert rep["bounded_ok"]

    def test_sup_shrinks_with_gamma(self):
        spec = KernelSpec("gaussian_flux", beta=1.0)
        sups = [check_boundedness_and_domination(spec, g, 0.0)["sup_k"]
                for g in (0.2, 0.02, 0.002)]
        assert sups[0] > sups[1] > sups[2]
        assert sups[2] <= 2.0 * 0.002 + 1e-12

    def test_width_coupled_dominated(self):
        rep = check_boundedness_and_domination(KernelSpec("width_coupled"),
                                               gamma=0.1, v_inf=0.5)
        assert rep["dominated_ok"]


class TestInvariants:
    def test_evenness_random_pairs(self):
        rng = np.random.default_rng(20240211)
        pairs = rng.normal(scale=2.0, size=(1000, 2))
        for spec in ALL_SPECS:
            for v, u in pairs[:250] if spec.family == "power_family" else pairs:
                assert eval_k(spec, v, u) == eval_k(spec, -v, u)
                assert eval_k(spec, v, u) == eval_k(spec, v, -u)
                assert eval_a0(spec, u) == eval_a0(spec, -u)

    def test_transverse_normalization(self):
        for dim in (1, 2, 3):
            rep = check_transverse_normalization(dim)
            assert rep["pass"]
            assert abs(rep["integral"] - 1.0) <= 1e-8
            assert rep["b0"] > 0

    def test_transverse_mass_closed_forms(self):
        assert transverse_mass_within(3.7, 1) == 1.0
        assert transverse_mass_within(1.2, 2) == pytest.approx(math.erf(1.2 / math.sqrt(2)))
        assert transverse_mass_within(2.0, 3) == pytest.approx(1.0 - math.exp(-2.0))
        assert transverse_mass_within(0.0, 3) == 0.0


class TestSerialization:
    def test_round_trip(self):
        spec = KernelSpec("power_family", alpha=1.5, beta=0.25, c1=2.0, dim=2)
        again = KernelSpec.from_json(spec.to_json())
        assert again == spec

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="kernell"):
            KernelSpec.from_json({"family": "gaussian_flux", "kernell": 1.0})

    def test_gaussian_c2_is_twice_beta(self):
        spec = KernelSpec("gaussian_flux", beta=0.77)
        assert spec.c2 == pytest.approx(2 * 0.77, abs=0.0)
