import math

import numpy as np
import pytest

from kinrev.equilibrium import (
    BodyConfig,
    BracketError,
    f0_derivative,
    f0_force,
    f0_interpolant,
    motion_class_params,
    solve_equilibrium,
)
from kinrev.kernels import KernelSpec, eval_a0, eval_ell

BUILTINS = [
    KernelSpec("gaussian_flux", alpha=1.0, beta=1.0),
    KernelSpec("gaussian_flux", alpha=1.0, beta=0.5),
    KernelSpec("width_coupled"),
    KernelSpec("power_family", beta=0.5),
    KernelSpec("tabulated", m=6.0),
]

BODY_1D = BodyConfig(dim=1, E=0.0, gamma=0.05)


class TestBodyConfig:
    def test_face_area_by_dim(self):
        assert BodyConfig(dim=1, radius=2.0).face_area == 1.0
        assert BodyConfig(dim=2, radius=2.0).face_area == 4.0
        assert BodyConfig(dim=3, radius=2.0).face_area == pytest.approx(4 * math.pi)

    def test_gamma_range_enforced(self):
        with pytest.raises(ValueError):
            BodyConfig(gamma=1.5)
        with pytest.raises(ValueError):
            BodyConfig(gamma=0.0)

    def test_initial_velocity(self):
        body = BodyConfig(gamma=0.05)
        assert body.initial_velocity(0.3) == pytest.approx(0.35)


class TestF0Force:
    def test_zero_at_rest_for_even_densities(self):
        for spec in BUILTINS:
            assert abs(f0_force(spec, BODY_1D, 0.0)) <= 1e-10

    def test_brute_force_riemann_oracle(self):
        spec = KernelSpec("gaussian_flux", alpha=1.0, beta=1.0)
        w = 0.1
        u = np.linspace(-10.0, 10.0, 1_000_001)
        du = u[1] - u[0]
        integrand = np.array([eval_ell(spec, ui - w) * eval_a0(spec, ui) for ui in u[:: 1]])
        left = np.sum(integrand[u <= w]) * du
        right = np.sum(integrand[u >= w]) * du
        brute = left - right
        val = f0_force(spec, BODY_1D, w)
        assert val > 0
        assert val == pytest.approx(brute, abs=1e-6)

    def test_monotonicity_spot(self):
        spec = KernelSpec("gaussian_flux", alpha=1.0, beta=1.0)
        assert f0_force(spec, BODY_1D, 0.2) > f0_force(spec, BODY_1D, 0.1)

    def test_monotonicity_random_pairs(self):
        rng = np.random.default_rng(7)
        spec = KernelSpec("width_coupled")
        for _ in range(20):
            a, b = np.sort(rng.uniform(-1.0, 1.0, size=2))
            if b - a < 1e-3:
                continue
            assert f0_force(spec, BODY_1D, a) < f0_force(spec, BODY_1D, b)

    def test_face_area_scaling(self):
        spec = KernelSpec("gaussian_flux")
        b3 = BodyConfig(dim=3, radius=1.0, gamma=0.05)
        assert f0_force(spec, b3, 0.2) == pytest.approx(
            math.pi * f0_force(spec, BODY_1D, 0.2), rel=1e-12)


class TestF0Derivative:
    def test_positive_on_samples(self):
        spec = KernelSpec("gaussian_flux", alpha=1.0, beta=1.0)
        for w in (0.0, 0.1, 0.5):
            assert f0_derivative(spec, BODY_1D, w) > 0

    def test_even_in_w(self):
        spec = KernelSpec("gaussian_flux", alpha=1.0, beta=1.0)
        assert f0_derivative(spec, BODY_1D, 0.3) == pytest.approx(
            f0_derivative(spec, BODY_1D, -0.3), abs=1e-6)

    def test_step_halving_oracle(self):
        spec = KernelSpec("gaussian_flux", alpha=1.0, beta=1.0)
        w = 0.25
        fine = (f0_force(spec, BODY_1D, w + 2.5e-6)
                - f0_force(spec, BODY_1D, w - 2.5e-6)) / 5e-6
        assert f0_derivative(spec, BODY_1D, w) == pytest.approx(fine, abs=1e-6)


class TestSolveEquilibrium:
    def test_zero_force_is_rest(self):
        assert solve_equilibrium(KernelSpec("gaussian_flux"), BODY_1D) == 0.0

    @pytest.mark.parametrize("v", [0.1, 0.3, 0.7])
    def test_round_trip(self, v):
        spec = KernelSpec("gaussian_flux", alpha=1.0, beta=1.0)
        body = BodyConfig(dim=1, E=f0_force(spec, BODY_1D, v), gamma=0.05)
        v_back = solve_equilibrium(spec, body)
        assert v_back == pytest.approx(v, abs=1e-8)
        assert abs(f0_force(spec, body, v_back) - body.E) <= 1e-10

    def test_negative_force_rejected(self):
        with pytest.raises(ValueError):
            BodyConfig(dim=1, E=-1.0)

    def test_unphysical_force_errors(self):
        spec = KernelSpec("gaussian_flux")
        body = BodyConfig(dim=1, E=1e9, gamma=0.05)
        with pytest.raises(BracketError):
            solve_equilibrium(spec, body)


class TestMotionClassParams:
    def test_irreversal_horizon(self):
        spec = KernelSpec("gaussian_flux", alpha=1.0, beta=1.0)
        params = motion_class_params(spec, BODY_1D, "irreversal", v_inf=0.0)
        assert params.t0 == pytest.approx(abs(math.log(0.05)), rel=1e-12)
        assert params.t0 == pytest.approx(2.9957, abs=1e-3)

    def test_reversal_horizon_midpoint(self):
        spec = KernelSpec("gaussian_flux", alpha=1.0, beta=1.0)
        params = motion_class_params(spec, BODY_1D, "reversal", v_inf=0.0)
        assert params.K0 == pytest.approx(1.5 / params.B0, rel=1e-12)
        assert params.t0 == pytest.approx(1.5 * abs(math.log(0.05)) / params.B0, rel=1e-12)
        assert 1.0 / params.B0 <= params.K0 <= 2.0 / params.B0

    def test_extrema_ordering(self):
        for spec in BUILTINS[:3]:
            params = motion_class_params(spec, BODY_1D, "irreversal", v_inf=0.0)
            assert 0 < params.B_inf <= params.B0

    def test_grid_doubling_stability(self):
        spec = KernelSpec("gaussian_flux", alpha=1.0, beta=0.5)
        p64 = motion_class_params(spec, BODY_1D, "irreversal", v_inf=0.0, n_grid=64)
        p128 = motion_class_params(spec, BODY_1D, "irreversal", v_inf=0.0, n_grid=128)
        assert p64.B0 == pytest.approx(p128.B0, rel=1e-5)
        assert p64.B_inf == pytest.approx(p128.B_inf, rel=1e-5)

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError):
            motion_class_params(KernelSpec("gaussian_flux"), BODY_1D, "oscillating")


class TestInterpolant:
    def test_matches_direct_quadrature(self):
        spec = KernelSpec("gaussian_flux", alpha=1.0, beta=0.5)
        body = BodyConfig(dim=3, gamma=0.05)
        cheb = f0_interpolant(spec, body, center=0.0, half_width=0.2)
        for w in (-0.18, -0.03, 0.0, 0.11, 0.2):
            assert cheb(w) == pytest.approx(f0_force(spec, body, w), abs=1e-11)
        dcheb = cheb.deriv()
        assert dcheb(0.1) == pytest.approx(f0_derivative(spec, body, 0.1), rel=1e-6)
