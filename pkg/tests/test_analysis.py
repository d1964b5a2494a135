import math

import numpy as np
import pytest
from scipy.optimize import brentq

from kinrev.analysis import (
    default_tail_window,
    detect_reversal,
    envelope_curves,
    expected_rate,
    fit_envelope_constants,
    fit_tail_exponent,
    verify_envelopes,
)
from kinrev.equilibrium import MotionClassParams

PARAMS_IRR = MotionClassParams(gamma=0.05, v_inf=0.0, B0=4.0, B_inf=3.8,
                               A_plus=1.0, A_minus=1.0, t0=abs(math.log(0.05)),
                               K0=math.nan, p=1.0, d=3, mode="irreversal")
PARAMS_REV = MotionClassParams(gamma=0.05, v_inf=0.0, B0=4.0, B_inf=3.8,
                               A_plus=1.0, A_minus=1.0, t0=1.1,
                               K0=0.375, p=1.0, d=3, mode="reversal")


class TestDetectReversal:
    def test_positive_decay_never_crosses(self):
        tt = np.linspace(0, 20, 2001)
        v = 0.05 * np.exp(-tt)
        report = detect_reversal(tt, v, 0.0)
        assert not report.crossed
        assert report.n_crossings == 0
        assert report.t_cross is None

    def test_crossing_located_by_root_oracle(self):
        tt = np.linspace(0, 40, 8001)
        f = lambda t: 0.05 * np.exp(-t) - 0.005 / (1.0 + t) ** 4
        v = f(tt)
        report = detect_reversal(tt, v, 0.0)
        assert report.crossed
        root = brentq(f, 0.1, 20.0)
        assert report.t_cross == pytest.approx(root, abs=2 * (tt[1] - tt[0]))

    def test_noise_floor_suppresses_wiggles(self):
        tt = np.linspace(0, 10, 1001)
        rng = np.random.default_rng(5)
        v = 0.05 * np.exp(-tt) + 1e-5 * rng.standard_normal(tt.size)
        assert detect_reversal(tt, v, 0.0).crossed  # raw noise crosses
        assert not detect_reversal(tt, v, 0.0, noise_floor=1e-4).crossed

    def test_counts_multiple_crossings(self):
        tt = np.linspace(0.0, 4 * np.pi, 2001)
        v = np.sin(tt)
        report = detect_reversal(tt, v, 0.0)
        assert report.n_crossings == 3
        assert report.t_cross == pytest.approx(np.pi, abs=0.01)


class TestFitTailExponent:
    def test_exact_power_law(self):
        tt = np.linspace(1.0, 100.0, 5000)
        v = tt ** -4.0
        fit = fit_tail_exponent(tt, v, 0.0, (2.0, 90.0))
        assert fit.slope == pytest.approx(-4.0, abs=1e-6)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-9)

    def test_exponential_plus_tail_converges_from_right(self):
        gamma, B = 0.05, 1.0
        tt = np.linspace(0.5, 300.0, 20000)
        v = gamma * np.exp(-B * tt) + gamma ** 2 * tt ** -4.0
        fit = fit_tail_exponent(tt, v, 0.0, (50.0, 250.0))
        assert fit.slope == pytest.approx(-4.0, abs=0.05)

    def test_window_must_span_factor_five(self):
        tt = np.linspace(1.0, 50.0, 2000)
        with pytest.raises(ValueError, match="factor 5"):
            fit_tail_exponent(tt, tt ** -2.0, 0.0, (10.0, 40.0))

    def test_degenerate_window_rejected(self):
        tt = np.linspace(1.0, 100.0, 30)
        with pytest.raises(ValueError, match="nodes"):
            fit_tail_exponent(tt, tt ** -2.0, 0.0, (2.0, 11.0))

    def test_sign_change_inside_window_rejected(self):
        tt = np.linspace(1.0, 100.0, 2000)
        v = tt ** -2.0 - 1e-3
        with pytest.raises(ValueError, match="sign"):
            fit_tail_exponent(tt, v, 0.0, (5.0, 90.0))

    def test_expected_rate(self):
        assert expected_rate(PARAMS_IRR) == -4.0


class TestDefaultWindow:
    def test_respects_span_floor(self):
        lo, hi = default_tail_window(t0=0.34, t_max=17.0)
        assert hi >= 5.0 * lo
        lo, hi = default_tail_window(t0=3.0, t_max=150.0)
        assert hi >= 5.0 * lo
        assert lo >= 5 * 3.0 * (1 - 1e-12) or lo >= 150.0 / 5.25 - 1e-9


class TestEnvelopes:
    def _skeleton(self, params, n=4000, t_max=40.0):
        tt = np.linspace(0.0, t_max, n)
        return tt, params.v_inf + params.gamma * np.exp(-params.B0 * tt)

    def test_pure_exponential_fails_strict_irreversal_lower(self):
        tt, v = self._skeleton(PARAMS_IRR)
        report = verify_envelopes(tt, v, PARAMS_IRR.v_inf, PARAMS_IRR)
        assert not report["lower_ok"]
        assert abs(report["A_plus"]) <= 1e-12

    def test_synthetic_irreversal_passes(self):
        tt = np.linspace(0.0, 40.0, 4001)
        g, p, d = PARAMS_IRR.gamma, PARAMS_IRR.p, PARAMS_IRR.d
        chi = tt >= PARAMS_IRR.t0 + 1
        v = g * np.exp(-PARAMS_IRR.B0 * tt) \
            + 0.01 * g ** (p + 1) * np.where(chi, 1.0 / np.maximum(tt, 1e-9) ** (p + d), 0.0)
        v[0] = g
        report = verify_envelopes(tt, v, 0.0, PARAMS_IRR)
        assert report["lower_ok"] and report["upper_ok"]
        assert report["A_plus"] == pytest.approx(0.01, rel=1e-6)
        assert report["order_ok"]

    def test_synthetic_reversal_crossover(self):
        tt = np.linspace(0.0, 40.0, 4001)
        g, p, d = PARAMS_REV.gamma, PARAMS_REV.p, PARAMS_REV.d
        v = g * np.exp(-PARAMS_REV.B0 * tt) - 0.02 * g ** (p + 1) / (1.0 + tt) ** (p + d)
        v[0] = g
        report = verify_envelopes(tt, v, 0.0, PARAMS_REV)
        assert report["upper_ok"]
        assert report["order_ok"]  # A_minus <= A_plus
        assert report["crossover_t"] is not None
        assert report["negative_after_crossover_ok"]

    def test_envelope_curves_bracket_synthetic(self):
        tt = np.linspace(0.0, 40.0, 4001)
        g, p, d = PARAMS_IRR.gamma, PARAMS_IRR.p, PARAMS_IRR.d
        chi = tt >= PARAMS_IRR.t0 + 1
        v = g * np.exp(-PARAMS_IRR.B0 * tt) \
            + 0.01 * g ** (p + 1) * np.where(chi, 1.0 / np.maximum(tt, 1e-9) ** (p + d), 0.0)
        v[0] = g
        fit = fit_envelope_constants(tt, v, 0.0, PARAMS_IRR)
        lo, hi = envelope_curves(tt, PARAMS_IRR, fit["A_plus"], fit["A_minus"])
        y = v - 0.0
        inner = slice(1, None)
        assert np.all(y[inner] >= lo[inner] - 1e-15)
        assert np.all(y[inner] <= hi[inner] + 1e-15)
