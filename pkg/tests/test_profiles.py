"""Layer-profile solver: constants, tails, and closed-form pieces."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quenchmesh.errors import DomainError
from quenchmesh.profiles import (T0, WKB_RATE, composite_solution, outer_u0,
                                 outer_u0_dot, phi, predicted_min_shift,
                                 wkb_envelope_fit)


class TestOuterSolution:
    def test_initial_value(self):
        assert outer_u0(0.0) == 0.0

    def test_closed_form(self):
        # (1 + u0)^3 = 1 - 3t for the spatially flat problem
        t = np.linspace(0.0, T0, 57)
        assert np.allclose((1.0 + outer_u0(t)) ** 3, 1.0 - 3.0 * t,
                           atol=1e-13)

    def test_endpoint_touches(self):
        assert outer_u0(T0) == pytest.approx(-1.0, abs=1e-12)

    @given(st.floats(min_value=1e-6, max_value=T0 - 1e-6))
    @settings(max_examples=50, deadline=None)
    def test_ode_residual(self, t):
        # du/dt = -1/(1+u)^2
        u = outer_u0(t)
        assert outer_u0_dot(t) == pytest.approx(-1.0 / (1.0 + u) ** 2,
                                                rel=1e-10)

    def test_rejects_future_times(self):
        with pytest.raises(DomainError):
            outer_u0(T0 + 1e-6)


class TestPhi:
    def test_zero_at_start(self):
        assert phi(0.0, 0.02) == 0.0

    def test_value_at_quench(self):
        # f(T0) = 1 so phi(T0; eps) = sqrt(eps)
        for eps in (1e-4, 0.02, 0.1):
            assert phi(T0, eps) == pytest.approx(np.sqrt(eps), rel=1e-13)

    @given(st.floats(min_value=1e-8, max_value=T0 - 1e-8),
           st.floats(min_value=1e-6, max_value=0.5))
    @settings(max_examples=100, deadline=None)
    def test_monotone_and_scaling(self, t, eps):
        assert 0.0 < phi(t, eps) < phi(T0, eps) + 1e-15
        # sqrt(eps) scaling is exact
        assert phi(t, 4.0 * eps) == pytest.approx(2.0 * phi(t, eps),
                                                  rel=1e-12)

    def test_rejects_bad_args(self):
        with pytest.raises(DomainError):
            phi(0.1, -1.0)
        with pytest.raises(DomainError):
            phi(0.5, 0.02)


class TestProfileConstants:
    """Computed layer constants against their published values."""

    def test_z0(self, constants):
        assert constants.z0 == pytest.approx(2.89, abs=0.02)

    def test_w0_at_z0(self, constants):
        assert constants.w0_at_z0 == pytest.approx(-1.0822, abs=0.002)

    def test_w1bar_at_z0(self, constants):
        assert constants.w1bar_at_z0 == pytest.approx(-0.1186, abs=0.002)

    def test_alpha(self, constants):
        assert constants.alpha == pytest.approx(0.3533, abs=0.005)

    def test_z0_is_global_minimum(self, w0, constants):
        z = np.linspace(0.05, w0.grid[-1], 30000)
        vals = w0(z)
        assert vals.min() >= constants.w0_at_z0 - 1e-6
        assert abs(z[np.argmin(vals)] - constants.z0) < 2e-3

    def test_boundary_conditions(self, w0, w1bar):
        # w0 vanishes at the wall and relaxes to the far-field value -1
        assert w0(0.0) == pytest.approx(0.0, abs=1e-8)
        assert w0.far_field_limit == -1.0
        assert abs(w0(29.0) + 1.0) < 1e-4  # oscillation decayed
        assert w1bar(0.0) == pytest.approx(0.0, abs=1e-8)
        assert w1bar.far_field_limit == 0.0


class TestWkbFit:
    def test_rate_within_5_percent(self, w0):
        slope = wkb_envelope_fit(w0)
        assert abs(slope - WKB_RATE) / WKB_RATE < 0.05

    def test_uncorrected_fit_overestimates(self, w0):
        raw = wkb_envelope_fit(w0, prefactor_correction=False)
        assert raw > wkb_envelope_fit(w0)


class TestMinShift:
    def test_flat_boundary_no_shift(self, constants):
        assert predicted_min_shift(constants, [0.0], 0.1) == constants.z0

    def test_sign_of_curvature_shift(self, constants):
        # alpha > 0: convex boundary (kappa > 0) pulls the minimum inward
        inward = predicted_min_shift(constants, [1.0], 0.1)
        outward = predicted_min_shift(constants, [-1.0], 0.1)
        assert inward < constants.z0 < outward

    def test_requires_contributors(self, constants):
        with pytest.raises(DomainError):
            predicted_min_shift(constants, [], 0.1)


class TestComposite:
    def test_outer_limit_deep_inside(self, w0, w1bar):
        from quenchmesh.geometry import preset_domain
        dom = preset_domain("rect")
        t, eps = 0.2, 1e-4
        u = composite_solution(dom, w0, w1bar, (0.0, 0.0), t, eps)
        assert u == pytest.approx(outer_u0(t), abs=1e-6)

    def test_vanishes_at_wall(self, w0, w1bar):
        from quenchmesh.geometry import preset_domain
        dom = preset_domain("rect")
        t, eps = 0.2, 1e-3
        u = composite_solution(dom, w0, w1bar, (0.0, -0.8 + 1e-9), t, eps)
        assert abs(u) < 1e-4

    def test_initial_time_is_flat(self, w0, w1bar):
        from quenchmesh.geometry import preset_domain
        dom = preset_domain("rect")
        assert composite_solution(dom, w0, w1bar, (0.3, 0.1), 0.0, 0.02) == 0.0
