import math

import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from tugrobin import GameParams, ParamError, derive_params, expansion_coefficient


class TestDeriveParams:
    def test_reference_split(self):
        p = derive_params(2, 1.5, 0.02, 1.0, p0=1.25)
        assert p.a == pytest.approx(math.sqrt(0.125), abs=1e-15)
        assert p.A == pytest.approx(math.sqrt(32.0), abs=1e-13)
        assert p.Q == pytest.approx(1.0 / (1.0 + math.sqrt(32.0)), abs=1e-15)
        # axis identity residual
        assert abs((2 + 2) / p.A ** 2 + p.a ** 2 - 0.25) < 1e-14

    def test_alpha_extended_precision(self):
        # evaluate the alpha formula at 50 digits and compare
        p = derive_params(2, 1.5, 0.02, 1.0, p0=1.25)
        with mpmath.workdps(50):
            A = mpmath.sqrt(32)
            qa2 = (A / (1 + A)) ** 2
            alpha = 4 * mpmath.mpf("0.5") / (4 * mpmath.mpf("0.5")
                                             + mpmath.mpf("0.25") * qa2)
            assert abs(p.alpha - float(alpha)) < 1e-15

    def test_default_p0(self):
        p = derive_params(3, 1.7, 0.1, 2.0)
        assert p.p0 == pytest.approx(1.35)
        assert p.gamma == pytest.approx(2.0 * (1 - p.alpha), abs=1e-15)

    def test_open_interval_preconditions(self):
        with pytest.raises(ParamError):
            derive_params(2, 1.5, 0.02, 1.0, p0=1.5)   # p0 = p excluded
        with pytest.raises(ParamError):
            derive_params(2, 2.0, 0.02, 1.0)
        with pytest.raises(ParamError):
            derive_params(2, 1.0, 0.02, 1.0)

    def test_inconsistent_bundle_rejected(self):
        good = derive_params(2, 1.5, 0.02, 1.0)
        with pytest.raises(ParamError):
            GameParams(n=good.n, p=good.p, p0=good.p0, gamma0=good.gamma0,
                       A=good.A * 1.01, a=good.a, Q=good.Q, alpha=good.alpha,
                       gamma=good.gamma, eps=good.eps)

    @given(st.integers(2, 6),
           st.floats(1.05, 1.95),
           st.floats(0.05, 0.95),
           st.floats(0.01, 10.0))
    @settings(max_examples=100, deadline=None)
    def test_identities_random(self, n, p, frac, gamma0):
        p0 = 1.0 + frac * (p - 1.0)
        if not (1.0 < p0 < p):
            return
        gp = derive_params(n, p, 0.05, gamma0, p0=p0)
        assert abs((n + 2) / gp.A ** 2 + gp.a ** 2 - (p0 - 1)) < 1e-12
        qa2 = (gp.Q * gp.A) ** 2
        alpha_ref = 4 * (2 - p) / (4 * (2 - p) + (p - p0) * qa2)
        assert abs(gp.alpha - alpha_ref) < 1e-12
        assert gp.Q * (1 + gp.A) <= 1.0 + 1e-12
        assert 0 < gp.a < 1
        assert 0 < gp.alpha < 1

    def test_with_eps(self):
        p = derive_params(2, 1.5, 0.02, 1.0)
        q = p.with_eps(0.01)
        assert q.eps == 0.01 and q.A == p.A and q.alpha == p.alpha


class TestExpansionCoefficient:
    def test_closed_form(self):
        # single source of truth: alpha (QA)^2 / (8(n+2)) + (1-alpha)/(2(n+2))
        p = derive_params(2, 1.5, 0.02, 1.0)
        ref = p.alpha * (p.Q * p.A) ** 2 / (8 * (p.n + 2)) \
            + (1 - p.alpha) / (2 * (p.n + 2))
        assert expansion_coefficient(p) == pytest.approx(ref, abs=1e-16)

    def test_blend_collapses_to_target_exponent(self):
        # the alpha identity makes the p0/Laplacian blend act as kappa * Lap_p^N:
        # c1 (p0 - 2) must equal (c1 + c2)(p - 2)
        p = derive_params(2, 1.37, 0.02, 1.0)
        c1 = p.alpha * (p.Q * p.A) ** 2 / (8 * (p.n + 2))
        c2 = (1 - p.alpha) / (2 * (p.n + 2))
        assert c1 * (p.p0 - 2) == pytest.approx((c1 + c2) * (p.p - 2), abs=1e-15)
