import math

import numpy as np
import pytest

from tugrobin import (AbsorptionOverflow, Ball, DomainError, ProbeOutsideDomain,
                      Strip, absorption_weight, apply_A, derive_params, dpp_step,
                      extremal_minus, extremal_plus, h_mean, s_eps, tug_means)
from tugrobin.operators import direction_set
from tugrobin.sampling import ellipsoid_map, sample_ball


@pytest.fixture(scope="module")
def params():
    return derive_params(2, 1.5, 0.02, 1.0)


@pytest.fixture(scope="module")
def big_ball():
    return Ball(np.zeros(2), 2.0)


class TestDirectionSet:
    def test_even_spacing_2d(self):
        ds = direction_set(2, 8)
        assert np.allclose(np.linalg.norm(ds, axis=1), 1.0)
        # antipode closure: second half is the negation of the first
        np.testing.assert_allclose(ds[4:], -ds[:4], atol=1e-15)

    def test_antipode_closed_3d(self):
        ds = direction_set(3, 20)
        np.testing.assert_allclose(ds[10:], -ds[:10], atol=1e-15)

    def test_odd_count_rejected(self):
        with pytest.raises(DomainError):
            direction_set(2, 7)


class TestHMean:
    def test_constant(self, params, big_ball):
        val = h_mean(lambda y: 3.25, [0.5, 0.1], [0.45, 0.1], params)
        assert val == pytest.approx(3.25, abs=1e-14)

    def test_affine_is_center_value(self, params):
        # the ellipsoid is centrally symmetric about z
        aff = lambda y: 1.0 + 2.0 * y[0] - 0.7 * y[1]
        z = np.array([0.3, -0.2])
        val = h_mean(aff, z, z - np.array([params.eps, 0.0]), params)
        assert val == pytest.approx(aff(z), abs=1e-13)

    def test_quadratic_along_axis(self, params):
        # mean of <y-z, nu>^2 is a^2 (A eps)^2 / (n+2); MC oracle cross-check
        z = np.array([0.5, 0.1])
        x = z - np.array([params.eps, 0.0])
        nu = np.array([1.0, 0.0])
        q = lambda y: float(np.dot(np.asarray(y) - z, nu) ** 2)
        exact = params.a ** 2 * (params.A * params.eps) ** 2 / 4.0
        assert h_mean(q, z, x, params) == pytest.approx(exact, rel=1e-12)
        rng = np.random.default_rng(123)
        g = rng.standard_normal((1_000_000, 2))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        W = g * np.sqrt(rng.random((1_000_000, 1)))
        pts = ellipsoid_map(z, nu, params.A * params.eps, params.a, W)
        mc = ((pts - z) @ nu) ** 2
        assert h_mean(q, z, x, params) == pytest.approx(
            mc.mean(), abs=4 * mc.std(ddof=1) / 1000.0)

    def test_undefined_at_coincident_points(self, params):
        with pytest.raises(DomainError):
            h_mean(lambda y: 0.0, [0.1, 0.1], [0.1, 0.1], params)


class TestApplyA:
    def test_constant(self, params, big_ball):
        assert apply_A(lambda y: 2.5, [0.3, 0.2], params, big_ball) == \
            pytest.approx(2.5, abs=1e-14)

    def test_affine_interior(self, params, big_ball):
        aff = lambda y: 0.3 - 1.2 * y[0] + 0.8 * y[1]
        x = np.array([0.4, -0.3])
        assert apply_A(aff, x, params, big_ball) == pytest.approx(aff(x),
                                                                  abs=1e-13)

    def test_expansion_ratio(self, big_ball):
        # (A phi - phi)/eps^2 -> kappa Lap_p^N phi with errors halving at least
        from tugrobin import expansion_coefficient
        phi = lambda y: y[0] ** 2 + 2.0 * y[1] ** 2
        x = np.array([1.0, 0.3])
        g = np.array([2.0, 1.2])
        H = np.diag([2.0, 4.0])
        uvv = g @ H @ g / (g @ g)
        base = derive_params(2, 1.5, 0.02, 1.0)
        target = expansion_coefficient(base) * (6.0 + (base.p - 2) * uvv)
        errs = []
        for eps in (0.02, 0.01):
            pe = base.with_eps(eps)
            meas = (apply_A(phi, x, pe, big_ball, dirs=64, degree=6,
                            refine=True) - phi(x)) / eps ** 2
            errs.append(abs(meas - target))
        assert errs[1] <= 0.6 * errs[0]

    def test_monotone(self, params, big_ball):
        rng = np.random.default_rng(5)
        cs = rng.standard_normal(6)

        def u(y):
            y = np.asarray(y)
            return cs[0] + cs[1] * y[0] + cs[2] * y[1] + 0.3 * math.sin(
                cs[3] * y[0] + cs[4] * y[1]) + cs[5] * 0.1 * y[0] * y[1]

        def bump(y):
            y = np.asarray(y)
            return 0.2 * math.exp(-np.dot(y, y))

        v = lambda y: u(y) + bump(y)
        for x in ([0.2, 0.1], [1.95, 0.0], [0.0, 1.2]):
            assert apply_A(u, x, params, big_ball) <= \
                apply_A(v, x, params, big_ball) + 1e-13
            G = lambda y: 0.0
            assert dpp_step(u, x, G, params, big_ball) <= \
                dpp_step(v, x, G, params, big_ball) + 1e-13


class TestDppStep:
    def test_interior_equals_apply_A_exactly(self, params, big_ball):
        u = lambda y: math.cos(y[0]) + y[1]
        x = np.array([0.5, 0.2])
        assert dpp_step(u, x, lambda y: 99.0, params, big_ball) == \
            apply_A(u, x, params, big_ball)

    def test_constant_fixed_point(self, params, big_ball):
        c = 1.234
        for x in ([0.0, 0.0], [1.99, 0.0], [1.4, 1.4]):
            val = dpp_step(lambda y: c, x, lambda y: c, params, big_ball)
            assert val == pytest.approx(c, abs=1e-13)

    def test_boundary_absorption_weight(self, params, big_ball):
        x = np.array([2.0, 0.0])
        w = absorption_weight(x, params, big_ball)
        assert w == pytest.approx(params.gamma * 4 / (3 * math.pi) * params.eps,
                                  rel=1e-10)

    def test_convex_combination_bounds(self, params, big_ball):
        u = lambda y: math.sin(3 * y[0]) * math.cos(2 * y[1])
        G = lambda y: 0.5
        for x in ([1.99, 0.0], [0.3, 0.3]):
            val = dpp_step(u, x, G, params, big_ball)
            assert -1.0 - 1e-12 <= val <= 1.0 + 1e-12

    def test_absorption_overflow(self, big_ball):
        huge = derive_params(2, 1.5, 0.02, 1e6)
        with pytest.raises(AbsorptionOverflow):
            dpp_step(lambda y: 0.0, [2.0, 0.0], lambda y: 0.0, huge, big_ball)


class TestExtremal:
    def test_affine_vanishes(self, params, big_ball):
        aff = lambda y: 1.0 - 0.4 * y[0] + 0.9 * y[1]
        x = np.array([0.2, 0.0])
        assert extremal_plus(aff, x, params, dom=big_ball) == \
            pytest.approx(0.0, abs=1e-9)
        assert extremal_minus(aff, x, params, dom=big_ball) == \
            pytest.approx(0.0, abs=1e-9)

    def test_squared_norm_positive(self, params, big_ball):
        sq = lambda y: float(np.dot(y, y))
        x = np.array([0.5, 0.1])
        lp = extremal_plus(sq, x, params, dom=big_ball)
        lm = extremal_minus(sq, x, params, dom=big_ball)
        assert lp >= lm > 0.0

    def test_ordering(self, params, big_ball):
        u = lambda y: math.sin(4 * y[0]) + y[1] ** 2
        x = np.array([0.3, -0.2])
        assert extremal_minus(u, x, params, dom=big_ball) <= \
            extremal_plus(u, x, params, dom=big_ball)

    def test_probe_guard(self, params):
        small = Ball(np.zeros(2), 0.03)
        with pytest.raises(ProbeOutsideDomain):
            extremal_plus(lambda y: 0.0, [0.0, 0.0], params, dom=small)
