import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tugrobin import (Ball, Dilation, DomainError, RejectionOverflow, Strip,
                      UnsupportedDegree, ball_quadrature, ellipsoid_point,
                      rotation_to, sample_ball, sample_ball_domain, s_eps)
from tugrobin.sampling import ball_monomial_average, clipped_ball_rule, \
    ellipsoid_map


def unit_vector(n, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


class TestRotation:
    def test_identity(self):
        np.testing.assert_allclose(rotation_to([1.0, 0.0]).matrix, np.eye(2),
                                   atol=1e-15)

    def test_quarter_turn(self):
        # forced by orthogonality, det +1, and the continuity convention
        np.testing.assert_allclose(rotation_to([0.0, 1.0]).matrix,
                                   [[0.0, -1.0], [1.0, 0.0]], atol=1e-15)

    @given(st.integers(2, 4), st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_orthogonal_det_plus_one(self, n, seed):
        nu = unit_vector(n, seed)
        m = rotation_to(nu).matrix
        np.testing.assert_allclose(m @ m.T, np.eye(n), atol=1e-10)
        assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_allclose(m[:, 0], nu, atol=1e-12)

    def test_antipodal_fallback(self):
        m = rotation_to([-1.0, 0.0, 0.0]).matrix
        np.testing.assert_allclose(m @ m.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(m) == pytest.approx(1.0)
        np.testing.assert_allclose(m[:, 0], [-1.0, 0.0, 0.0], atol=1e-12)

    def test_local_lipschitz_constant(self):
        # dense sampling over pairs away from the antipode; C = 4 suffices
        rng = np.random.default_rng(3)
        for n in (2, 3):
            for _ in range(400):
                v1 = rng.standard_normal(n)
                v1 /= np.linalg.norm(v1)
                v2 = v1 + 0.3 * rng.standard_normal(n)
                v2 /= np.linalg.norm(v2)
                if min(v1[0], v2[0]) < -0.5:
                    continue
                diff = np.linalg.norm(rotation_to(v1).matrix
                                      - rotation_to(v2).matrix, ord=2)
                assert diff <= 4.0 * np.linalg.norm(v1 - v2) + 1e-12

    def test_rejects_non_unit(self):
        with pytest.raises(DomainError):
            rotation_to([1.0, 1.0])


class TestEllipsoid:
    def test_center(self):
        np.testing.assert_allclose(
            ellipsoid_point([0.3, -0.2], [0.0, 1.0], 0.5, 0.4, [0.0, 0.0]),
            [0.3, -0.2])

    def test_semi_minor_axis(self):
        # w = e1 maps to the flattened axis along nu
        p = ellipsoid_point([0.0, 0.0], [0.0, 1.0], 1.0, 0.5, [1.0, 0.0])
        np.testing.assert_allclose(p, [0.0, 0.5], atol=1e-14)

    def test_dilation(self):
        d = Dilation(0.25)
        np.testing.assert_allclose(d.apply([1.0, 0.0, 0.0]), [0.25, 0.0, 0.0])
        np.testing.assert_allclose(d.apply([0.0, 1.0, 0.0]), [0.0, 1.0, 0.0])
        with pytest.raises(DomainError):
            Dilation(1.5)

    def test_membership(self):
        # every image satisfies the defining inequality of E_eps^a(z; nu)
        rng = np.random.default_rng(7)
        z = np.array([0.4, -0.1, 0.2])
        nu = unit_vector(3, 5)
        a, eps_axis = 0.35, 0.8
        for _ in range(10_000 // 25):
            W = np.array([sample_ball(rng, 3) for _ in range(25)])
            pts = ellipsoid_map(z, nu, eps_axis, a, W)
            y = pts - z
            lhs = (y @ nu) ** 2 / a ** 2 + \
                np.linalg.norm(y - np.outer(y @ nu, nu), axis=1) ** 2
            assert np.all(lhs <= eps_axis ** 2 + 1e-12)

    def test_affine_in_w(self):
        z = np.array([0.1, 0.2])
        nu = unit_vector(2, 11)
        w1, w2 = np.array([0.3, -0.4]), np.array([-0.5, 0.1])
        mid = ellipsoid_point(z, nu, 0.7, 0.3, (w1 + w2) / 2)
        p1 = ellipsoid_point(z, nu, 0.7, 0.3, w1)
        p2 = ellipsoid_point(z, nu, 0.7, 0.3, w2)
        np.testing.assert_allclose(mid, (p1 + p2) / 2, atol=1e-14)


class TestBallSampling:
    def test_interior_mean(self):
        rng = np.random.default_rng(0)
        dom = Ball([0.0, 0.0], 2.0)
        x = np.array([0.1, -0.3])
        n, eps = 4000, 0.5
        pts = np.array([sample_ball_domain(x, eps, dom, rng) for _ in range(n)])
        se = eps / math.sqrt(2 * n)  # per-component sd is eps/2 for n=2
        np.testing.assert_allclose(pts.mean(axis=0), x, atol=3.5 * se)

    def test_strip_first_moment_matches_s_eps(self):
        # mean of (y - x) over the clipped ball is -s_eps(x) e_n
        rng = np.random.default_rng(1)
        eps, d = 0.2, 0.3
        dom = Strip(2, height=eps * d)
        x = np.zeros(2)
        n = 20_000
        pts = np.array([sample_ball_domain(x, eps, dom, rng) for _ in range(n)])
        drift = pts.mean(axis=0)
        s = s_eps(x, eps, dom)
        sd = pts.std(axis=0, ddof=1) / math.sqrt(n)
        assert abs(drift[0]) <= 3 * sd[0]            # tangential mean -> 0
        assert abs(drift[1] + s) <= 3 * sd[1]        # normal mean -> -s_eps

    def test_strip_second_moment(self):
        rng = np.random.default_rng(2)
        eps, d = 0.2, 0.25
        dom = Strip(2, height=eps * d)
        x = np.zeros(2)
        n = 20_000
        pts = np.array([sample_ball_domain(x, eps, dom, rng) for _ in range(n)])
        m2 = pts.T @ pts / n
        target = eps ** 2 / 4 * np.eye(2)
        budget = eps * s_eps(x, eps, dom)
        assert np.abs(m2 - target).max() <= 3 * budget

    def test_rejection_overflow(self):
        rng = np.random.default_rng(3)
        dom = Strip(2, height=0.0)
        with pytest.raises(RejectionOverflow):
            sample_ball_domain([0.0, 1.0], 0.1, dom, rng)  # ball fully outside


class TestBallQuadrature:
    @pytest.mark.parametrize("n,degree", [(1, 2), (2, 2), (2, 4), (2, 6),
                                          (3, 2), (3, 4), (3, 6), (4, 4), (5, 6)])
    def test_moment_exactness(self, n, degree):
        rule = ball_quadrature(n, degree)
        assert rule.weights.sum() == pytest.approx(1.0, abs=1e-13)
        assert np.all(rule.weights > 0)
        assert np.all(np.linalg.norm(rule.nodes, axis=1) <= 1 + 1e-12)
        # spot-check the documented moments
        assert rule.average(lambda p: 1.0) == pytest.approx(1.0, abs=1e-13)
        assert rule.average(lambda p: p[0]) == pytest.approx(0.0, abs=1e-13)
        assert rule.average(lambda p: p[0] ** 2) == \
            pytest.approx(1.0 / (n + 2), abs=1e-13)

    def test_unsupported(self):
        with pytest.raises(UnsupportedDegree):
            ball_quadrature(2, 3)
        with pytest.raises(UnsupportedDegree):
            ball_quadrature(8, 6)

    def test_monomial_oracle(self):
        # closed-form averages: x^4 -> 3/((n+2)(n+4)), x^2 y^2 -> 1/((n+2)(n+4))
        assert ball_monomial_average(2, (4, 0)) == pytest.approx(3 / 24)
        assert ball_monomial_average(2, (2, 2)) == pytest.approx(1 / 24)
        assert ball_monomial_average(3, (2, 0, 0)) == pytest.approx(1 / 5)
        rule = ball_quadrature(2, 6)
        for powers in [(6, 0), (4, 2), (2, 4), (0, 6)]:
            val = float(rule.weights @ np.prod(rule.nodes ** np.array(powers),
                                               axis=1))
            assert val == pytest.approx(ball_monomial_average(2, powers),
                                        abs=1e-13)

    def test_quadrature_vs_monte_carlo(self):
        # five smooth integrands over a fixed ellipsoid; 4 SE agreement
        rng = np.random.default_rng(42)
        z = np.array([0.2, 0.1])
        nu = np.array([math.cos(0.7), math.sin(0.7)])
        a, eps_axis = 0.4, 0.3
        rule = ball_quadrature(2, 6)
        n_mc = 1_000_000
        g = rng.standard_normal((n_mc, 2))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        W = g * np.sqrt(rng.random((n_mc, 1)))
        mc_pts = ellipsoid_map(z, nu, eps_axis, a, W)
        quad_pts = ellipsoid_map(z, nu, eps_axis, a, rule.nodes)
        fs = [lambda p: np.sin(3 * p[..., 0]) + p[..., 1],
              lambda p: np.exp(p[..., 0] - p[..., 1]),
              lambda p: p[..., 0] ** 2 * p[..., 1],
              lambda p: np.cos(p[..., 0] * p[..., 1]),
              lambda p: 1.0 / (1.0 + p[..., 0] ** 2 + p[..., 1] ** 2)]
        for f in fs:
            mc_vals = f(mc_pts)
            mc = mc_vals.mean()
            se = mc_vals.std(ddof=1) / math.sqrt(n_mc)
            qd = float(rule.weights @ f(quad_pts))
            assert abs(qd - mc) <= 4 * se + 1e-9


class TestClippedBallRule:
    def test_weights_and_support(self):
        nodes, w = clipped_ball_rule(2, 0.4, m_height=16)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(w > 0)
        assert np.all(nodes[:, -1] <= 0.4 + 1e-12)
        assert np.all(np.linalg.norm(nodes, axis=1) <= 1 + 1e-12)

    def test_first_moment_matches_s_eps_formula(self):
        dom = Strip(2, height=0.0)
        for d in (0.0, 0.3, 0.7):
            dom = Strip(2, height=d)
            nodes, w = clipped_ball_rule(2, d, m_height=24)
            drift = float(w @ nodes[:, -1])
            s = s_eps([0.0, 0.0], 1.0, Strip(2, height=d))
            assert drift == pytest.approx(-s, rel=1e-8)
