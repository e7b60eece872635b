import math

import numpy as np
import pytest

from tugrobin import Annulus, Ball, DegenerateDirection, derive_params, \
    dpp_step, s_eps, solve_fixed_point
from tugrobin.analysis import radial_boundary_data
from tugrobin.game import Branch, GameState, Strategy, greedy_strategy, \
    martingale_residual, pull_interior_ball_strategy, pull_strategy, \
    run_trajectory, simulate_value, step, stopping_stats
from tugrobin.operators import direction_set, tug_means


@pytest.fixture(scope="module")
def annulus():
    return Annulus([0.0, 0.0], 0.5, 1.5)


@pytest.fixture(scope="module")
def params():
    return derive_params(2, 1.5, 0.08, 1.0)


def fixed_dir_strategy(v):
    v = np.asarray(v, dtype=float)
    return Strategy(rule=lambda s: v / np.linalg.norm(v), kind="fixed")


class TestStep:
    def test_no_absorption_in_interior(self, annulus, params):
        rng = np.random.default_rng(0)
        sI = fixed_dir_strategy([1.0, 0.0])
        sII = fixed_dir_strategy([-1.0, 0.0])
        state = GameState(position=np.array([1.0, 0.0]))
        for _ in range(300):
            new = step(state, sI, sII, params, annulus, rng)
            assert new.branch is not Branch.ABSORBED
            assert new.s_acc == 0.0  # s_eps = 0 at dist >= eps

    def test_positions_stay_in_closure(self, annulus, params):
        rng = np.random.default_rng(1)
        sI = fixed_dir_strategy([0.0, 1.0])
        sII = pull_interior_ball_strategy(annulus, toward=True)
        state = GameState(position=np.array([1.45, 0.0]))
        count = 0
        while count < 20_000:
            if state.absorbed:
                state = GameState(position=np.array([1.45, 0.0]))
            state = step(state, sI, sII, params, annulus, rng)
            assert annulus.signed_dist(state.position) >= -1e-12
            count += 1

    def test_absorption_only_in_collar(self, annulus, params):
        rng = np.random.default_rng(2)
        sI = fixed_dir_strategy([1.0, 0.0])
        sII = fixed_dir_strategy([-1.0, 0.0])
        hits = 0
        for _ in range(3000):
            state = GameState(position=np.array([1.47, 0.0]))
            new = step(state, sI, sII, params, annulus, rng)
            if new.branch is Branch.ABSORBED:
                hits += 1
                assert annulus.dist_to_boundary(state.position) < params.eps
        assert hits > 0

    def test_tug_displacement_bound(self, annulus, params):
        rng = np.random.default_rng(3)
        sI = fixed_dir_strategy([1.0, 0.0])
        x0 = np.array([1.47, 0.0])  # dist = 0.03 < eps/2
        dp = min(0.5, annulus.dist_to_boundary(x0) / params.eps)
        bound = params.Q * params.eps * dp * (1 + params.A)
        assert bound <= annulus.dist_to_boundary(x0) + 1e-15
        for _ in range(500):
            state = GameState(position=x0.copy())
            new = step(state, sI, sI, params, annulus, rng)
            if new.branch in (Branch.PLAYER_I, Branch.PLAYER_II):
                assert np.linalg.norm(new.position - x0) <= bound + 1e-12

    def test_branch_frequencies(self, annulus, params):
        # multinomial check at a fixed interior state: (alpha/2, 1-alpha, alpha/2)
        rng = np.random.default_rng(4)
        sI = fixed_dir_strategy([1.0, 0.0])
        sII = fixed_dir_strategy([-1.0, 0.0])
        state = GameState(position=np.array([1.0, 0.0]))
        n = 150_000
        counts = {Branch.PLAYER_I: 0, Branch.PLAYER_II: 0, Branch.RANDOM_WALK: 0}
        for _ in range(n):
            new = step(state, sI, sII, params, annulus, rng)
            counts[new.branch] += 1
        for branch, prob in [(Branch.PLAYER_I, params.alpha / 2),
                             (Branch.PLAYER_II, params.alpha / 2),
                             (Branch.RANDOM_WALK, 1 - params.alpha)]:
            se = math.sqrt(prob * (1 - prob) / n)
            assert counts[branch] / n == pytest.approx(prob, abs=4 * se)

    def test_reproducible_trajectories(self, annulus, params):
        sI = fixed_dir_strategy([1.0, 0.0])
        sII = pull_interior_ball_strategy(annulus, toward=True)
        G = lambda x: float(np.linalg.norm(x))
        t1 = run_trajectory([1.4, 0.0], sI, sII, G, params, annulus,
                            np.random.default_rng(np.random.SeedSequence((7, 3))),
                            2000)
        t2 = run_trajectory([1.4, 0.0], sI, sII, G, params, annulus,
                            np.random.default_rng(np.random.SeedSequence((7, 3))),
                            2000)
        assert len(t1.states) == len(t2.states)
        np.testing.assert_array_equal(t1.states[-1].position,
                                      t2.states[-1].position)
        assert t1.payoff == t2.payoff


class TestStrategies:
    def test_pull_examples(self):
        s = pull_strategy([0.0, 0.0], toward=True)
        np.testing.assert_allclose(s(GameState(position=np.array([1.0, 0.0]))),
                                   [-1.0, 0.0])
        s_away = pull_strategy([0.0, 0.0], toward=False)
        np.testing.assert_allclose(
            s_away(GameState(position=np.array([1.0, 0.0]))), [1.0, 0.0])

    def test_pull_degenerate(self):
        s = pull_strategy([1.0, 0.0])
        with pytest.raises(DegenerateDirection):
            s(GameState(position=np.array([1.0, 0.0])))

    def test_pull_mean_drift(self, annulus, params):
        # Player-II branch drifts toward the target on average
        rng = np.random.default_rng(8)
        target = np.array([1.0, 0.0])
        sII = pull_strategy(target, toward=True)
        sI = pull_strategy(target, toward=True)  # same pull either way
        x0 = np.array([1.3, 0.0])
        gains = []
        for _ in range(4000):
            state = GameState(position=x0.copy())
            new = step(state, sI, sII, params, annulus, rng)
            if new.branch in (Branch.PLAYER_I, Branch.PLAYER_II):
                gains.append(np.linalg.norm(x0 - target)
                             - np.linalg.norm(new.position - target))
        assert np.mean(gains) > 0

    def test_greedy_affine(self, annulus):
        # gradient direction wins among the sampled set
        params = derive_params(2, 1.5, 0.08, 1.0)
        from tugrobin.solver import build_lattice
        from tugrobin import ValueField
        lo, shape, mask = build_lattice(annulus, 0.02)
        idx = np.indices(shape).reshape(2, -1).T
        pts = lo + 0.02 * idx
        b = np.array([2.0, 1.0])
        vals = (pts @ b).reshape(shape)
        f = ValueField(lo=lo, spacing=0.02, values=vals, mask=mask,
                       domain=annulus, params=params,
                       meta={"dirs": 16, "degree": 2})
        smax = greedy_strategy(f, maximize=True)
        smin = greedy_strategy(f, maximize=False)
        state = GameState(position=np.array([1.0, 0.0]))
        dirs = direction_set(2, 16)
        want = dirs[np.argmax(dirs @ b)]
        got = smax(state)
        np.testing.assert_allclose(got, want, atol=1e-12)
        np.testing.assert_allclose(smin(state), -want, atol=1e-12)


class TestSimulateValue:
    def test_constant_payoff(self, annulus, params):
        sI = fixed_dir_strategy([1.0, 0.0])
        sII = fixed_dir_strategy([-1.0, 0.0])
        mean, se, trunc = simulate_value([1.2, 0.0], sI, sII, lambda x: 4.2,
                                         params, annulus, n_traj=50,
                                         max_steps=50_000, master_seed=1)
        assert mean == 4.2 and se == 0.0 and trunc == 0

    def test_fast_path_matches_python_path(self, annulus):
        # statistical agreement between the compiled and reference chains
        params = derive_params(2, 1.5, 0.2, 1.0)
        G = radial_boundary_data(0.5, 1.5, 0.0, 1.0)
        field, _ = solve_fixed_point(G, params, annulus, 0.05, tol=1e-4,
                                     dirs=8, degree=2)
        sI = greedy_strategy(field, maximize=True)
        sII = greedy_strategy(field, maximize=False)
        x0 = [1.0, 0.0]
        m_fast, se_fast, _ = simulate_value(x0, sI, sII, G, params, annulus,
                                            400, 100_000, 11, use_fast=True)
        m_py, se_py, _ = simulate_value(x0, sI, sII, G, params, annulus,
                                        120, 100_000, 12, use_fast=False)
        tol = 4 * math.hypot(se_fast, se_py)
        assert abs(m_fast - m_py) <= tol


class TestStoppingStats:
    def test_immediate_stop(self, annulus, params):
        # dist(x0) > h means taubar = 0 on every path
        sII = pull_interior_ball_strategy(annulus, toward=True)
        sI = pull_interior_ball_strategy(annulus, toward=False)
        est, se = stopping_stats([1.0, 0.0], sI, sII, params, annulus,
                                 rho=0.5, h=0.04, n_traj=100, master_seed=5)
        assert est == 0.0 and se == 0.0

    def test_finite_estimate(self, annulus):
        params = derive_params(2, 1.5, 0.01, 1.0)
        sII = pull_interior_ball_strategy(annulus, toward=True)
        sI = pull_interior_ball_strategy(annulus, toward=False)
        x0 = [1.5 - 0.005, 0.0]
        est, se = stopping_stats(x0, sI, sII, params, annulus, rho=0.5,
                                 h=0.04, n_traj=400, master_seed=6)
        assert np.isfinite(est) and est > 0
        assert se < est


class TestMartingaleResidual:
    def test_identical_code_path(self, annulus):
        params = derive_params(2, 1.5, 0.2, 1.0)
        G = radial_boundary_data(0.5, 1.5, 0.0, 1.0)
        field, report = solve_fixed_point(G, params, annulus, 0.05, tol=5e-6,
                                          dirs=16, degree=2)
        rng = np.random.default_rng(13)
        nodes = field.masked_node_coords()
        for i in rng.choice(len(nodes), 20, replace=False):
            x = nodes[i]
            mr = martingale_residual(field, G, params, annulus, x)
            direct = dpp_step(field, x, G, params, annulus, 16, 2) \
                - field.evaluate(x)
            assert mr == direct  # bit-for-bit: same call
            assert abs(mr) <= report.tol

    def test_constant_field(self, annulus, params):
        from tugrobin.solver import build_lattice
        from tugrobin import ValueField
        lo, shape, mask = build_lattice(annulus, 0.02)
        f = ValueField(lo=lo, spacing=0.02, values=np.full(shape, 2.0),
                       mask=mask, domain=annulus, params=params,
                       meta={"dirs": 8, "degree": 2})
        val = martingale_residual(f, lambda x: 2.0, params, annulus, [1.3, 0.2])
        assert val == pytest.approx(0.0, abs=1e-13)
