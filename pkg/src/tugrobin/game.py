"""Monte Carlo simulation of the game process: coin tosses, tug-of-war with
ellipsoidal noise, uniform-in-ball moves clipped by the domain, and boundary
absorption paying the Robin datum.

Per step, in order: one uniform coin xi picks the branch with weights
(alpha/2, 1 - alpha, alpha/2, gamma * s_eps) after the absorption split;
player branches displace by Q eps d' nu plus ellipsoid noise along the
chosen direction nu; the random-walk branch redraws uniform ball points
until one lands in the domain.  The running sum S_k accumulates s_eps of
the pre-step position.

Trajectories are reproducible: stream i of a run is seeded by
(master_seed, i).  A compiled batch path (n = 2, ball/annulus domains,
greedy or pull strategy pairs) serves the large-sample experiments; it
uses its own per-trajectory seeding, equally deterministic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
from numba import njit

from .errors import DegenerateDirection, DomainError
from .field import ValueField
from .geometry import Domain, d_prime_eps, s_eps, s_eps_table
from .operators import direction_set, dpp_step, tug_means, _rot_dil_stack
from .params import GameParams
from .sampling import ball_quadrature, rotation_to, sample_ball, sample_ball_domain


class Branch(enum.Enum):
    PLAYER_I = "PlayerI"
    PLAYER_II = "PlayerII"
    RANDOM_WALK = "RandomWalk"
    ABSORBED = "Absorbed"


@dataclass
class GameState:
    position: np.ndarray
    k: int = 0
    s_acc: float = 0.0          # sum of s_eps over past positions (length units)
    absorbed: bool = False
    branch: Branch | None = None  # branch that produced this state

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)


@dataclass
class Strategy:
    """Rule mapping the current state to a unit direction."""

    rule: Callable[[GameState], np.ndarray]
    kind: str = "custom"
    meta: dict = dc_field(default_factory=dict)

    def __call__(self, state: GameState) -> np.ndarray:
        nu = np.asarray(self.rule(state), dtype=float)
        norm = float(np.linalg.norm(nu))
        if abs(norm - 1.0) > 1e-12:
            nu = nu / norm
        return nu


@dataclass
class Trajectory:
    states: list[GameState]
    payoff: float | None = None
    truncated: bool = False

    @property
    def branches(self) -> list[Branch]:
        return [s.branch for s in self.states[1:]]


def step(state: GameState, sI: Strategy, sII: Strategy, params: GameParams,
         dom: Domain, rng: np.random.Generator) -> GameState:
    """One transition of the game chain (draws: xi, then branch-specific)."""
    if state.absorbed:
        raise DomainError("cannot step an absorbed state")
    x = state.position
    s_val = s_eps(x, params.eps, dom)
    w_abs = params.gamma * s_val
    live = 1.0 - w_abs
    xi = rng.random()
    if xi > live:
        return GameState(position=x.copy(), k=state.k + 1,
                         s_acc=state.s_acc + s_val, absorbed=True,
                         branch=Branch.ABSORBED)
    if xi <= 0.5 * params.alpha * live:
        branch, strategy = Branch.PLAYER_I, sI
    elif xi >= (1.0 - 0.5 * params.alpha) * live:
        branch, strategy = Branch.PLAYER_II, sII
    else:
        branch, strategy = Branch.RANDOM_WALK, None
    if branch is Branch.RANDOM_WALK:
        new_pos = sample_ball_domain(x, params.eps, dom, rng)
    else:
        nu = strategy(state)
        dp = d_prime_eps(x, params.eps, dom)
        w1 = sample_ball(rng, params.n)
        w1[0] *= params.a
        noise = rotation_to(nu).apply(w1)
        new_pos = x + params.Q * params.eps * dp * nu \
            + params.Q * params.A * params.eps * dp * noise
    return GameState(position=new_pos, k=state.k + 1,
                     s_acc=state.s_acc + s_val, absorbed=False, branch=branch)


def run_trajectory(x0, sI: Strategy, sII: Strategy, G, params: GameParams,
                   dom: Domain, rng: np.random.Generator,
                   max_steps: int) -> Trajectory:
    state = GameState(position=np.asarray(x0, dtype=float))
    states = [state]
    for _ in range(max_steps):
        state = step(state, sI, sII, params, dom, rng)
        states.append(state)
        if state.absorbed:
            return Trajectory(states=states, payoff=float(G(state.position)))
    return Trajectory(states=states, payoff=None, truncated=True)


# -- strategies ----------------------------------------------------------------


def greedy_strategy(field: ValueField, maximize: bool) -> Strategy:
    """Direction with the extremal ellipsoid mean of the field (tie: lowest index).

    Uses the parameter bundle and direction set the field was solved
    with, so a greedy pair replays exactly the sup/inf the step operator
    took.
    """
    if field.params is None or field.domain is None:
        raise DomainError("greedy strategy needs a solver-produced field")
    params, dom = field.params, field.domain
    dirs = field.meta.get("dirs", 64)
    degree = field.meta.get("degree", 4)
    dirset = direction_set(params.n, dirs)

    def rule(state: GameState) -> np.ndarray:
        means = tug_means(field, state.position, params, dom, dirs, degree)
        k = int(np.argmax(means) if maximize else np.argmin(means))
        return dirset[k]

    return Strategy(rule=rule, kind="greedy",
                    meta={"field": field, "maximize": maximize})


def pull_strategy(target, toward: bool = True) -> Strategy:
    """Unit direction +/- (target - X)/|target - X| for a fixed target point."""
    target = np.asarray(target, dtype=float)

    def rule(state: GameState) -> np.ndarray:
        v = target - state.position
        norm = float(np.linalg.norm(v))
        if norm < 1e-14:
            raise DegenerateDirection("pull target equals the current position")
        return (v / norm) if toward else (-v / norm)

    return Strategy(rule=rule, kind="pull",
                    meta={"target": target, "toward": toward})


def pull_interior_ball_strategy(dom: Domain, toward: bool = True,
                                rho: float | None = None) -> Strategy:
    """Pull toward (or away from) the interior-ball center of the current
    position, recomputed each step."""
    rho = dom.interior_ball_radius if rho is None else rho

    def rule(state: GameState) -> np.ndarray:
        p = dom.project_to_boundary(state.position)
        target = p - rho * dom.outward_normal(p)
        v = target - state.position
        norm = float(np.linalg.norm(v))
        if norm < 1e-14:
            raise DegenerateDirection("position coincides with the ball center")
        return (v / norm) if toward else (-v / norm)

    return Strategy(rule=rule, kind="pull_interior_ball",
                    meta={"toward": toward, "rho": rho})


# -- value estimation ----------------------------------------------------------


def simulate_value(x0, sI: Strategy, sII: Strategy, G, params: GameParams,
                   dom: Domain, n_traj: int, max_steps: int, master_seed: int,
                   use_fast: str | bool = "auto"):
    """Mean payoff over independent trajectories, with its standard error.

    Returns (mean, se, truncated); trajectories exceeding max_steps are
    excluded from the mean and counted.
    """
    fast_ok = (params.n == 2 and dom.kind in ("ball", "annulus")
               and sI.kind == "greedy" and sII.kind == "greedy"
               and sI.meta.get("maximize") and not sII.meta.get("maximize")
               and sI.meta["field"] is sII.meta["field"])
    if use_fast is True and not fast_ok:
        raise DomainError("fast path needs an n=2 greedy pair on one field")
    if fast_ok and use_fast in (True, "auto") and n_traj >= 64:
        pos, absorbed = _simulate_greedy_batch(
            sI.meta["field"], params, dom, np.asarray(x0, float),
            n_traj, max_steps, master_seed)
        payoffs = np.array([float(G(p)) for p in pos[absorbed]])
        truncated = int(n_traj - absorbed.sum())
    else:
        payoffs, truncated = [], 0
        for i in range(n_traj):
            rng = np.random.default_rng(np.random.SeedSequence((master_seed, i)))
            tr = run_trajectory(x0, sI, sII, G, params, dom, rng, max_steps)
            if tr.truncated:
                truncated += 1
            else:
                payoffs.append(tr.payoff)
        payoffs = np.array(payoffs)
    if len(payoffs) == 0:
        return math.nan, math.nan, truncated
    mean, se = _mean_se(payoffs)
    return mean, se, truncated


def _mean_se(vals: np.ndarray):
    """Centered mean and standard error (both exact for constant samples)."""
    base = float(vals[0])
    d = vals - base
    mean = base + float(d.mean())
    se = float(d.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return mean, se


def stopping_stats(x0, sI: Strategy, sII: Strategy, params: GameParams,
                   dom: Domain, rho: float, h: float, n_traj: int,
                   master_seed: int, max_steps: int = 200_000):
    """MC estimate of E[eps^2 taubar + S_taubar] under the given strategies.

    taubar is the first k with |Z_rho(X_k) - X_k| < rho - h, equivalently
    dist(X_k, boundary) > h; trajectories stop there, at absorption, or
    at max_steps (whichever first).
    """
    fast_ok = (params.n == 2 and dom.kind in ("ball", "annulus")
               and sI.kind in ("pull", "pull_interior_ball")
               and sII.kind in ("pull", "pull_interior_ball"))
    if fast_ok:
        vals = _stopping_batch(params, dom, np.asarray(x0, float), rho, h,
                               n_traj, max_steps, master_seed,
                               si_toward=bool(sI.meta.get("toward", False)),
                               sii_toward=bool(sII.meta.get("toward", True)))
    else:
        vals = np.empty(n_traj)
        for i in range(n_traj):
            rng = np.random.default_rng(np.random.SeedSequence((master_seed, i)))
            state = GameState(position=np.asarray(x0, dtype=float))
            while True:
                if dom.dist_to_boundary(state.position) > h \
                        or state.absorbed or state.k >= max_steps:
                    break
                state = step(state, sI, sII, params, dom, rng)
            vals[i] = params.eps ** 2 * state.k + state.s_acc
    return _mean_se(vals)


def martingale_residual(field: ValueField, G, params: GameParams, dom: Domain,
                        x, dirs: int | None = None,
                        degree: int | None = None) -> float:
    """One-step conditional-expectation identity at x.

    At a DPP fixed point the compensated payoff process is a martingale;
    its one-step defect reduces to dpp_step(field, x) - field(x), the
    same quantity the solver's residual measures at x.
    """
    dirs = dirs if dirs is not None else field.meta.get("dirs", 64)
    degree = degree if degree is not None else field.meta.get("degree", 4)
    return dpp_step(field, x, G, params, dom, dirs, degree) - field.evaluate(x)


# -- compiled batch paths --------------------------------------------------------


@njit(cache=True)
def _bilin(values, lo0, lo1, inv_h, n0, n1, x0, x1):
    g0 = (x0 - lo0) * inv_h
    g1 = (x1 - lo1) * inv_h
    i0 = int(math.floor(g0))
    i1 = int(math.floor(g1))
    if i0 > n0 - 2:
        i0 = n0 - 2
    if i0 < 0:
        i0 = 0
    if i1 > n1 - 2:
        i1 = n1 - 2
    if i1 < 0:
        i1 = 0
    f0 = min(max(g0 - i0, 0.0), 1.0)
    f1 = min(max(g1 - i1, 0.0), 1.0)
    v00 = values[i0, i1]
    v10 = values[i0 + 1, i1]
    v01 = values[i0, i1 + 1]
    v11 = values[i0 + 1, i1 + 1]
    return (v00 * (1 - f0) * (1 - f1) + v10 * f0 * (1 - f1)
            + v01 * (1 - f0) * f1 + v11 * f0 * f1)


@njit(cache=True)
def _signed_dist_2d(kind, cx, cy, ra, rb, x0, x1):
    # kind 0: ball(radius ra); kind 1: annulus(ra, rb)
    dx = x0 - cx
    dy = x1 - cy
    r = math.sqrt(dx * dx + dy * dy)
    if kind == 0:
        return ra - r
    return min(r - ra, rb - r)


@njit(cache=True)
def _seps_lookup(table, d):
    m = table.size - 1
    g = d * m
    i = int(g)
    if i >= m:
        return 0.0
    f = g - i
    return table[i] * (1 - f) + table[i + 1] * f


@njit(cache=True)
def _greedy_batch_kernel(values, lo0, lo1, inv_h, n0, n1,
                         kind, cx, cy, ra, rb,
                         dirset, rd, qn, qw, stab,
                         eps, Q, A, alpha, gamma,
                         x0, x1, n_traj, max_steps, seed0,
                         out_pos, out_abs):
    ndirs = dirset.shape[0]
    nq = qn.shape[0]
    for t in range(n_traj):
        np.random.seed((seed0 + 40503 * t) % 2147483647)
        px = x0
        py = x1
        absorbed = False
        for k in range(max_steps):
            dist = _signed_dist_2d(kind, cx, cy, ra, rb, px, py)
            if dist < 0.0:
                dist = 0.0
            d = dist / eps
            if d > 1.0:
                d = 1.0
            s_val = eps * _seps_lookup(stab, d)
            w_abs = gamma * s_val
            live = 1.0 - w_abs
            xi = np.random.random()
            if xi > live:
                absorbed = True
                break
            dp = 0.5 if d > 0.5 else d
            if xi <= 0.5 * alpha * live or xi >= (1.0 - 0.5 * alpha) * live:
                maximize = xi <= 0.5 * alpha * live
                # greedy direction from the field means
                r_tug = Q * eps * dp
                e_ax = Q * A * eps * dp
                best_k = 0
                best_v = -1e300 if maximize else 1e300
                if r_tug > 0.0:
                    for kk in range(ndirs):
                        sacc = 0.0
                        for j in range(nq):
                            ox = r_tug * dirset[kk, 0] \
                                + e_ax * (rd[kk, 0, 0] * qn[j, 0] + rd[kk, 0, 1] * qn[j, 1])
                            oy = r_tug * dirset[kk, 1] \
                                + e_ax * (rd[kk, 1, 0] * qn[j, 0] + rd[kk, 1, 1] * qn[j, 1])
                            sacc += qw[j] * _bilin(values, lo0, lo1, inv_h, n0, n1,
                                                   px + ox, py + oy)
                        if maximize:
                            if sacc > best_v:
                                best_v = sacc
                                best_k = kk
                        else:
                            if sacc < best_v:
                                best_v = sacc
                                best_k = kk
                nux = dirset[best_k, 0]
                nuy = dirset[best_k, 1]
                # ellipsoid noise along nu
                gx = np.random.standard_normal()
                gy = np.random.standard_normal()
                gn = math.sqrt(gx * gx + gy * gy)
                while gn < 1e-12:
                    gx = np.random.standard_normal()
                    gy = np.random.standard_normal()
                    gn = math.sqrt(gx * gx + gy * gy)
                rad = math.sqrt(np.random.random())
                wx = rad * gx / gn
                wy = rad * gy / gn
                ex = rd[best_k, 0, 0] * wx + rd[best_k, 0, 1] * wy
                ey = rd[best_k, 1, 0] * wx + rd[best_k, 1, 1] * wy
                px = px + Q * eps * dp * nux + Q * A * eps * dp * ex
                py = py + Q * eps * dp * nuy + Q * A * eps * dp * ey
            else:
                # uniform in B_eps ∩ Ω by rejection
                accepted = False
                for _ in range(10000):
                    gx = np.random.standard_normal()
                    gy = np.random.standard_normal()
                    gn = math.sqrt(gx * gx + gy * gy)
                    if gn < 1e-12:
                        continue
                    rad = eps * math.sqrt(np.random.random())
                    cxn = px + rad * gx / gn
                    cyn = py + rad * gy / gn
                    if _signed_dist_2d(kind, cx, cy, ra, rb, cxn, cyn) >= 0.0:
                        px = cxn
                        py = cyn
                        accepted = True
                        break
                if not accepted:
                    break
        out_pos[t, 0] = px
        out_pos[t, 1] = py
        out_abs[t] = 1 if absorbed else 0


def _dom_codes(dom: Domain):
    if dom.kind == "ball":
        return 0, float(dom.center[0]), float(dom.center[1]), float(dom.radius), 0.0
    if dom.kind == "annulus":
        return (1, float(dom.center[0]), float(dom.center[1]),
                float(dom.r_inner), float(dom.r_outer))
    raise DomainError("fast path supports ball and annulus only")


def _simulate_greedy_batch(field: ValueField, params: GameParams, dom: Domain,
                           x0: np.ndarray, n_traj: int, max_steps: int,
                           master_seed: int):
    kind, cx, cy, ra, rb = _dom_codes(dom)
    dirs = field.meta.get("dirs", 64)
    degree = field.meta.get("degree", 4)
    dirset = np.ascontiguousarray(direction_set(2, dirs))
    rd = np.ascontiguousarray(_rot_dil_stack(2, dirs, params.a))
    rule = ball_quadrature(2, degree)
    stab = s_eps_table(2)
    out_pos = np.empty((n_traj, 2))
    out_abs = np.zeros(n_traj, dtype=np.int64)
    seed0 = (int(master_seed) * 2654435761 + 12345) % 2147483647
    _greedy_batch_kernel(field.filled_values(), float(field.lo[0]),
                         float(field.lo[1]), 1.0 / field.spacing,
                         field.shape[0], field.shape[1],
                         kind, cx, cy, ra, rb,
                         dirset, rd, np.ascontiguousarray(rule.nodes),
                         np.ascontiguousarray(rule.weights), stab,
                         params.eps, params.Q, params.A, params.alpha,
                         params.gamma, float(x0[0]), float(x0[1]),
                         n_traj, max_steps, seed0, out_pos, out_abs)
    return out_pos, out_abs.astype(bool)


@njit(cache=True)
def _stopping_kernel(kind, cx, cy, ra, rb, rho, h,
                     a_flat, eps, Q, A, alpha, gamma, stab,
                     x0, x1, n_traj, max_steps, seed0,
                     si_toward, sii_toward, out_vals):
    for t in range(n_traj):
        np.random.seed((seed0 + 40503 * t) % 2147483647)
        px = x0
        py = x1
        s_acc = 0.0
        k = 0
        while k < max_steps:
            dist = _signed_dist_2d(kind, cx, cy, ra, rb, px, py)
            if dist < 0.0:
                dist = 0.0
            if dist > h:
                break
            d = dist / eps
            if d > 1.0:
                d = 1.0
            s_val = eps * _seps_lookup(stab, d)
            w_abs = gamma * s_val
            live = 1.0 - w_abs
            xi = np.random.random()
            if xi > live:
                s_acc += s_val
                k += 1
                break
            dp = 0.5 if d > 0.5 else d
            if xi <= 0.5 * alpha * live or xi >= (1.0 - 0.5 * alpha) * live:
                toward = si_toward if xi <= 0.5 * alpha * live else sii_toward
                # interior-ball center of the current position
                dx = px - cx
                dy = py - cy
                r = math.sqrt(dx * dx + dy * dy)
                if r < 1e-14:
                    tx, ty = 1.0, 0.0
                else:
                    if kind == 0:
                        zr = ra - rho
                    else:
                        mid = 0.5 * (ra + rb)
                        zr = (ra + rho) if r < mid else (rb - rho)
                    zx = cx + zr * dx / r
                    zy = cy + zr * dy / r
                    tx = zx - px
                    ty = zy - py
                    tn = math.sqrt(tx * tx + ty * ty)
                    if tn < 1e-14:
                        tx, ty = 1.0, 0.0
                    else:
                        tx /= tn
                        ty /= tn
                if not toward:
                    tx = -tx
                    ty = -ty
                # rotate e1 onto (tx, ty): columns [t, t_perp]
                gx = np.random.standard_normal()
                gy = np.random.standard_normal()
                gn = math.sqrt(gx * gx + gy * gy)
                while gn < 1e-12:
                    gx = np.random.standard_normal()
                    gy = np.random.standard_normal()
                    gn = math.sqrt(gx * gx + gy * gy)
                rad = math.sqrt(np.random.random())
                wx = a_flat * rad * gx / gn
                wy = rad * gy / gn
                ex = tx * wx - ty * wy
                ey = ty * wx + tx * wy
                px = px + Q * eps * dp * tx + Q * A * eps * dp * ex
                py = py + Q * eps * dp * ty + Q * A * eps * dp * ey
            else:
                accepted = False
                for _ in range(10000):
                    gx = np.random.standard_normal()
                    gy = np.random.standard_normal()
                    gn = math.sqrt(gx * gx + gy * gy)
                    if gn < 1e-12:
                        continue
                    rad = eps * math.sqrt(np.random.random())
                    cxn = px + rad * gx / gn
                    cyn = py + rad * gy / gn
                    if _signed_dist_2d(kind, cx, cy, ra, rb, cxn, cyn) >= 0.0:
                        px = cxn
                        py = cyn
                        accepted = True
                        break
                if not accepted:
                    break
            s_acc += s_val
            k += 1
        out_vals[t] = eps * eps * k + s_acc


def _stopping_batch(params: GameParams, dom: Domain, x0: np.ndarray,
                    rho: float, h: float, n_traj: int, max_steps: int,
                    master_seed: int, si_toward: bool, sii_toward: bool):
    kind, cx, cy, ra, rb = _dom_codes(dom)
    stab = s_eps_table(2)
    out = np.empty(n_traj)
    seed0 = (int(master_seed) * 2654435761 + 54321) % 2147483647
    _stopping_kernel(kind, cx, cy, ra, rb, rho, h,
                     params.a, params.eps, params.Q, params.A, params.alpha,
                     params.gamma, stab, float(x0[0]), float(x0[1]),
                     n_traj, max_steps, seed0, si_toward, sii_toward, out)
    return out
