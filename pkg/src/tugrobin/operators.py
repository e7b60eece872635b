"""The step operators: ellipsoid means, the mixed operator, absorption step,
and the extremal (Pucci-type) second-difference operators.

All averages are deterministic ball-quadrature averages mapped onto the
relevant ellipsoid or ball, so repeated evaluation is bit-reproducible.
Direction sets are antipode-closed, which makes the sup/inf pair cancel
exactly on affine fields.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import AbsorptionOverflow, DomainError, EvalOutsideDomain, \
    ProbeOutsideDomain
from .geometry import Domain, d_prime_eps, s_eps
from .params import GameParams
from .sampling import ball_quadrature, clipped_ball_rule, rotation_to

ScalarField = Callable[[np.ndarray], float]

_DIRSEED = 214013


def eval_field(u, pts: np.ndarray, check_domain: bool = True) -> np.ndarray:
    """Evaluate a scalar field at an (m, n) array of points."""
    if hasattr(u, "evaluate_many"):
        try:
            return np.asarray(u.evaluate_many(pts, check_domain=check_domain),
                              dtype=float)
        except TypeError:
            return np.asarray(u.evaluate_many(pts), dtype=float)
    return np.array([float(u(p)) for p in pts])


@lru_cache(maxsize=None)
def direction_set(n: int, count: int) -> np.ndarray:
    """Antipode-closed set of `count` unit vectors (evenly spaced for n = 2).

    Closure under v -> -v makes the sup/inf branches cancel exactly on
    affine fields, so the count must be even.
    """
    if count < 2 or count % 2:
        raise DomainError(f"direction count must be even and >= 2, got {count}")
    if n == 2:
        ang = 2.0 * math.pi * np.arange(count) / count
        out = np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        half = count // 2
        if n == 3:
            # Fibonacci hemisphere, then antipodes
            i = np.arange(half)
            z = (i + 0.5) / half
            phi = i * math.pi * (3.0 - math.sqrt(5.0))
            r = np.sqrt(1.0 - z * z)
            base = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
        else:
            rng = np.random.default_rng(_DIRSEED + 1009 * n + count)
            base = rng.standard_normal((half, n))
            base /= np.linalg.norm(base, axis=1, keepdims=True)
        out = np.concatenate([base, -base])
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _rot_dil_stack(n: int, count: int, a: float) -> np.ndarray:
    """Stacked matrices P_nu @ D(a) for every direction in the set."""
    dirs = direction_set(n, count)
    dil = np.eye(n)
    dil[0, 0] = a
    out = np.empty((count, n, n))
    for k, nu in enumerate(dirs):
        out[k] = rotation_to(nu).matrix @ dil
    out.setflags(write=False)
    return out


def h_mean(u: ScalarField, z, x, params: GameParams, degree: int = 4) -> float:
    """Average of u over the ellipsoid E_{A eps}^a(z; (z-x)/|z-x|).

    Computed as a ball-quadrature average pushed through the affine map
    w -> z + A eps P_nu D w, whose image measure is exactly the uniform
    measure on the ellipsoid.
    """
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    v = z - x
    dist = float(np.linalg.norm(v))
    if dist <= 0.0:
        raise DomainError("h_mean needs z != x to orient the ellipsoid")
    nu = v / dist
    rule = ball_quadrature(params.n, degree)
    W = np.array(rule.nodes, copy=True)
    W[:, 0] *= params.a
    pts = z + (params.A * params.eps) * (W @ rotation_to(nu).matrix.T)
    return float(rule.weights @ eval_field(u, pts))


@lru_cache(maxsize=128)
def _lattice_ball_nodes(n: int, dirs: int, degree: int, a: float, alpha: float,
                        r_g: float, e_g: float, eps_g: float):
    """Ball-average node offsets (grid units) adapted to bilinear gathering.

    Realizing a quadrature rule through multilinear interpolation on a
    lattice inflates its second moment by sum_q w_q frac(1-frac) h^2 per
    axis (interpolation is exact on linears, so lower moments survive).
    The tug ellipsoids are sub-grid and cannot be repaired by moving
    nodes, but their excess is isotropic to leading order, so the
    resolvable ball rule absorbs it: its nodes are contracted until the
    lattice-realized operator's total second moment matches the
    continuum one.  Without this, the solved field carries an
    O(h^2/eps^2) Laplacian bias that does not vanish under eps
    refinement at fixed grid rule.

    Returns (ball_nodes_grid_units, weights, feasible_flag).
    """
    rule = ball_quadrature(n, degree)
    qw = rule.weights
    dirset = direction_set(n, dirs)
    rd = _rot_dil_stack(n, dirs, a)
    tug = r_g * dirset[:, None, :] + e_g * np.einsum("kij,qj->kqi", rd, rule.nodes)
    fr = tug - np.floor(tug)
    x_tug = np.einsum("q,kqd->d", qw, fr * (1.0 - fr)) / dirs

    V = eps_g * np.array(rule.nodes, copy=True)
    T_cont = np.einsum("q,qi,qj->ij", qw, V, V)
    T_target = T_cont - (alpha / (1.0 - alpha)) * np.diag(x_tug)
    eig = np.linalg.eigvalsh(T_target)
    feasible = bool(eig.min() > 1e-9)
    if not feasible:
        return V, qw.copy(), False
    for _ in range(40):
        frb = V - np.floor(V)
        X = np.diag(np.einsum("q,qd->d", qw, frb * (1.0 - frb)))
        C = np.einsum("q,qi,qj->ij", qw, V, V) + X
        D = C - T_target
        if np.abs(D).max() < 1e-10 * max(eps_g ** 2, 1.0):
            break
        S = np.einsum("q,qi,qj->ij", qw, V, V)
        S_next = S - D
        if np.linalg.eigvalsh(S_next).min() <= 0:
            break
        A = _spd_sqrt(S_next) @ np.linalg.inv(_spd_sqrt(S))
        V = V @ A.T
    return V, qw.copy(), True


def _spd_sqrt(M: np.ndarray) -> np.ndarray:
    w, Q = np.linalg.eigh(M)
    return Q @ np.diag(np.sqrt(np.maximum(w, 0.0))) @ Q.T


def lattice_ball_offsets(params: GameParams, spacing: float, dirs: int,
                         degree: int):
    """Adapted ball-average offsets (length units) for a grid field."""
    r_g = 0.5 * params.Q * params.eps / spacing
    e_g = 0.5 * params.Q * params.A * params.eps / spacing
    nodes, qw, feasible = _lattice_ball_nodes(
        params.n, dirs, degree, params.a, params.alpha,
        round(r_g, 12), round(e_g, 12), round(params.eps / spacing, 12))
    return spacing * nodes, qw, feasible


def tug_means(u: ScalarField, x, params: GameParams, dom: Domain,
              dirs: int = 64, degree: int = 4) -> np.ndarray:
    """Per-direction ellipsoid means of u at tug offset Q eps d'_x.

    Entry k is the average of u over E_{QA eps d'}^a(x + Q eps d' nu_k; nu_k).
    Degenerates to u(x) in every direction when x lies on the boundary.
    """
    x = np.asarray(x, dtype=float)
    dp = d_prime_eps(x, params.eps, dom)
    r_tug = params.Q * params.eps * dp
    dirset = direction_set(params.n, dirs)
    if r_tug == 0.0:
        return np.full(len(dirset), float(eval_field(u, x[None, :])[0]))
    e_ax = params.Q * params.A * params.eps * dp
    rule = ball_quadrature(params.n, degree)
    rd = _rot_dil_stack(params.n, dirs, params.a)
    offs = e_ax * np.einsum("kij,qj->kqi", rd, rule.nodes)
    pts = x[None, None, :] + r_tug * dirset[:, None, :] + offs
    vals = eval_field(u, pts.reshape(-1, params.n)).reshape(dirs, -1)
    return vals @ rule.weights


def _mean_at_direction(u: ScalarField, x, params: GameParams, nu,
                       r_tug: float, e_ax: float, degree: int) -> float:
    """Ellipsoid mean of u at offset r_tug * nu with axis e_ax along nu."""
    rule = ball_quadrature(params.n, degree)
    W = np.array(rule.nodes, copy=True)
    W[:, 0] *= params.a
    pts = np.asarray(x, dtype=float) + r_tug * np.asarray(nu, dtype=float) \
        + e_ax * (W @ rotation_to(nu).matrix.T)
    return float(rule.weights @ eval_field(u, pts))


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _refine_angle(f, lo: float, hi: float, maximize: bool, iters: int = 48) -> float:
    """Golden-section extremum of f over [lo, hi] (locally unimodal arc)."""
    sign = 1.0 if maximize else -1.0
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = sign * f(c), sign * f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = sign * f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = sign * f(d)
    best = max(fc, fd)
    return sign * best


def clip_fidelity(degree: int) -> int:
    """Height-direction node count of the collar clipped-ball rule."""
    return 4 + 2 * degree


def clipped_ball_points(x, eps: float, dom: Domain, degree: int):
    """Nodes and weights averaging over B_eps(x) ∩ Ω in the collar.

    The ball is clipped flat at the local boundary height (the same
    local model behind the s_eps formula, so the rule's first moment is
    -s_eps(x) times the outward normal to spectral accuracy); node
    coordinates are a clipped unit-ball product rule rotated so its clip
    axis is the outward normal at the projection of x.
    """
    x = np.asarray(x, dtype=float)
    d = dom.dist_to_boundary(x) / eps
    nodes, weights = clipped_ball_rule(x.size, d,
                                       m_height=clip_fidelity(degree),
                                       cross_degree=degree)
    normal = dom.outward_normal(dom.project_to_boundary(x))
    rot = rotation_to(normal).matrix
    rolled = np.roll(nodes, 1, axis=1)  # clip axis first, tangents after
    return x + eps * (rolled @ rot.T), weights


def ball_domain_mean(u: ScalarField, x, params: GameParams, dom: Domain,
                     degree: int = 4, dirs: int = 64) -> float:
    """Quadrature average of u over B_eps(x) ∩ Ω.

    Away from the boundary this is the plain ball average; when u is a
    grid field the node offsets are the lattice-adapted ones, so the
    interpolated average keeps the exact second moment.  Inside the
    collar the ball is clipped flat at the boundary and averaged with a
    dedicated product rule whose first moment reproduces -s_eps(x) n;
    renormalizing a dropped-node rule instead would misstate the drift
    that realizes the Robin condition (by an O(1) factor that does not
    vanish with eps).
    """
    x = np.asarray(x, dtype=float)
    if dom.dist_to_boundary(x) >= params.eps:
        spacing = getattr(u, "spacing", None)
        if spacing is not None:
            offs, qw, _ = lattice_ball_offsets(params, spacing, dirs, degree)
            return float(qw @ eval_field(u, x[None, :] + offs))
        rule = ball_quadrature(params.n, degree)
        pts = x[None, :] + params.eps * rule.nodes
        return float(rule.weights @ eval_field(u, pts))
    pts, weights = clipped_ball_points(x, params.eps, dom, degree)
    return float(weights @ eval_field(u, pts, check_domain=False))


def signed_dist_many(dom: Domain, pts: np.ndarray) -> np.ndarray:
    """Vectorized signed distance (positive inside) for the stock domains."""
    pts = np.asarray(pts, dtype=float)
    if dom.kind == "ball":
        r = np.linalg.norm(pts - dom.center, axis=1)
        return dom.radius - r
    if dom.kind == "annulus":
        r = np.linalg.norm(pts - dom.center, axis=1)
        return np.minimum(r - dom.r_inner, dom.r_outer - r)
    if dom.kind == "strip":
        return dom.height - pts[:, -1]
    return np.array([dom.signed_dist(p) for p in pts])


def apply_A(u: ScalarField, x, params: GameParams, dom: Domain,
            dirs: int = 64, degree: int = 4, refine: bool = False) -> float:
    """The mixed operator: tug-of-war sup/inf plus clipped ball average.

        alpha/2 (sup_k + inf_k of the direction means)
        + (1 - alpha) * average over B_eps(x) ∩ Ω

    Ties in the sup/inf resolve to the lowest direction index (the value
    is unaffected; strategies built on these means inherit the rule).
    With refine=True (n = 2 only), one golden-section pass on the best
    arc replaces the grid extremes by the local continuum ones; the
    direction-grid quantization otherwise leaves an O(eps^2)-level
    plateau that the expansion experiments would see.
    """
    means = tug_means(u, x, params, dom, dirs, degree)
    ball = ball_domain_mean(u, x, params, dom, degree, dirs)
    sup_v, inf_v = float(means.max()), float(means.min())
    if refine and params.n == 2:
        dp = d_prime_eps(x, params.eps, dom)
        r_tug = params.Q * params.eps * dp
        if r_tug > 0.0:
            e_ax = params.Q * params.A * params.eps * dp
            step = 2.0 * math.pi / dirs

            def mean_at(theta: float) -> float:
                return _mean_at_direction(
                    u, x, params, np.array([math.cos(theta), math.sin(theta)]),
                    r_tug, e_ax, degree)

            th_max = 2.0 * math.pi * int(np.argmax(means)) / dirs
            th_min = 2.0 * math.pi * int(np.argmin(means)) / dirs
            sup_v = max(sup_v, _refine_angle(mean_at, th_max - step,
                                             th_max + step, maximize=True))
            inf_v = min(inf_v, _refine_angle(mean_at, th_min - step,
                                             th_min + step, maximize=False))
    return float(0.5 * params.alpha * (sup_v + inf_v)
                 + (1.0 - params.alpha) * ball)


def absorption_weight(x, params: GameParams, dom: Domain) -> float:
    """Dimensionless boundary absorption weight gamma * s_eps(x)."""
    return params.gamma * s_eps(x, params.eps, dom)


def dpp_step(u: ScalarField, x, G: ScalarField, params: GameParams,
             dom: Domain, dirs: int = 64, degree: int = 4) -> float:
    """One application of the absorbing step operator.

        (1 - w) * apply_A(u, x) + w * G(x),   w = gamma * s_eps(x)

    Equals apply_A exactly once dist(x, boundary) >= eps, where s_eps
    vanishes identically.
    """
    w = absorption_weight(x, params, dom)
    if w > 1.0:
        raise AbsorptionOverflow(
            f"absorption weight {w:.3g} > 1; reduce gamma0 or eps")
    a_val = apply_A(u, x, params, dom, dirs, degree)
    if w == 0.0:
        return a_val
    return (1.0 - w) * a_val + w * float(G(np.asarray(x, dtype=float)))


def _second_differences(u: ScalarField, x, eps: float, H: np.ndarray) -> np.ndarray:
    """delta u(x, eps h) = u(x + eps h) + u(x - eps h) - 2 u(x) over rows of H."""
    x = np.asarray(x, dtype=float)
    plus = eval_field(u, x[None, :] + eps * H)
    minus = eval_field(u, x[None, :] - eps * H)
    u0 = float(eval_field(u, x[None, :])[0])
    return plus + minus - 2.0 * u0


def _extremal(u: ScalarField, x, params: GameParams, Lambda: float,
              dirs: int, degree: int, dom: Domain | None, use_sup: bool) -> float:
    if dom is not None:
        if dom.dist_to_boundary(x) < (1.0 + Lambda) * params.eps - 1e-12:
            raise ProbeOutsideDomain(
                f"extremal probes need dist >= (1 + Lambda) eps at {x}")
    dirset = direction_set(params.n, dirs)
    radii = np.array([0.25, 0.5, 0.75, 1.0]) * Lambda
    probes = (radii[:, None, None] * dirset[None, :, :]).reshape(-1, params.n)
    deltas = _second_differences(u, x, params.eps, probes)
    extreme = deltas.max() if use_sup else deltas.min()
    rule = ball_quadrature(params.n, degree)
    ball = float(rule.weights @ _second_differences(u, x, params.eps, rule.nodes))
    return (params.alpha * float(extreme) + (1.0 - params.alpha) * ball) \
        / (2.0 * params.eps ** 2)


def extremal_plus(u: ScalarField, x, params: GameParams, Lambda: float = 1.0,
                  dirs: int = 64, degree: int = 4,
                  dom: Domain | None = None) -> float:
    """Upper Pucci-type operator: alpha sup of second differences over probe
    points of B_Lambda plus the (1 - alpha) ball-average term, over 2 eps^2."""
    return _extremal(u, x, params, Lambda, dirs, degree, dom, use_sup=True)


def extremal_minus(u: ScalarField, x, params: GameParams, Lambda: float = 1.0,
                   dirs: int = 64, degree: int = 4,
                   dom: Domain | None = None) -> float:
    """Lower Pucci-type operator (inf in place of sup)."""
    return _extremal(u, x, params, Lambda, dirs, degree, dom, use_sup=False)
