"""Oracles and verification experiments.

The convergence target on the annulus is the classical radial solution
u(r) = C1 + C2 r^kappa of the radial reduction
(p - 1) u'' + (n - 1) u'/r = 0 with Robin data on both circles; smooth
classical solutions are viscosity solutions, so it serves as the exact
reference.  The remaining experiments check the operator expansion, the
clipped-ball moment identities, the boundary barrier inequality, and the
near-boundary modulus of a solved field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_legendre

from .errors import DegenerateSystem, DomainError, InsufficientPairs, \
    ParamError, SingularIntegrand, UnsupportedExponent
from .field import ValueField
from .geometry import Annulus, Ball, Domain, Strip, s_eps, unit_ball_volume
from .operators import apply_A, signed_dist_many
from .params import GameParams, derive_params, expansion_coefficient
from .sampling import ball_quadrature, clipped_ball_rule, rotation_to, \
    sample_ball_domain
from .solver import solve_fixed_point


# -- analytic Robin solution on the annulus -------------------------------------


@dataclass(frozen=True)
class RadialRobinSolution:
    """u(r) = C1 + C2 r^kappa solving the radial Robin problem."""

    C1: float
    C2: float
    kappa: float
    r_inner: float
    r_outer: float
    gamma0: float
    G_inner: float
    G_outer: float
    p: float
    n: int

    def u(self, r):
        return self.C1 + self.C2 * np.asarray(r, dtype=float) ** self.kappa

    def du(self, r):
        return self.C2 * self.kappa * np.asarray(r, dtype=float) ** (self.kappa - 1)

    def ddu(self, r):
        k = self.kappa
        return self.C2 * k * (k - 1) * np.asarray(r, dtype=float) ** (k - 2)

    def __call__(self, x) -> float:
        return float(self.u(np.linalg.norm(np.asarray(x, dtype=float))))

    def evaluate_many(self, pts: np.ndarray) -> np.ndarray:
        return self.u(np.linalg.norm(np.asarray(pts, dtype=float), axis=1))

    def ode_residual(self, r) -> np.ndarray:
        """(p-1) u'' + (n-1) u'/r, identically zero for the true solution."""
        r = np.asarray(r, dtype=float)
        return (self.p - 1.0) * self.ddu(r) + (self.n - 1.0) * self.du(r) / r

    def robin_residuals(self):
        """Defects of the two Robin conditions (inner, outer)."""
        g0 = self.gamma0
        inner = -self.du(self.r_inner) + g0 * self.u(self.r_inner) \
            - g0 * self.G_inner
        outer = self.du(self.r_outer) + g0 * self.u(self.r_outer) \
            - g0 * self.G_outer
        return float(inner), float(outer)


def annulus_oracle(r0: float, r1: float, p: float, n: int, gamma0: float,
                   G0: float, G1: float) -> RadialRobinSolution:
    """Solve the 2x2 linear system for (C1, C2) of the radial Robin problem.

    The outward normal points toward the center on the inner circle, so
    the conditions are -u'(r0) + g u(r0) = g G0 and u'(r1) + g u(r1) = g G1.
    """
    if not (0 < r0 < r1):
        raise DomainError("need 0 < r0 < r1")
    if not (1.0 < p < 2.0):
        raise ParamError(f"p must lie in (1, 2), got {p}")
    if abs(p - n) < 1e-12:
        raise UnsupportedExponent("radial exponent degenerates at p = n")
    kappa = (p - n) / (p - 1.0)
    mat = np.array([
        [gamma0, gamma0 * r0 ** kappa - kappa * r0 ** (kappa - 1)],
        [gamma0, gamma0 * r1 ** kappa + kappa * r1 ** (kappa - 1)],
    ])
    rhs = np.array([gamma0 * G0, gamma0 * G1])
    if np.linalg.cond(mat) > 1e12:
        raise DegenerateSystem("Robin system is ill-conditioned")
    c1, c2 = np.linalg.solve(mat, rhs)
    return RadialRobinSolution(C1=float(c1), C2=float(c2), kappa=kappa,
                               r_inner=r0, r_outer=r1, gamma0=gamma0,
                               G_inner=G0, G_outer=G1, p=p, n=n)


# -- operator expansion ----------------------------------------------------------


def fd_gradient(phi, x, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        g[i] = (phi(x + e) - phi(x - e)) / (2 * h)
    return g


def fd_hessian(phi, x, h: float = 1e-4) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.empty((n, n))
    f0 = phi(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        H[i, i] = (phi(x + ei) - 2 * f0 + phi(x - ei)) / h ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h
            H[i, j] = H[j, i] = (phi(x + ei + ej) - phi(x + ei - ej)
                                 - phi(x - ei + ej) + phi(x - ei - ej)) / (4 * h ** 2)
    return H


def normalized_p_laplacian(phi, x, p: float) -> float:
    """Lap u + (p - 2) <D2u Du, Du>/|Du|^2 by central finite differences."""
    g = fd_gradient(phi, x)
    H = fd_hessian(phi, x)
    g2 = float(g @ g)
    if g2 < 1e-20:
        raise DomainError("normalized p-Laplacian needs a nonvanishing gradient")
    return float(np.trace(H) + (p - 2.0) * (g @ H @ g) / g2)


@dataclass(frozen=True)
class ExpansionRow:
    eps: float
    measured: float   # (apply_A(phi) - phi)(x) / eps^2
    target: float     # kappa * Lap_p^N phi(x)
    error: float


def expansion_check(phi, x, params: GameParams, eps_list, dom: Domain | None = None,
                    dirs: int = 64, degree: int = 6) -> list[ExpansionRow]:
    """Measured second-order coefficient of the mixed operator versus
    kappa * Lap_p^N phi(x), one row per eps (sup/inf refined on the arc)."""
    x = np.asarray(x, dtype=float)
    if dom is None:
        dom = Ball(np.zeros(x.size), float(np.linalg.norm(x)) + 1.0)
    target = expansion_coefficient(params) * normalized_p_laplacian(phi, x, params.p)
    rows = []
    for eps in eps_list:
        pe = params.with_eps(float(eps))
        if dom.dist_to_boundary(x) < pe.eps:
            raise DomainError("expansion probe must be interior for every eps")
        measured = (apply_A(phi, x, pe, dom, dirs=dirs, degree=degree,
                            refine=True) - float(phi(x))) / pe.eps ** 2
        rows.append(ExpansionRow(eps=float(eps), measured=measured,
                                 target=target, error=abs(measured - target)))
    return rows


# -- clipped-ball moments --------------------------------------------------------


@dataclass(frozen=True)
class MomentReport:
    d: float
    eps: float
    n: int
    first_quad: np.ndarray       # quadrature estimate of the mean of (y - x)
    first_formula: np.ndarray    # -s_eps(x) e_n
    first_rel_err: float
    second_quad: np.ndarray      # estimate of the mean of (y-x) ⊗ (y-x)
    second_formula: np.ndarray   # eps^2/(n+2) I
    second_abs_err: float        # max entry deviation
    second_budget: float         # eps * s_eps(x)
    mc_first_err: float | None = None
    mc_second_err: float | None = None


def moment_check(d: float, eps: float, n: int, n_mc: int = 0,
                 m_height: int = 32, master_seed: int = 0) -> MomentReport:
    """First/second moments of the uniform law on B_eps(x) ∩ Ω for the flat
    boundary at distance eps*d, against the collar formulas."""
    if not (0.0 <= d <= 1.0):
        raise DomainError("d must lie in [0, 1]")
    dom = Strip(n, height=eps * d)
    x = np.zeros(n)
    s_val = s_eps(x, eps, dom)
    nodes, weights = clipped_ball_rule(n, d, m_height=m_height)
    pts = eps * nodes
    first = weights @ pts
    second = np.einsum("q,qi,qj->ij", weights, pts, pts)
    e_n = np.zeros(n)
    e_n[-1] = 1.0
    first_formula = -s_val * e_n
    second_formula = eps ** 2 / (n + 2) * np.eye(n)
    first_rel = float(np.linalg.norm(first - first_formula)
                      / max(abs(s_val), 1e-300))
    second_abs = float(np.abs(second - second_formula).max())
    mc_first = mc_second = None
    if n_mc > 0:
        rng = np.random.default_rng(np.random.SeedSequence((master_seed, 0)))
        samples = np.array([sample_ball_domain(x, eps, dom, rng)
                            for _ in range(n_mc)])
        mc_first = float(np.linalg.norm(samples.mean(axis=0) - first_formula))
        m2 = np.einsum("qi,qj->ij", samples, samples) / n_mc
        mc_second = float(np.abs(m2 - second_formula).max())
    return MomentReport(d=d, eps=eps, n=n, first_quad=first,
                        first_formula=first_formula, first_rel_err=first_rel,
                        second_quad=second, second_formula=second_formula,
                        second_abs_err=second_abs, second_budget=eps * s_val,
                        mc_first_err=mc_first, mc_second_err=mc_second)


# -- boundary barrier ------------------------------------------------------------


def ball_domain_average_polar(f, x, eps: float, dom: Domain,
                              n_theta: int = 512, n_r: int = 64) -> float:
    """Average of f over B_eps(x) ∩ Ω by exact polar clipping (n = 2).

    For each midpoint angle the radial extent min(eps, exit distance to
    the boundary) is closed-form, so only the angular direction carries
    discretization error.
    """
    x = np.asarray(x, dtype=float)
    if x.size != 2:
        raise DomainError("polar clipping is two-dimensional")
    theta = (np.arange(n_theta) + 0.5) * (2 * math.pi / n_theta)
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    tmax = np.array([min(eps, dom.ray_boundary_distance(x, u)) for u in dirs])
    gl_x, gl_w = roots_legendre(n_r)
    # radial nodes r = t/2 (x+1), weight r dr
    total = 0.0
    area = 0.0
    for j in range(n_theta):
        T = tmax[j]
        if T <= 0:
            continue
        r = 0.5 * T * (gl_x + 1.0)
        w = 0.5 * T * gl_w * r
        vals = f(x[None, :] + r[:, None] * dirs[j])
        total += float(w @ np.asarray(vals, dtype=float))
        area += 0.5 * T * T
    if area <= 0:
        raise DomainError("empty intersection B_eps(x) ∩ Ω")
    return total / area


def default_barrier_exponent(params: GameParams) -> float:
    """q = max(n - 2, (n - 1)/a - 1) + 1, safely above the lemma threshold."""
    return max(params.n - 2.0, (params.n - 1.0) / params.a - 1.0) + 1.0


def barrier_check(x0, params: GameParams, dom: Domain, q: float,
                  quad_order: int = 64) -> float:
    """Margin of the barrier inequality at a collar point x0.

    Computes the alpha/2-weighted ellipsoid averages of |z - y0|^{-q} at
    x0 +/- Q eps d' nu (nu pointing away from the interior-ball center
    y0) plus the (1 - alpha) clipped ball average, minus |x0 - y0|^{-q}.
    The lemma asserts the margin dominates a positive multiple of
    s_eps(x0) + eps^2; only its sign and scaling are testable.
    """
    x0 = np.asarray(x0, dtype=float)
    if q <= (params.n - 1.0) / params.a - 1.0:
        raise ParamError(f"barrier exponent q={q} below threshold "
                         f"{(params.n - 1.0) / params.a - 1.0}")
    y0 = dom.interior_ball_center(x0)
    v = x0 - y0
    dist_pole = float(np.linalg.norm(v))
    if dist_pole <= 3.0 * params.eps:
        raise SingularIntegrand("pole y0 within 2 eps of the integration support")
    nu = v / dist_pole

    def f(z):
        return np.linalg.norm(np.asarray(z, dtype=float) - y0, axis=-1) ** (-q)

    dp = min(0.5, dom.dist_to_boundary(x0) / params.eps)
    r_tug = params.Q * params.eps * dp
    e_ax = params.Q * params.A * params.eps * dp
    rule = ball_quadrature(params.n, 6)
    W = np.array(rule.nodes, copy=True)
    W[:, 0] *= params.a
    offs = e_ax * (W @ rotation_to(nu).matrix.T)
    mean_plus = float(rule.weights @ f(x0 + r_tug * nu + offs))
    mean_minus = float(rule.weights @ f(x0 - r_tug * nu + offs))
    ball_avg = ball_domain_average_polar(f, x0, params.eps, dom,
                                         n_theta=8 * quad_order, n_r=quad_order)
    lhs = 0.5 * params.alpha * (mean_plus + mean_minus) \
        + (1.0 - params.alpha) * ball_avg
    return lhs - dist_pole ** (-q)


# -- near-boundary modulus -------------------------------------------------------


@dataclass(frozen=True)
class HolderReport:
    pairs_sampled: int
    pairs_used: int
    exponent: float
    constant: float
    fit_residual: float
    degenerate: bool


def holder_modulus(field: ValueField, dom: Domain, band_depth: float,
                   n_pairs: int, max_sep: float,
                   master_seed: int = 0) -> HolderReport:
    """Total-least-squares log-log fit of |u(x) - u(y)| against |x - y|
    over point pairs in the near-boundary band dist <= band_depth."""
    rng = np.random.default_rng(np.random.SeedSequence((master_seed, 0)))
    lo, hi = dom.bounding_box()
    sep_lo = max(field.spacing, 1e-6 * max_sep)
    pairs = []
    attempts = 0
    cap = 200 * n_pairs
    while len(pairs) < n_pairs and attempts < cap:
        attempts += 1
        x = lo + rng.random(dom.dim) * (hi - lo)
        if dom.signed_dist(x) < 0 or dom.dist_to_boundary(x) > band_depth:
            continue
        sep = math.exp(rng.uniform(math.log(sep_lo), math.log(max_sep)))
        u = rng.standard_normal(dom.dim)
        u /= np.linalg.norm(u)
        y = x + sep * u
        if dom.signed_dist(y) < 0 or dom.dist_to_boundary(y) > band_depth:
            continue
        pairs.append((x, y))
    if len(pairs) < max(8, n_pairs // 10):
        raise InsufficientPairs(
            f"only {len(pairs)} usable pairs after {attempts} attempts")
    xs = np.array([p[0] for p in pairs])
    ys = np.array([p[1] for p in pairs])
    du = np.abs(field.evaluate_many(xs, check_domain=False)
                - field.evaluate_many(ys, check_domain=False))
    sep = np.linalg.norm(xs - ys, axis=1)
    keep = du > 1e-12
    if keep.sum() < 8:
        return HolderReport(pairs_sampled=len(pairs), pairs_used=int(keep.sum()),
                            exponent=math.nan, constant=math.nan,
                            fit_residual=math.nan, degenerate=True)
    lx = np.log(sep[keep])
    ly = np.log(du[keep])
    data = np.column_stack([lx - lx.mean(), ly - ly.mean()])
    _, svals, vt = np.linalg.svd(data, full_matrices=False)
    v = vt[0]
    if abs(v[0]) < 1e-12:
        return HolderReport(pairs_sampled=len(pairs), pairs_used=int(keep.sum()),
                            exponent=math.inf, constant=math.nan,
                            fit_residual=math.nan, degenerate=True)
    slope = float(v[1] / v[0])
    const = math.exp(float(ly.mean() - slope * lx.mean()))
    resid = float(svals[-1] / math.sqrt(keep.sum()))
    return HolderReport(pairs_sampled=len(pairs), pairs_used=int(keep.sum()),
                        exponent=slope, constant=const, fit_residual=resid,
                        degenerate=False)


# -- convergence study -----------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    eps: float
    grid: float
    sup_error: float          # against the radial oracle, absolute
    rel_error: float          # sup_error / sup |oracle|
    residual: float
    iterations: int
    converged: bool


def radial_boundary_data(r0: float, r1: float, G0: float, G1: float, center=None):
    """Linear-in-radius datum interpolating G0 at r0 and G1 at r1."""
    c = np.zeros(2) if center is None else np.asarray(center, dtype=float)

    def G(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x - c, axis=-1)
        return G0 + (G1 - G0) * (r - r0) / (r1 - r0)

    return G


def level_relaxation_gap(dom: Domain, params: GameParams) -> float:
    """Per-sweep decay estimate of the slowest (level) mode.

    A near-constant field relaxes only through boundary absorption, so
    its per-sweep decay is the domain-averaged absorption weight
    gamma * s_eps, roughly gamma eps^2 * perimeter/area * integral of
    s_eps(d)/eps over the collar profile.  Residual tolerances certify
    the level error only down to residual / gap, hence this sets the
    tolerance scale for convergence studies.
    """
    from .geometry import s_eps_table
    table = s_eps_table(params.n)
    i_s = float(np.trapz(table, dx=1.0 / (len(table) - 1)))
    n = dom.dim
    vn = unit_ball_volume(n)
    if dom.kind == "ball":
        area = vn * dom.radius ** n
        perim = n * vn * dom.radius ** (n - 1)
    elif dom.kind == "annulus":
        area = vn * (dom.r_outer ** n - dom.r_inner ** n)
        perim = n * vn * (dom.r_outer ** (n - 1) + dom.r_inner ** (n - 1))
    else:
        raise DomainError("level gap estimate needs a bounded domain")
    return params.gamma * perim * params.eps ** 2 * i_s / area


class _ExtrapolatedStart:
    """Start iterate u2 + c (u2 - u1): the leading solver bias is linear in
    eps, so extrapolating two coarser solutions lands near the finer fixed
    point and skips most of the slow level-mode transient."""

    def __init__(self, f2, f1, c):
        self.f2, self.f1, self.c = f2, f1, c

    def evaluate_many(self, pts, check_domain=False):
        v2 = self.f2.evaluate_many(pts, check_domain=False)
        v1 = self.f1.evaluate_many(pts, check_domain=False)
        return (1.0 + self.c) * v2 - self.c * v1


def convergence_study(dom: Annulus, p: float, gamma0: float, G0: float,
                      G1: float, eps_list, grid_rule: float = 4.0,
                      p0: float | None = None, dirs: int = 16, degree: int = 2,
                      tol: float | None = None, max_iter: int = 300_000,
                      n_probe_radii: int = 200, n_probe_angles: int = 8,
                      warm_start: bool = True, log_every: int = 0):
    """One solver run per eps; sup error against the radial oracle.

    Runs coarse to fine; by default each run starts from the previous
    solution (eps-extrapolated once two are available) interpolated onto
    the finer lattice, which leaves the fixed point untouched but skips
    the long transient of the weakly absorbed level mode.  tol and
    max_iter may be callables eps -> value.
    """
    if dom.kind != "annulus":
        raise DomainError("the convergence study runs on the annulus")
    oracle = annulus_oracle(dom.r_inner, dom.r_outer, p, dom.dim, gamma0, G0, G1)
    G = radial_boundary_data(dom.r_inner, dom.r_outer, G0, G1, dom.center)
    radii = np.linspace(dom.r_inner, dom.r_outer, n_probe_radii)
    angles = 2 * math.pi * (np.arange(n_probe_angles) + 0.3) / n_probe_angles
    probes = np.array([[dom.center[0] + r * math.cos(t),
                        dom.center[1] + r * math.sin(t)]
                       for r in radii for t in angles])
    oracle_vals = oracle.evaluate_many(probes)
    scale = float(np.abs(oracle_vals).max())
    rows = []
    hist: list[tuple[float, object]] = []
    fields = []
    for eps in sorted(eps_list, reverse=True):
        params = derive_params(dom.dim, p, float(eps), gamma0, p0)
        grid = float(eps) / grid_rule
        u0 = None
        if warm_start and len(hist) == 1:
            u0 = hist[-1][1]
        elif warm_start and len(hist) >= 2:
            (e1, f1), (e2, f2) = hist[-2], hist[-1]
            c = (float(eps) - e2) / (e2 - e1)
            u0 = _ExtrapolatedStart(f2, f1, c)
        if tol is None:
            # resolve the level mode to ~0.4% of the data scale
            eps_tol = max(1e-13, 0.004 * scale
                          * level_relaxation_gap(dom, params))
        elif callable(tol):
            eps_tol = tol(float(eps))
        else:
            eps_tol = tol
        eps_max = max_iter(float(eps)) if callable(max_iter) else max_iter
        field, report = solve_fixed_point(
            G, params, dom, grid, tol=eps_tol, max_iter=eps_max, dirs=dirs,
            degree=degree, u0=u0, log_every=log_every)
        vals = field.evaluate_many(probes, check_domain=False)
        sup_err = float(np.abs(vals - oracle_vals).max())
        rows.append(ConvergenceRow(eps=float(eps), grid=grid, sup_error=sup_err,
                                   rel_error=sup_err / scale,
                                   residual=report.residual,
                                   iterations=report.iterations,
                                   converged=report.converged))
        fields.append(field)
        hist.append((float(eps), field))
    rows.sort(key=lambda r: -r.eps)
    return rows, fields, oracle
