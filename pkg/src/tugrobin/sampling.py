"""Rotations, the axis dilation, ellipsoid maps, and ball quadrature.

The tug-of-war noise lives on ellipsoids E_eps^a(z; nu) with semi-axis
a*eps along nu and eps transversally.  Points of the unit ball are pushed
onto such an ellipsoid by w -> z + eps * P_nu D w, where D scales the
first axis by a and P_nu rotates e1 onto nu.  Deterministic quadrature
rules over the unit ball make every ellipsoid average reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations, product

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import DomainError, RejectionOverflow, UnsupportedDegree
from .geometry import Domain, unit_ball_volume

_ANTIPODAL_CUTOFF = -1.0 + 1e-9
_REJECTION_CAP = 10_000


@dataclass(frozen=True)
class Rotation:
    """Orthogonal matrix with det +1 mapping e1 onto a prescribed direction."""

    matrix: np.ndarray

    def apply(self, w) -> np.ndarray:
        return self.matrix @ np.asarray(w, dtype=float)


@dataclass(frozen=True)
class Dilation:
    """Scales the first axis by a in (0, 1), identity on the rest."""

    scale: float

    def __post_init__(self):
        if not (0 < self.scale < 1):
            raise DomainError("dilation scale must lie in (0, 1)")

    def apply(self, w) -> np.ndarray:
        out = np.array(w, dtype=float, copy=True)
        out[..., 0] *= self.scale
        return out

    def as_matrix(self, n: int) -> np.ndarray:
        m = np.eye(n)
        m[0, 0] = self.scale
        return m


def rotation_to(nu) -> Rotation:
    """In-plane rotation taking e1 to nu, identity on the orthogonal complement.

    Smooth away from nu = -e1; within 1e-9 of the antipode it falls back
    to the rotation by pi in the (e1, e2)-plane, confining the
    discontinuity to a set no integral sees.
    """
    nu = np.asarray(nu, dtype=float)
    n = nu.size
    norm = float(np.linalg.norm(nu))
    if abs(norm - 1.0) > 1e-12:
        raise DomainError(f"direction must be a unit vector, |nu| = {norm}")
    c = nu[0]
    if c >= 1.0 - 1e-15:
        return Rotation(np.eye(n))
    if c < _ANTIPODAL_CUTOFF:
        m = np.eye(n)
        m[0, 0] = -1.0
        m[1, 1] = -1.0
        return Rotation(m)
    e1 = np.zeros(n)
    e1[0] = 1.0
    u = nu - c * e1
    s = float(np.linalg.norm(u))
    u = u / s
    m = (np.eye(n)
         + (c - 1.0) * (np.outer(e1, e1) + np.outer(u, u))
         + s * (np.outer(u, e1) - np.outer(e1, u)))
    return Rotation(m)


def ellipsoid_point(z, nu, eps_axis: float, a: float, w) -> np.ndarray:
    """Image of a unit-ball point w in the ellipsoid E_eps_axis^a(z; nu)."""
    w = np.asarray(w, dtype=float)
    if np.linalg.norm(w) > 1.0 + 1e-12:
        raise DomainError("w must lie in the closed unit ball")
    rot = rotation_to(nu)
    dw = w.copy()
    dw[0] *= a
    return np.asarray(z, dtype=float) + eps_axis * rot.apply(dw)


def ellipsoid_map(z, nu, eps_axis: float, a: float, W: np.ndarray) -> np.ndarray:
    """Vectorized ellipsoid_point over rows of W (shape (m, n))."""
    rot = rotation_to(nu)
    Wd = np.array(W, dtype=float, copy=True)
    Wd[:, 0] *= a
    return np.asarray(z, dtype=float) + eps_axis * (Wd @ rot.matrix.T)


def sample_ball(rng: np.random.Generator, n: int, radius: float = 1.0) -> np.ndarray:
    """Uniform point in the n-ball: Gaussian direction times radius^(1/n) law."""
    while True:
        g = rng.standard_normal(n)
        norm = float(np.linalg.norm(g))
        if norm > 1e-12:
            break
    r = radius * rng.random() ** (1.0 / n)
    return (r / norm) * g


def sample_ball_domain(x, eps: float, dom: Domain,
                       rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of B_eps(x) ∩ Ω by rejection from the full ball."""
    x = np.asarray(x, dtype=float)
    for _ in range(_REJECTION_CAP):
        y = x + sample_ball(rng, x.size, eps)
        if dom.contains(y):
            return y
    raise RejectionOverflow(
        f"no accepted sample in {_REJECTION_CAP} draws; degenerate geometry at {x}")


@dataclass(frozen=True)
class QuadratureRule:
    """Positive-weight rule on the unit ball, exact for low-degree polynomials.

    Weights sum to one, so the rule computes averages directly.
    Exactness is verified at construction against the closed-form
    unit-ball monomial moments.
    """

    nodes: np.ndarray    # (m, n)
    weights: np.ndarray  # (m,), positive, sum 1
    degree: int

    def average(self, f) -> float:
        vals = np.array([float(f(p)) for p in self.nodes])
        return float(self.weights @ vals)


def ball_monomial_average(n: int, powers) -> float:
    """Closed-form average of prod x_i^powers_i over the unit n-ball."""
    powers = list(powers)
    if any(p % 2 for p in powers):
        return 0.0
    betas = [p // 2 for p in powers]
    k = sum(betas)
    num = 1.0
    for b in betas:
        num *= math.prod(range(2 * b - 1, 0, -2)) if b else 1.0
    den = math.prod(n + 2 * j for j in range(1, k + 1))
    return num / den if k else 1.0


def _sphere_families(n: int):
    """Symmetric point families on S^{n-1}: axes, face and space diagonals."""
    axes = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        axes.extend([e, -e])
    diag2 = []
    for i, j in combinations(range(n), 2):
        for si, sj in product((1.0, -1.0), repeat=2):
            v = np.zeros(n)
            v[i], v[j] = si, sj
            diag2.append(v / math.sqrt(2.0))
    diag3 = []
    for i, j, k in combinations(range(n), 3):
        for si, sj, sk in product((1.0, -1.0), repeat=3):
            v = np.zeros(n)
            v[i], v[j], v[k] = si, sj, sk
            diag3.append(v / math.sqrt(3.0))
    return np.array(axes), np.array(diag2), np.array(diag3) if diag3 else np.zeros((0, n))


def _sphere_rule(n: int, degree: int):
    """Points and weights integrating spherical harmonics up to `degree`."""
    axes, diag2, diag3 = _sphere_families(n)
    if degree <= 3:
        return axes, np.full(len(axes), 1.0 / len(axes))
    if degree <= 5:
        wa = (4.0 - n) / (n + 2.0)
        wd = 2.0 * (n - 1.0) / (n + 2.0)
        if wa < -1e-15:
            raise UnsupportedDegree(
                f"no positive-weight degree-{degree} sphere rule for n={n}")
        return _assemble([(axes, wa), (diag2, wd)])
    if degree <= 7:
        den = (n + 2.0) * (n + 4.0)
        wa = (15.0 - (n - 1.0) * (5.0 - n) - (n - 1.0) * (n - 2.0) / 2.0) / den
        wd2 = 4.0 * (n - 1.0) * (5.0 - n) / den
        wd3 = 4.5 * (n - 1.0) * (n - 2.0) / den
        if min(wa, wd2) < -1e-15:
            raise UnsupportedDegree(
                f"no positive-weight degree-{degree} sphere rule for n={n}")
        return _assemble([(axes, wa), (diag2, wd2), (diag3, wd3)])
    raise UnsupportedDegree(f"sphere rule degree {degree} not supported")


def _assemble(families):
    pts, wts = [], []
    for family, total in families:
        if total <= 1e-15 or len(family) == 0:
            continue
        pts.append(family)
        wts.append(np.full(len(family), total / len(family)))
    return np.concatenate(pts), np.concatenate(wts)


def _radial_rule(n: int, degree: int):
    """Nodes/weights for the radial average with density n r^{n-1} on [0, 1]."""
    k = (degree + 2) // 2
    x, w = roots_jacobi(k, 0.0, float(n - 1))
    r = 0.5 * (x + 1.0)
    wr = w * (0.5 ** n) * n
    return r, wr / wr.sum()


@lru_cache(maxsize=None)
def ball_quadrature(n: int, degree: int) -> QuadratureRule:
    """Positive rule on the unit n-ball exact for total degree <= degree.

    Supported degrees are 2, 4, 6; the sphere factor uses symmetric
    axis/diagonal families, so positivity limits the dimension
    (degree 4: n <= 4, degree 6: n <= 5).  n = 1 reduces to
    Gauss-Legendre on [-1, 1].
    """
    if degree not in (2, 4, 6):
        raise UnsupportedDegree(f"degree must be one of 2, 4, 6, got {degree}")
    if n < 1:
        raise DomainError(f"dimension must be >= 1, got {n}")
    if n == 1:
        x, w = roots_legendre((degree + 2) // 2)
        rule = QuadratureRule(x.reshape(-1, 1), w / 2.0, degree)
    else:
        sphere_degree = degree + 1  # symmetric rules gain one odd degree
        theta, wth = _sphere_rule(n, sphere_degree)
        r, wr = _radial_rule(n, degree)
        nodes = (r[:, None, None] * theta[None, :, :]).reshape(-1, n)
        weights = (wr[:, None] * wth[None, :]).reshape(-1)
        rule = QuadratureRule(nodes, weights, degree)
    _validate_rule(rule, n)
    return rule


def _validate_rule(rule: QuadratureRule, n: int) -> None:
    if np.any(rule.weights <= 0):
        raise UnsupportedDegree("rule has non-positive weights")
    if abs(rule.weights.sum() - 1.0) > 1e-12:
        raise UnsupportedDegree("rule weights do not sum to 1")
    for powers in _monomials_up_to(n, rule.degree):
        exact = ball_monomial_average(n, powers)
        approx = float(rule.weights @ np.prod(rule.nodes ** np.array(powers), axis=1))
        if abs(approx - exact) > 1e-12:
            raise UnsupportedDegree(
                f"rule fails moment check at powers {powers}: {approx} vs {exact}")


def _monomials_up_to(n: int, degree: int):
    def rec(prefix, remaining, slots):
        if slots == 0:
            yield tuple(prefix)
            return
        for p in range(remaining + 1):
            yield from rec(prefix + [p], remaining - p, slots - 1)
    yield from rec([], degree, n)


@lru_cache(maxsize=None)
def _legendre_nodes(m: int):
    return roots_legendre(m)


@lru_cache(maxsize=8192)
def clipped_ball_rule(n: int, d: float, m_height: int = 32,
                      cross_degree: int = 6):
    """Product rule averaging over the clipped unit ball B_1 ∩ {y_n < d}.

    Integrates along the clip axis with Gauss-Legendre in the angle
    substitution t = sin(theta) (the cross-section weight cos^n(theta)
    is then smooth), and over each cross-section with an (n-1)-ball
    rule.  Refinable through m_height; used by the moment experiments.

    Returns (nodes, weights) with weights summing to one.
    """
    if not (-1.0 < d <= 1.0):
        raise DomainError("clip height must lie in (-1, 1]")
    theta_hi = math.asin(min(d, 1.0))
    x, w = _legendre_nodes(m_height)
    theta = 0.5 * (x + 1.0) * (theta_hi + math.pi / 2) - math.pi / 2
    wt = w * (theta_hi + math.pi / 2) / 2.0
    t = np.sin(theta)
    rho = np.cos(theta)
    height_w = wt * rho ** n
    cross = ball_quadrature(n - 1, cross_degree)
    nodes = np.empty((m_height * len(cross.nodes), n))
    weights = np.empty(m_height * len(cross.nodes))
    idx = 0
    for i in range(m_height):
        block = slice(idx, idx + len(cross.nodes))
        nodes[block, :n - 1] = rho[i] * cross.nodes
        nodes[block, n - 1] = t[i]
        weights[block] = height_w[i] * cross.weights
        idx += len(cross.nodes)
    return nodes, weights / weights.sum()
