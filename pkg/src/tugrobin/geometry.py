"""Domains with closed-form geometric queries and boundary-collar weights.

Supported domains are the ball, the annulus, and a half-space slab
("strip") whose flat boundary makes the clipped-ball moment identities
exact.  The strip is admitted for local moment experiments only; the
global solver rejects it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import AmbiguousProjection, DomainError

_PROJ_TOL = 1e-12


def unit_ball_volume(n: int) -> float:
    """Volume of the n-dimensional unit ball."""
    if n < 0:
        raise DomainError(f"dimension must be nonnegative, got {n}")
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def cap_volume(n: int, d: float) -> float:
    """Volume of B_1^n intersected with the half-space {y_n < d}.

    Computed by one-dimensional quadrature of the cross-section area
    |B_1^{n-1}| (1 - t^2)^{(n-1)/2} over t in [-1, d]; absolute
    tolerance 1e-10.
    """
    if n < 1:
        raise DomainError(f"dimension must be >= 1, got {n}")
    if abs(d) > 1:
        raise DomainError(f"cap height must satisfy |d| <= 1, got {d}")
    if d == 1.0:
        return unit_ball_volume(n)
    if d == -1.0:
        return 0.0
    c = unit_ball_volume(n - 1)
    val, _ = quad(lambda t: c * (1.0 - t * t) ** ((n - 1) / 2), -1.0, d,
                  epsabs=1e-12, epsrel=1e-12, limit=200)
    return val


@dataclass(frozen=True)
class CollarWeights:
    """Clipped normalized distances and the mean inward displacement s_eps."""

    d_eps: float        # min(1, dist/eps), in [0, 1]
    d_prime_eps: float  # min(1/2, dist/eps), in [0, 1/2]
    s_eps: float        # length; exactly 0 once dist >= eps


class Domain:
    """Base class: geometric oracle with closed-form queries."""

    kind: str

    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def bounded(self) -> bool:
        return True

    def signed_dist(self, x) -> float:
        """Positive inside the domain, zero on the boundary, negative outside."""
        raise NotImplementedError

    def dist_to_boundary(self, x) -> float:
        """Distance from x to the boundary set (any x)."""
        return abs(self.signed_dist(x))

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.signed_dist(x) >= -tol

    def project_to_boundary(self, x) -> np.ndarray:
        raise NotImplementedError

    def outward_normal(self, p) -> np.ndarray:
        """Outward unit normal at a boundary point p."""
        raise NotImplementedError

    @property
    def interior_ball_radius(self) -> float:
        """Radius rho of the interior ball condition (computed, not supplied)."""
        raise NotImplementedError

    def interior_ball_center(self, x) -> np.ndarray:
        """Center of the interior tangent ball at the projection of x.

        This is the target point of the boundary barrier: the center z0
        of the radius-rho ball touching the boundary at project(x).
        """
        p = self.project_to_boundary(x)
        return p - self.interior_ball_radius * self.outward_normal(p)

    def bounding_box(self):
        """(lo, hi) corner arrays of an axis-aligned box containing the domain."""
        raise NotImplementedError

    def ray_boundary_distance(self, x, u) -> float:
        """Smallest t > 0 with x + t*u on the boundary (inf if none)."""
        raise NotImplementedError


@dataclass(frozen=True)
class Ball(Domain):
    center: np.ndarray
    radius: float
    kind: str = field(default="ball", init=False)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise DomainError("ball radius must be positive")

    @property
    def dim(self) -> int:
        return self.center.size

    def signed_dist(self, x) -> float:
        r = float(np.linalg.norm(np.asarray(x, dtype=float) - self.center))
        return self.radius - r

    def project_to_boundary(self, x) -> np.ndarray:
        v = np.asarray(x, dtype=float) - self.center
        r = float(np.linalg.norm(v))
        if r < _PROJ_TOL:
            raise AmbiguousProjection("projection undefined at the ball center")
        return self.center + (self.radius / r) * v

    def outward_normal(self, p) -> np.ndarray:
        v = np.asarray(p, dtype=float) - self.center
        r = float(np.linalg.norm(v))
        if r < _PROJ_TOL:
            raise DomainError("normal undefined at the ball center")
        return v / r

    @property
    def interior_ball_radius(self) -> float:
        return self.radius

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def ray_boundary_distance(self, x, u) -> float:
        return _ray_sphere(np.asarray(x, float) - self.center, np.asarray(u, float),
                           self.radius)


@dataclass(frozen=True)
class Annulus(Domain):
    center: np.ndarray
    r_inner: float
    r_outer: float
    kind: str = field(default="annulus", init=False)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not (0 < self.r_inner < self.r_outer):
            raise DomainError("annulus radii must satisfy 0 < r_inner < r_outer")

    @property
    def dim(self) -> int:
        return self.center.size

    def signed_dist(self, x) -> float:
        r = float(np.linalg.norm(np.asarray(x, dtype=float) - self.center))
        return min(r - self.r_inner, self.r_outer - r)

    def project_to_boundary(self, x) -> np.ndarray:
        v = np.asarray(x, dtype=float) - self.center
        r = float(np.linalg.norm(v))
        if r < _PROJ_TOL:
            raise AmbiguousProjection("projection undefined at the annulus center")
        mid = 0.5 * (self.r_inner + self.r_outer)
        if abs(r - mid) < _PROJ_TOL:
            raise AmbiguousProjection(
                "equidistant from both boundary circles; projection not unique")
        target = self.r_inner if r < mid else self.r_outer
        return self.center + (target / r) * v

    def outward_normal(self, p) -> np.ndarray:
        v = np.asarray(p, dtype=float) - self.center
        r = float(np.linalg.norm(v))
        if r < _PROJ_TOL:
            raise DomainError("normal undefined at the annulus center")
        # outward from the domain: toward the center on the inner circle
        if abs(r - self.r_inner) <= abs(r - self.r_outer):
            return -v / r
        return v / r

    @property
    def interior_ball_radius(self) -> float:
        return min(self.r_inner, 0.5 * (self.r_outer - self.r_inner))

    def bounding_box(self):
        return self.center - self.r_outer, self.center + self.r_outer

    def ray_boundary_distance(self, x, u) -> float:
        xc = np.asarray(x, float) - self.center
        t_in = _ray_sphere(xc, np.asarray(u, float), self.r_inner)
        t_out = _ray_sphere(xc, np.asarray(u, float), self.r_outer)
        return min(t_in, t_out)


@dataclass(frozen=True)
class Strip(Domain):
    """Half space {y_n < height}: flat boundary for local moment tests.

    Unbounded; admitted only for local verification of the clipped-ball
    moment identities, never for the global solver.
    """

    dim_n: int
    height: float = 0.0
    kind: str = field(default="strip", init=False)

    def __post_init__(self):
        if self.dim_n < 2:
            raise DomainError("strip dimension must be >= 2")

    @property
    def dim(self) -> int:
        return self.dim_n

    @property
    def bounded(self) -> bool:
        return False

    def signed_dist(self, x) -> float:
        return self.height - float(np.asarray(x, dtype=float)[-1])

    def project_to_boundary(self, x) -> np.ndarray:
        p = np.asarray(x, dtype=float).copy()
        p[-1] = self.height
        return p

    def outward_normal(self, p) -> np.ndarray:
        e = np.zeros(self.dim_n)
        e[-1] = 1.0
        return e

    @property
    def interior_ball_radius(self) -> float:
        return math.inf

    def bounding_box(self):
        raise DomainError("strip domain is unbounded")

    def ray_boundary_distance(self, x, u) -> float:
        un = float(np.asarray(u, float)[-1])
        if un <= 0:
            return math.inf
        return (self.height - float(np.asarray(x, float)[-1])) / un


def _ray_sphere(xc, u, radius) -> float:
    """Smallest t > 0 with |xc + t u| = radius (inf if the ray misses)."""
    b = float(np.dot(xc, u))
    c = float(np.dot(xc, xc)) - radius * radius
    disc = b * b - c
    if disc < 0:
        return math.inf
    s = math.sqrt(disc)
    for t in (-b - s, -b + s):
        if t > 1e-14:
            return t
    return math.inf


def dist_to_boundary(x, dom: Domain) -> float:
    """Distance from x to the domain boundary (closed form per domain kind)."""
    return dom.dist_to_boundary(x)


def project_to_boundary(x, dom: Domain) -> np.ndarray:
    """Closest boundary point; raises AmbiguousProjection where not unique."""
    return dom.project_to_boundary(x)


def d_eps(x, eps: float, dom: Domain) -> float:
    """Clipped normalized distance min(1, dist/eps)."""
    return min(1.0, dom.dist_to_boundary(x) / eps)


def d_prime_eps(x, eps: float, dom: Domain) -> float:
    """Clipped normalized distance min(1/2, dist/eps) scaling the tug step."""
    return min(0.5, dom.dist_to_boundary(x) / eps)


def s_eps(x, eps: float, dom: Domain) -> float:
    """Mean inward displacement of a uniform sample of B_eps(x) ∩ Ω.

    Exactly zero once dist(x, boundary) >= eps; otherwise
    eps * (1 - d^2)^((n+1)/2) * |B_1^{n-1}| / ((n+1) |B^n_{1,d}|)
    with d = min(1, dist/eps).
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    dist = dom.dist_to_boundary(x)
    if dist >= eps:
        return 0.0
    n = dom.dim
    d = dist / eps
    pref = unit_ball_volume(n - 1) / ((n + 1) * cap_volume(n, d))
    return pref * eps * (1.0 - d * d) ** ((n + 1) / 2)


def s_eps_table(n: int, num: int = 4097) -> np.ndarray:
    """Sampled s_eps(d)/eps on a uniform d-grid over [0, 1].

    Linear interpolation of this table is accurate to ~1e-8 and serves
    the compiled game kernels, which cannot call adaptive quadrature.
    Built from the same cap_volume quadrature as the exact path.
    """
    ds = np.linspace(0.0, 1.0, num)
    out = np.empty(num)
    vb = unit_ball_volume(n - 1)
    for i, d in enumerate(ds[:-1]):
        out[i] = vb / ((n + 1) * cap_volume(n, d)) * (1.0 - d * d) ** ((n + 1) / 2)
    out[-1] = 0.0
    return out


def collar_weights(x, eps: float, dom: Domain) -> CollarWeights:
    """All three boundary-collar quantities at x for step size eps."""
    dist = dom.dist_to_boundary(x)
    return CollarWeights(
        d_eps=min(1.0, dist / eps),
        d_prime_eps=min(0.5, dist / eps),
        s_eps=s_eps(x, eps, dom),
    )
