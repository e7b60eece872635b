"""Game parameter bundle and its derivation from (n, p, eps, gamma0).

The step operator mixes a tug-of-war branch driven by an auxiliary
exponent p0 in (1, p) with an isotropic ball average; the mixing weight
alpha is chosen so the blend reproduces the normalized p-Laplacian of
the target exponent p.  Two identities pin the bundle:

    (n + 2) / A^2 + a^2 = p0 - 1
    alpha = 4(2 - p) / (4(2 - p) + (p - p0) (Q A)^2)

together with Q (1 + A) <= 1 and gamma = gamma0 (1 - alpha).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ParamError

_IDENTITY_TOL = 1e-12


@dataclass(frozen=True)
class GameParams:
    n: int          # ambient dimension
    p: float        # target exponent, in (1, 2)
    p0: float       # auxiliary exponent, in (1, p)
    gamma0: float   # Robin coefficient
    A: float        # ellipsoid axis amplification
    a: float        # axis flattening, in (0, 1)
    Q: float        # tug step fraction, Q (1 + A) <= 1
    alpha: float    # tug-of-war branch probability
    gamma: float    # absorption coefficient gamma0 (1 - alpha)
    eps: float      # step size (length)

    def __post_init__(self):
        if self.n < 2:
            raise ParamError(f"dimension must be >= 2, got {self.n}")
        if not (1.0 < self.p < 2.0):
            raise ParamError(f"p must lie in (1, 2), got {self.p}")
        if not (1.0 < self.p0 < self.p):
            raise ParamError(f"p0 must lie in (1, p), got {self.p0}")
        if self.eps <= 0 or self.gamma0 <= 0:
            raise ParamError("eps and gamma0 must be positive")
        if not (0.0 < self.a < 1.0):
            raise ParamError(f"a must lie in (0, 1), got {self.a}")
        if self.Q <= 0 or self.Q * (1.0 + self.A) > 1.0 + _IDENTITY_TOL:
            raise ParamError("Q must be positive with Q (1 + A) <= 1")
        ident = (self.n + 2) / self.A ** 2 + self.a ** 2 - (self.p0 - 1.0)
        if abs(ident) > _IDENTITY_TOL:
            raise ParamError(f"axis identity violated by {ident:.3e}")
        qa2 = (self.Q * self.A) ** 2
        alpha_ref = 4.0 * (2.0 - self.p) / (4.0 * (2.0 - self.p)
                                            + (self.p - self.p0) * qa2)
        if abs(self.alpha - alpha_ref) > _IDENTITY_TOL:
            raise ParamError(f"alpha formula violated: {self.alpha} vs {alpha_ref}")
        if abs(self.gamma - self.gamma0 * (1.0 - self.alpha)) > _IDENTITY_TOL:
            raise ParamError("gamma must equal gamma0 (1 - alpha)")

    def with_eps(self, eps: float) -> "GameParams":
        """Same bundle at a different step size."""
        return GameParams(self.n, self.p, self.p0, self.gamma0, self.A,
                          self.a, self.Q, self.alpha, self.gamma, eps)


def derive_params(n: int, p: float, eps: float, gamma0: float,
                  p0: float | None = None) -> GameParams:
    """Construct a consistent GameParams bundle.

    The axis identity fixes only the combination (n+2)/A^2 + a^2; the
    split defaults to a^2 = (p0 - 1)/2, balancing noise anisotropy
    against ellipsoid flatness.  p0 defaults to (1 + p)/2 so that both
    2 - p and p - p0 stay away from zero and alpha is well conditioned.
    Q is maximal: Q = 1 / (1 + A).
    """
    if not (1.0 < p < 2.0):
        raise ParamError(f"p must lie in (1, 2), got {p}")
    if p0 is None:
        p0 = 0.5 * (1.0 + p)
    if not (1.0 < p0 < p):
        raise ParamError(f"p0 must lie in (1, p), got {p0}")
    a = math.sqrt((p0 - 1.0) / 2.0)
    A = math.sqrt(2.0 * (n + 2) / (p0 - 1.0))
    Q = 1.0 / (1.0 + A)
    qa2 = (Q * A) ** 2
    alpha = 4.0 * (2.0 - p) / (4.0 * (2.0 - p) + (p - p0) * qa2)
    gamma = gamma0 * (1.0 - alpha)
    return GameParams(n=n, p=p, p0=p0, gamma0=gamma0, A=A, a=a, Q=Q,
                      alpha=alpha, gamma=gamma, eps=eps)


def expansion_coefficient(params: GameParams) -> float:
    """Coefficient kappa with (A u - u)(x) = kappa eps^2 Lap_p^N u(x) + o(eps^2).

    In the interior the tug branch contributes its p0-Laplacian at step
    Q eps / 2 and the ball average its Laplacian; the alpha identity
    collapses the blend onto the target p-Laplacian with

        kappa = alpha (Q A)^2 / (8 (n + 2)) + (1 - alpha) / (2 (n + 2)).
    """
    qa2 = (params.Q * params.A) ** 2
    return (params.alpha * qa2 / (8.0 * (params.n + 2))
            + (1.0 - params.alpha) / (2.0 * (params.n + 2)))
