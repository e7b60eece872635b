"""Exception hierarchy shared across the package."""


class TugRobinError(Exception):
    """Base class for all package errors."""


class DomainError(TugRobinError):
    """Geometric argument outside its admissible range."""


class AmbiguousProjection(DomainError):
    """Boundary projection requested where it is not unique."""


class ParamError(TugRobinError):
    """Game parameters violate the defining identities or ranges."""


class UnsupportedDegree(TugRobinError):
    """No positive-weight quadrature rule for this (dimension, degree)."""


class RejectionOverflow(TugRobinError):
    """Rejection sampler exceeded its iteration cap (degenerate geometry)."""


class EvalOutsideDomain(TugRobinError):
    """A field evaluation was requested outside its evaluation set."""


class OutsideField(EvalOutsideDomain):
    """Point outside a grid field's bounding box or domain mask."""


class ProbeOutsideDomain(EvalOutsideDomain):
    """Extremal-operator probe would leave the domain."""


class AbsorptionOverflow(TugRobinError):
    """Boundary absorption weight exceeds 1; (gamma0, eps) rejected."""


class NotConverged(TugRobinError):
    """Fixed-point iteration hit max_iter before reaching tolerance."""

    def __init__(self, message, field=None, report=None):
        super().__init__(message)
        self.field = field
        self.report = report


class ConfigError(TugRobinError):
    """Invalid experiment configuration."""


class DegenerateSystem(TugRobinError):
    """Linear system for the radial oracle is ill-conditioned."""


class UnsupportedExponent(TugRobinError):
    """Radial exponent degenerates (p equals the dimension)."""


class DegenerateDirection(TugRobinError):
    """Pull strategy evaluated at its own target point."""


class SingularIntegrand(TugRobinError):
    """Barrier integrand pole too close to the integration support."""


class InsufficientPairs(TugRobinError):
    """Too few usable point pairs for the modulus fit."""
