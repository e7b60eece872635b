"""Tug-of-war-with-noise solver and simulator for Robin boundary problems
of the normalized p-Laplacian with 1 < p < 2."""

from .errors import (AbsorptionOverflow, AmbiguousProjection, ConfigError,
                     DegenerateDirection, DegenerateSystem, DomainError,
                     EvalOutsideDomain, InsufficientPairs, NotConverged,
                     OutsideField, ParamError, ProbeOutsideDomain,
                     RejectionOverflow, SingularIntegrand, TugRobinError,
                     UnsupportedDegree, UnsupportedExponent)
from .field import ValueField, load_field
from .geometry import (Annulus, Ball, CollarWeights, Domain, Strip, cap_volume,
                       collar_weights, d_eps, d_prime_eps, dist_to_boundary,
                       project_to_boundary, s_eps, unit_ball_volume)
from .operators import (apply_A, absorption_weight, direction_set, dpp_step,
                        extremal_minus, extremal_plus, h_mean, tug_means)
from .params import GameParams, derive_params, expansion_coefficient
from .sampling import (Dilation, QuadratureRule, Rotation, ball_quadrature,
                       clipped_ball_rule, ellipsoid_map, ellipsoid_point,
                       rotation_to, sample_ball, sample_ball_domain)
from .solver import SolveReport, residual, solve_fixed_point

__version__ = "0.1.0"
