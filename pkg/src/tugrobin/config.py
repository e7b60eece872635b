"""Experiment configuration: JSON schema, validation, and builders.

A single JSON document drives every CLI command; unknown keys are
rejected and all numeric ranges enforced before any computation, so a
config that validates is reproducible as an artifact.  The boundary
datum G can be a constant, linear in the radius, or a small arithmetic
expression over coordinates.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field as dc_field

import jsonschema
import numpy as np

from .errors import ConfigError
from .geometry import Annulus, Ball, Domain, Strip
from .params import GameParams, derive_params

_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["domain", "p", "gamma0", "boundary_data"],
    "properties": {
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["ball", "annulus", "strip"]},
                "center": {"type": "array", "items": {"type": "number"},
                           "minItems": 2, "maxItems": 8},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "r_inner": {"type": "number", "exclusiveMinimum": 0},
                "r_outer": {"type": "number", "exclusiveMinimum": 0},
                "dim": {"type": "integer", "minimum": 2, "maximum": 8},
                "height": {"type": "number"},
            },
        },
        "p": {"type": "number", "exclusiveMinimum": 1, "exclusiveMaximum": 2},
        "p0": {"type": ["number", "null"],
               "exclusiveMinimum": 1, "exclusiveMaximum": 2},
        "gamma0": {"type": "number", "exclusiveMinimum": 0},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "eps_list": {"type": "array", "items": {"type": "number",
                                                "exclusiveMinimum": 0},
                     "minItems": 1},
        "boundary_data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["constant", "radial_linear", "expression"]},
                "value": {"type": "number"},
                "inner": {"type": "number"},
                "outer": {"type": "number"},
                "expr": {"type": "string", "minLength": 1},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rule": {"enum": ["eps_over_k", "absolute"]},
                "k": {"type": "number", "exclusiveMinimum": 1},
                "spacing": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "direction_count": {"type": "integer", "minimum": 2},
                "quadrature_degree": {"enum": [2, 4, 6]},
            },
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_traj": {"type": "integer", "minimum": 1},
                "max_steps": {"type": "integer", "minimum": 1},
                "master_seed": {"type": "integer", "minimum": 0},
            },
        },
        "output_dir": {"type": "string", "minLength": 1},
    },
}


@dataclass
class ExperimentConfig:
    domain: Domain
    p: float
    gamma0: float
    G: object                 # vectorized callable, (m, n) -> (m,)
    p0: float | None = None
    eps: float | None = None
    eps_list: list = dc_field(default_factory=list)
    grid_rule: str = "eps_over_k"
    grid_k: float = 4.0
    grid_spacing: float | None = None
    tol: float | None = None
    max_iter: int = 200_000
    direction_count: int = 64
    quadrature_degree: int = 4
    n_traj: int = 10_000
    max_steps: int = 200_000
    master_seed: int = 12345
    output_dir: str = "results"
    raw: dict = dc_field(default_factory=dict)

    def grid_for(self, eps: float) -> float:
        if self.grid_rule == "absolute":
            return float(self.grid_spacing)
        return eps / self.grid_k

    def params_for(self, eps: float) -> GameParams:
        return derive_params(self.domain.dim, self.p, eps, self.gamma0, self.p0)

    def all_eps(self) -> list[float]:
        if self.eps_list:
            return [float(e) for e in self.eps_list]
        return [float(self.eps)]

    def resolved_dict(self) -> dict:
        """Fully-resolved configuration (defaults materialized) for manifests."""
        dom = self.raw["domain"]
        return {
            "domain": dom,
            "p": self.p, "p0": self.p0, "gamma0": self.gamma0,
            "eps": self.eps, "eps_list": list(self.eps_list),
            "boundary_data": self.raw["boundary_data"],
            "grid": {"rule": self.grid_rule, "k": self.grid_k,
                     "spacing": self.grid_spacing},
            "solver": {"tol": self.tol, "max_iter": self.max_iter,
                       "direction_count": self.direction_count,
                       "quadrature_degree": self.quadrature_degree},
            "mc": {"n_traj": self.n_traj, "max_steps": self.max_steps,
                   "master_seed": self.master_seed},
            "output_dir": self.output_dir,
        }


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(raw)


def parse_config(raw: dict) -> ExperimentConfig:
    try:
        jsonschema.validate(raw, _SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config field '{loc}': {exc.message}") from exc
    dom = _build_domain(raw["domain"])
    p = float(raw["p"])
    p0 = raw.get("p0")
    if p0 is not None and not (1.0 < p0 < p):
        raise ConfigError(f"config field 'p0': must lie in (1, p), got {p0}")
    eps = raw.get("eps")
    eps_list = raw.get("eps_list", [])
    if eps is None and not eps_list:
        raise ConfigError("config needs 'eps' or 'eps_list'")
    G = build_boundary_data(raw["boundary_data"], dom)
    grid = raw.get("grid", {})
    rule = grid.get("rule", "eps_over_k")
    if rule == "absolute" and "spacing" not in grid:
        raise ConfigError("config field 'grid/spacing': required for absolute rule")
    solver = raw.get("solver", {})
    mc = raw.get("mc", {})
    dc = solver.get("direction_count", 64)
    if dc % 2:
        raise ConfigError("config field 'solver/direction_count': must be even")
    return ExperimentConfig(
        domain=dom, p=p, gamma0=float(raw["gamma0"]), G=G, p0=p0,
        eps=float(eps) if eps is not None else None,
        eps_list=[float(e) for e in eps_list],
        grid_rule=rule, grid_k=float(grid.get("k", 4.0)),
        grid_spacing=grid.get("spacing"),
        tol=solver.get("tol"), max_iter=int(solver.get("max_iter", 200_000)),
        direction_count=int(dc),
        quadrature_degree=int(solver.get("quadrature_degree", 4)),
        n_traj=int(mc.get("n_traj", 10_000)),
        max_steps=int(mc.get("max_steps", 200_000)),
        master_seed=int(mc.get("master_seed", 12345)),
        output_dir=raw.get("output_dir", "results"),
        raw=raw,
    )


def _build_domain(d: dict) -> Domain:
    kind = d["kind"]
    if kind == "ball":
        if "radius" not in d:
            raise ConfigError("config field 'domain/radius': required for ball")
        center = np.asarray(d.get("center", [0.0, 0.0]), dtype=float)
        return Ball(center, float(d["radius"]))
    if kind == "annulus":
        for key in ("r_inner", "r_outer"):
            if key not in d:
                raise ConfigError(f"config field 'domain/{key}': required for annulus")
        if d["r_inner"] >= d["r_outer"]:
            raise ConfigError("config field 'domain/r_inner': must be < r_outer")
        center = np.asarray(d.get("center", [0.0, 0.0]), dtype=float)
        return Annulus(center, float(d["r_inner"]), float(d["r_outer"]))
    return Strip(int(d.get("dim", 2)), float(d.get("height", 0.0)))


def build_boundary_data(spec: dict, dom: Domain):
    """Vectorized boundary datum; accepts (n,) points or (m, n) batches."""
    kind = spec["kind"]
    if kind == "constant":
        if "value" not in spec:
            raise ConfigError("config field 'boundary_data/value': required")
        c = float(spec["value"])

        def G(x):
            x = np.asarray(x, dtype=float)
            return c if x.ndim == 1 else np.full(len(x), c)

        return G
    if kind == "radial_linear":
        for key in ("inner", "outer"):
            if key not in spec:
                raise ConfigError(f"config field 'boundary_data/{key}': required")
        if dom.kind != "annulus":
            raise ConfigError("radial_linear boundary data needs an annulus domain")
        g0, g1 = float(spec["inner"]), float(spec["outer"])
        r0, r1, c = dom.r_inner, dom.r_outer, dom.center

        def G(x):
            x = np.asarray(x, dtype=float)
            r = np.linalg.norm(x - c, axis=-1)
            return g0 + (g1 - g0) * (r - r0) / (r1 - r0)

        return G
    if "expr" not in spec:
        raise ConfigError("config field 'boundary_data/expr': required")
    return compile_expression(spec["expr"])


# -- tiny arithmetic grammar -----------------------------------------------------
#
#   expr  := term (('+' | '-') term)*
#   term  := unary (('*' | '/') unary)*
#   unary := '-' unary | power
#   power := atom ('^' unary)?
#   atom  := NUMBER | ('sin'|'cos'|'exp') '(' expr ')' | 'r' | 'x<k>' | '(' expr ')'

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?)|([A-Za-z_][A-Za-z_0-9]*)"
                    r"|([()+\-*/^]))")
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}


def _tokenize(expr: str):
    pos, out = 0, []
    while pos < len(expr):
        m = _TOKEN.match(expr, pos)
        if not m or m.end() == pos:
            if expr[pos:].strip():
                raise ConfigError(f"boundary expression: bad token at '{expr[pos:]}'")
            break
        num, ident, op = m.groups()
        if num is not None:
            out.append(("num", float(num)))
        elif ident is not None:
            out.append(("ident", ident))
        else:
            out.append(("op", op))
        pos = m.end()
    out.append(("end", None))
    return out


class _Parser:
    def __init__(self, tokens):
        self.toks = tokens
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, val = self.take()
        if kind != "op" or val != op:
            raise ConfigError(f"boundary expression: expected '{op}'")

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise ConfigError("boundary expression: trailing input")
        return node

    def expr(self):
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            op = self.take()[1]
            rhs = self.term()
            node = (np.add if op == "+" else np.subtract, node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            op = self.take()[1]
            rhs = self.unary()
            node = (np.multiply if op == "*" else np.divide, node, rhs)
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            return (np.negative, self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            return (np.power, base, self.unary())
        return base

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return ("num", val)
        if kind == "ident":
            if val in _FUNCS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return (_FUNCS[val], arg)
            if val == "r":
                return ("r", None)
            m = re.fullmatch(r"x(\d+)", val)
            if m:
                return ("coord", int(m.group(1)) - 1)
            raise ConfigError(f"boundary expression: unknown identifier '{val}'")
        if (kind, val) == ("op", "("):
            node = self.expr()
            self.expect_op(")")
            return node
        raise ConfigError("boundary expression: unexpected token")


def _eval_node(node, pts: np.ndarray):
    head = node[0]
    if head == "num":
        return np.full(pts.shape[0], node[1])
    if head == "r":
        return np.linalg.norm(pts, axis=1)
    if head == "coord":
        i = node[1]
        if i >= pts.shape[1]:
            raise ConfigError(f"boundary expression: x{i + 1} exceeds dimension")
        return pts[:, i]
    if len(node) == 2:
        return head(_eval_node(node[1], pts))
    return head(_eval_node(node[1], pts), _eval_node(node[2], pts))


def compile_expression(expr: str):
    """Compile the datum expression to a vectorized callable."""
    ast = _Parser(_tokenize(expr)).parse()

    def G(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = x[None, :] if single else x
        out = _eval_node(ast, pts)
        if not np.all(np.isfinite(out)):
            raise ConfigError(f"boundary expression not finite at sample points")
        return float(out[0]) if single else out

    G.expression = expr
    return G
