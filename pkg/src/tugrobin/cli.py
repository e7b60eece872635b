"""Command-line interface: solve, simulate, verify, convergence.

Every run writes CSV artifacts plus a JSON manifest echoing the fully
resolved configuration and seed, sufficient to re-run bit-exactly; the
manifest is the only place a timestamp appears, so repeated runs with
the same config and seed produce byte-identical CSVs.

Exit codes: 0 success, 1 verification failure, 2 config error,
3 non-convergence, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import annulus_oracle, barrier_check, convergence_study, \
    default_barrier_exponent, expansion_check, holder_modulus, moment_check
from .config import ExperimentConfig, load_config
from .errors import ConfigError, TugRobinError
from .field import load_field
from .game import greedy_strategy, pull_interior_ball_strategy, simulate_value
from .geometry import Ball, s_eps
from .operators import extremal_minus, extremal_plus
from .solver import solve_fixed_point

log = logging.getLogger("tugrobin")

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_RUNTIME = 4


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    if args.threads:
        import numba
        numba.set_num_threads(args.threads)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.master_seed = args.seed
        if args.out is not None:
            cfg.output_dir = args.out
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        return args.func(args, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TugRobinError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tugrobin",
        description="Tug-of-war-with-noise solver and simulator for Robin "
                    "boundary problems of the normalized p-Laplacian (1 < p < 2)")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="path to the JSON config")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--threads", type=int, default=0,
                        help="worker threads (0 = auto)")

    sp = sub.add_parser("solve", help="solve the fixed point on a grid")
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("simulate", help="Monte Carlo value estimation")
    common(sp)
    sp.add_argument("--point", action="append", required=True,
                    help="start point as comma-separated coordinates; repeatable")
    sp.add_argument("--strategy", choices=["greedy", "pull"], default="greedy")
    sp.add_argument("--field", help="u_eps.csv from a prior solve (greedy needs it)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("verify", help="run a verification suite")
    common(sp)
    sp.add_argument("--suite", required=True,
                    choices=["operator", "moments", "barrier", "extremal", "holder"])
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("convergence", help="solver error versus the radial oracle")
    common(sp)
    sp.set_defaults(func=cmd_convergence)
    return parser


def _write_manifest(path: Path, cfg: ExperimentConfig, command: str,
                    wall_time: float, extra: dict | None = None) -> None:
    doc = {
        "command": command,
        "config": cfg.resolved_dict(),
        "seed": cfg.master_seed,
        "wall_time_s": wall_time,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "version": __version__,
        "commit": "",
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- solve -----------------------------------------------------------------------


def cmd_solve(args, cfg: ExperimentConfig, out: Path) -> int:
    t0 = time.perf_counter()
    eps = cfg.all_eps()[0]
    params = cfg.params_for(eps)
    field, report = solve_fixed_point(
        cfg.G, params, cfg.domain, cfg.grid_for(eps), tol=cfg.tol,
        max_iter=cfg.max_iter, dirs=cfg.direction_count,
        degree=cfg.quadrature_degree)
    field.to_csv(out / "u_eps.csv")
    field.write_meta(out / "u_eps.meta.json")
    _write_manifest(out / "solve.meta.json", cfg, "solve",
                    time.perf_counter() - t0,
                    {"residual": report.residual,
                     "iterations": report.iterations,
                     "converged": report.converged})
    print(f"residual {report.residual:.6e} after {report.iterations} sweeps "
          f"({'converged' if report.converged else 'NOT converged'})")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


# -- simulate --------------------------------------------------------------------


def cmd_simulate(args, cfg: ExperimentConfig, out: Path) -> int:
    t0 = time.perf_counter()
    eps = cfg.all_eps()[0]
    params = cfg.params_for(eps)
    points = [np.array([float(c) for c in p.split(",")]) for p in args.point]
    for x in points:
        if x.size != cfg.domain.dim:
            raise ConfigError(f"--point {x} has wrong dimension")
        if cfg.domain.signed_dist(x) < 0:
            raise ConfigError(f"--point {x} lies outside the domain")
    if args.strategy == "greedy":
        if not args.field:
            raise ConfigError("greedy simulation needs --field from a prior solve")
        field = load_field(args.field, str(args.field).replace(".csv", ".meta.json"))
        sI = greedy_strategy(field, maximize=True)
        sII = greedy_strategy(field, maximize=False)
        params = field.params if field.params is not None else params
    else:
        sI = pull_interior_ball_strategy(cfg.domain, toward=False)
        sII = pull_interior_ball_strategy(cfg.domain, toward=True)
    rows = []
    for i, x in enumerate(points):
        mean, se, trunc = simulate_value(
            x, sI, sII, cfg.G, params, cfg.domain, cfg.n_traj, cfg.max_steps,
            cfg.master_seed + i)
        rows.append(list(x) + [mean, se, cfg.n_traj - trunc, trunc])
        print(f"point {x}: mean {mean:.6f} +/- {se:.6f} (truncated {trunc})")
    n = cfg.domain.dim
    _write_csv(out / "mc_values.csv",
               [f"x{i + 1}" for i in range(n)] + ["mean", "se", "n_eff", "truncated"],
               rows)
    _write_manifest(out / "mc_values.meta.json", cfg, "simulate",
                    time.perf_counter() - t0,
                    {"strategy": args.strategy, "field": args.field})
    return EXIT_OK


# -- verify ----------------------------------------------------------------------


def cmd_verify(args, cfg: ExperimentConfig, out: Path) -> int:
    t0 = time.perf_counter()
    suite = args.suite
    runner = {
        "operator": _verify_operator,
        "moments": _verify_moments,
        "barrier": _verify_barrier,
        "extremal": _verify_extremal,
        "holder": _verify_holder,
    }[suite]
    rows, header, checks = runner(cfg)
    _write_csv(out / f"verify_{suite}.csv", header, rows)
    n_pass = sum(ok for ok, _ in checks)
    for ok, label in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {label}")
    _write_manifest(out / f"verify_{suite}.meta.json", cfg, f"verify --suite {suite}",
                    time.perf_counter() - t0,
                    {"passed": n_pass, "total": len(checks)})
    print(f"{suite}: {n_pass}/{len(checks)} checks passed")
    return EXIT_OK if n_pass == len(checks) else EXIT_VERIFY_FAIL


def _verify_operator(cfg: ExperimentConfig):
    phi = lambda y: float(np.asarray(y)[0] ** 2 + 2.0 * np.asarray(y)[1] ** 2)
    x0 = np.array([1.0, 0.3])
    dom = Ball(np.zeros(2), 2.0)
    eps_list = cfg.all_eps() if len(cfg.all_eps()) >= 2 else [0.04, 0.02, 0.01]
    params = cfg.params_for(eps_list[0])
    rows = expansion_check(phi, x0, params, eps_list, dom=dom,
                           dirs=cfg.direction_count, degree=6)
    out_rows = [[r.eps, r.measured, r.target, r.error] for r in rows]
    checks = []
    for a, b in zip(rows, rows[1:]):
        ratio = b.error / a.error if a.error > 0 else 0.0
        checks.append((ratio <= 0.6,
                       f"expansion error ratio eps {a.eps}->{b.eps}: "
                       f"{ratio:.3f} <= 0.6"))
    return out_rows, ["eps", "measured", "target", "error"], checks


def _verify_moments(cfg: ExperimentConfig):
    eps = cfg.all_eps()[0]
    rows, checks = [], []
    for n in (2, 3):
        for d in (0.0, 0.25, 0.5, 0.75):
            rep = moment_check(d, eps, n)
            rows.append([n, d, eps, rep.first_rel_err, rep.second_abs_err,
                         rep.second_budget])
            checks.append((rep.first_rel_err <= 1e-3,
                           f"n={n} d={d}: first moment rel err "
                           f"{rep.first_rel_err:.2e} <= 1e-3"))
            checks.append((rep.second_abs_err <= 10 * rep.second_budget,
                           f"n={n} d={d}: second moment dev "
                           f"{rep.second_abs_err:.2e} <= 10 eps s_eps"))
    return rows, ["n", "d", "eps", "first_rel_err", "second_abs_err",
                  "budget_eps_s"], checks


def _verify_barrier(cfg: ExperimentConfig):
    if cfg.domain.kind not in ("annulus", "ball"):
        raise ConfigError("barrier suite needs a bounded domain")
    eps = cfg.all_eps()[0]
    rng = np.random.default_rng(cfg.master_seed)
    rows, checks = [], []
    n_cfg = 20
    for i in range(n_cfg):
        params = cfg.params_for(eps)
        q = default_barrier_exponent(params)
        x0 = _sample_collar_point(cfg.domain, eps, rng)
        m1 = barrier_check(x0, params, cfg.domain, q)
        params2 = cfg.params_for(eps / 2)
        m2 = barrier_check(x0, params2, cfg.domain, q)
        s1 = s_eps(x0, eps, cfg.domain) + eps ** 2
        s2 = s_eps(x0, eps / 2, cfg.domain) + (eps / 2) ** 2
        ratio = (m1 / s1) / (m2 / s2) if m2 > 0 else np.inf
        rows.append(list(x0) + [q, eps, m1, m2, ratio])
        checks.append((m1 > 0 and m2 > 0,
                       f"config {i}: margins positive ({m1:.2e}, {m2:.2e})"))
        checks.append((0.5 <= ratio <= 2.0,
                       f"config {i}: (s+eps^2)-scaled ratio {ratio:.2f} in [0.5, 2]"))
    n = cfg.domain.dim
    return rows, [f"x{i + 1}" for i in range(n)] + \
        ["q", "eps", "margin", "margin_half_eps", "scaled_ratio"], checks


def _sample_collar_point(dom, eps, rng):
    lo, hi = dom.bounding_box()
    for _ in range(10_000):
        x = lo + rng.random(dom.dim) * (hi - lo)
        d = dom.signed_dist(x)
        if 0 <= d < eps:
            return x
    raise ConfigError("could not sample a collar point")


def _solve_for_suite(cfg: ExperimentConfig):
    eps = cfg.all_eps()[0]
    params = cfg.params_for(eps)
    field, report = solve_fixed_point(
        cfg.G, params, cfg.domain, cfg.grid_for(eps), tol=cfg.tol,
        max_iter=cfg.max_iter, dirs=cfg.direction_count,
        degree=cfg.quadrature_degree)
    return field, report, params


def _verify_extremal(cfg: ExperimentConfig):
    field, report, params = _solve_for_suite(cfg)
    dom = cfg.domain
    nodes = field.masked_node_coords()
    sd = np.array([dom.dist_to_boundary(x) for x in nodes])
    inner = nodes[sd >= 2.0 * params.eps]
    rng = np.random.default_rng(cfg.master_seed)
    sel = inner[rng.choice(len(inner), min(500, len(inner)), replace=False)]
    norm = float(np.abs(field.values[field.mask]).max())
    slack = 1e-8 * norm
    rows, worst_plus, worst_minus = [], np.inf, -np.inf
    for x in sel:
        lp = extremal_plus(field, x, params, dirs=cfg.direction_count,
                           degree=cfg.quadrature_degree, dom=dom)
        lm = extremal_minus(field, x, params, dirs=cfg.direction_count,
                            degree=cfg.quadrature_degree, dom=dom)
        worst_plus = min(worst_plus, lp)
        worst_minus = max(worst_minus, lm)
        rows.append(list(x) + [lp, lm])
    checks = [
        (worst_plus >= -slack,
         f"min over {len(sel)} points of L+ u = {worst_plus:.3e} >= {-slack:.1e}"),
        (worst_minus <= slack,
         f"max over {len(sel)} points of L- u = {worst_minus:.3e} <= {slack:.1e}"),
        (report.converged, f"solver converged (residual {report.residual:.2e})"),
    ]
    n = cfg.domain.dim
    return rows, [f"x{i + 1}" for i in range(n)] + ["L_plus", "L_minus"], checks


def _verify_holder(cfg: ExperimentConfig):
    field, report, params = _solve_for_suite(cfg)
    rep = holder_modulus(field, cfg.domain, band_depth=4 * params.eps,
                         n_pairs=2000, max_sep=0.3,
                         master_seed=cfg.master_seed)
    rows = [[rep.pairs_sampled, rep.pairs_used, rep.exponent, rep.constant,
             rep.fit_residual, rep.degenerate]]
    checks = [
        (not rep.degenerate and rep.exponent >= 0.1,
         f"fitted near-boundary modulus exponent {rep.exponent:.3f} >= 0.1"),
        (report.converged, f"solver converged (residual {report.residual:.2e})"),
    ]
    return rows, ["pairs_sampled", "pairs_used", "exponent", "constant",
                  "fit_residual", "degenerate"], checks


# -- convergence -----------------------------------------------------------------


def cmd_convergence(args, cfg: ExperimentConfig, out: Path) -> int:
    t0 = time.perf_counter()
    eps_list = cfg.eps_list
    if len(eps_list) < 2:
        raise ConfigError("convergence needs eps_list with at least 2 entries")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("eps_list must be strictly decreasing")
    if cfg.domain.kind != "annulus":
        raise ConfigError("convergence runs on the annulus against the radial oracle")
    bd = cfg.raw["boundary_data"]
    if bd["kind"] == "constant":
        G0 = G1 = float(bd["value"])
    elif bd["kind"] == "radial_linear":
        G0, G1 = float(bd["inner"]), float(bd["outer"])
    else:
        raise ConfigError("convergence needs constant or radial_linear data")
    rows, fields, oracle = convergence_study(
        cfg.domain, cfg.p, cfg.gamma0, G0, G1, eps_list,
        grid_rule=cfg.grid_k if cfg.grid_rule == "eps_over_k" else 4.0,
        p0=cfg.p0, dirs=cfg.direction_count, degree=cfg.quadrature_degree,
        tol=cfg.tol, max_iter=cfg.max_iter)
    scale = float(np.abs([oracle.u(oracle.r_inner),
                          oracle.u(oracle.r_outer)]).max())
    ok = True
    for a, b in zip(rows, rows[1:]):
        slack = 2.0 * (b.grid ** 2 + 0.005 * scale)
        if b.sup_error > a.sup_error + slack:
            ok = False
    _write_csv(out / "convergence.csv",
               ["eps", "grid", "sup_error", "rel_error", "residual",
                "iterations", "converged"],
               [[r.eps, r.grid, r.sup_error, r.rel_error, r.residual,
                 r.iterations, r.converged] for r in rows])
    _write_manifest(out / "convergence.meta.json", cfg, "convergence",
                    time.perf_counter() - t0,
                    {"weakly_decreasing": ok})
    for r in rows:
        print(f"eps {r.eps}: sup error {r.sup_error:.5f} "
              f"(rel {r.rel_error:.4f}), {r.iterations} sweeps")
    print(f"weak decrease: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY_FAIL


if __name__ == "__main__":
    sys.exit(main())
