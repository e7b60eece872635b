"""Fixed-point solver: Jacobi sweeps of the absorbing step operator on a grid.

Each sweep applies u^{k+1}(node) = dpp_step(u^k, node) at every masked
node, reading the previous iterate only, so sweeps are pure functions of
the previous field and parallelize without any ordering ambiguity.

The sweep kernel splits nodes into two classes:

* interior nodes (dist >= eps): identical tug/ball offsets for every
  node, so one deduplicated integer stencil per direction serves all of
  them;
* collar nodes (dist < eps): the tug geometry scales with d'_x and the
  ball average is clipped by the domain, so bilinear weights are formed
  on the fly from small per-node data (scale, clip mask, absorption).

Convergence is driven entirely by boundary absorption; iteration counts
scale like eps^-2 / absorption, hence the large default max_iter.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .errors import ConfigError
from .field import ValueField
from .geometry import Domain, s_eps
from .operators import ScalarField, ball_quadrature, clipped_ball_points, \
    direction_set, dpp_step, lattice_ball_offsets, signed_dist_many, \
    _rot_dil_stack
from .params import GameParams

log = logging.getLogger(__name__)

_MASK_TOL = 1e-12


@dataclass
class SolveReport:
    iterations: int
    residual: float          # canonical sup-norm of T u - u over masked nodes
    converged: bool
    wall_time: float         # seconds
    tol: float
    kernel_residual: float   # last in-sweep residual estimate
    residual_history: list = None  # per-sweep kernel residuals


# -- lattice ------------------------------------------------------------------


def build_lattice(dom: Domain, spacing: float):
    """Node lattice covering the domain bounding box; returns (lo, shape, mask)."""
    if not dom.bounded:
        raise ConfigError("the solver supports bounded domains only")
    lo, hi = dom.bounding_box()
    counts = np.ceil((hi - lo) / spacing - 1e-9).astype(int) + 1
    shape = tuple(int(c) for c in counts)
    idx = np.indices(shape).reshape(len(shape), -1).T
    pts = lo + spacing * idx
    mask = (signed_dist_many(dom, pts) >= -_MASK_TOL).reshape(shape)
    return np.asarray(lo, dtype=float), shape, mask


# -- stencil construction ------------------------------------------------------


def _tug_tables(params: GameParams, spacing: float, dirs: int, degree: int):
    """Grid-unit tug offsets at d' = 1/2 and the interior ball offsets.

    The interior ball offsets are the lattice-adapted ones, which absorb
    the second-moment excess that bilinear gathering adds to every
    branch (see operators.lattice_ball_offsets)."""
    rule = ball_quadrature(params.n, degree)
    rd = _rot_dil_stack(params.n, dirs, params.a)
    dirset = direction_set(params.n, dirs)
    r_tug = 0.5 * params.Q * params.eps
    e_ax = 0.5 * params.Q * params.A * params.eps
    offs = r_tug * dirset[:, None, :] + e_ax * np.einsum("kij,qj->kqi", rd, rule.nodes)
    tug_tab = offs / spacing                      # (dirs, nq, n)
    ball_offs, qw, feasible = lattice_ball_offsets(params, spacing, dirs, degree)
    if not feasible:
        log.warning("lattice moment compensation infeasible at this grid; "
                    "the solved field carries an O((grid/eps)^2) bias")
    ball_tab = ball_offs / spacing                # (nq, n)
    return tug_tab, ball_tab, qw


def _dedup_stencil(tab: np.ndarray, qw: np.ndarray, strides: np.ndarray):
    """Integer-offset stencil for a fixed fractional offset table.

    Expands each offset into its 2^n multilinear corners, merges
    duplicate lattice offsets, and drops exact zeros (keeps reads in
    bounds at the lattice edge).
    """
    n = tab.shape[1]
    acc: dict[int, float] = {}
    for j in range(tab.shape[0]):
        base = np.floor(tab[j]).astype(np.int64)
        frac = tab[j] - base
        for corner in range(1 << n):
            w = qw[j]
            off = 0
            for d in range(n):
                if corner >> d & 1:
                    w *= frac[d]
                    off += (base[d] + 1) * strides[d]
                else:
                    w *= 1.0 - frac[d]
                    off += base[d] * strides[d]
            if w != 0.0:
                acc[off] = acc.get(off, 0.0) + w
    offs = np.array(sorted(acc.keys()), dtype=np.int64)
    wgts = np.array([acc[o] for o in offs])
    return offs, wgts


def build_stencils(dom: Domain, params: GameParams, lo, shape, mask,
                   spacing: float, dirs: int, degree: int, G: ScalarField):
    """All pre-sweep data: interior stencils and per-collar-node quantities."""
    n = len(shape)
    strides = np.array(np.zeros(shape).strides, dtype=np.int64) // 8
    tug_tab, ball_tab, qw = _tug_tables(params, spacing, dirs, degree)

    idx = np.argwhere(mask)
    pts = lo + spacing * idx.astype(float)
    dist = np.abs(signed_dist_many(dom, pts))
    flat = np.ravel_multi_index(idx.T, shape).astype(np.int64)

    interior = dist >= params.eps
    int_flat = flat[interior]
    run_start, run_len = _flat_runs(int_flat)

    tug_offs, tug_wgts, tug_ptr = [], [], [0]
    for k in range(dirs):
        o, w = _dedup_stencil(tug_tab[k], qw, strides)
        tug_offs.append(o)
        tug_wgts.append(w)
        tug_ptr.append(tug_ptr[-1] + len(o))
    ball_off, ball_w = _dedup_stencil(ball_tab, qw, strides)

    col = ~interior
    col_flat = flat[col]
    col_midx = idx[col].astype(np.int64)
    col_pts = pts[col]
    col_dist = dist[col]
    col_scale = 2.0 * np.minimum(0.5, col_dist / params.eps)
    col_wabs = np.array([params.gamma * s_eps(p, params.eps, dom)
                         for p in col_pts])
    if np.any(col_wabs > 1.0):
        raise ConfigError("absorption weight exceeds 1; reduce gamma0 or eps")
    col_g = eval_scalar_many(G, col_pts) if len(col_pts) else np.zeros(0)

    # precomputed multilinear gathers for the collar nodes
    nq = ball_tab.shape[0]
    ncorner = 1 << n
    gather_entries = col_flat.size * dirs * nq * ncorner
    if gather_entries > 1.2e8:
        raise ConfigError(
            "collar stencil memory exceeds budget; reduce the direction count "
            "or quadrature degree, or coarsen the grid")
    shp = np.array(shape, dtype=np.int64)
    if col_flat.size:
        gpos = (col_midx[:, None, None, :].astype(float)
                + col_scale[:, None, None, None] * tug_tab[None, :, :, :])
        col_gidx, col_gw = _corner_gathers(gpos, qw, shp, strides)
        # clipped-ball rule per collar node: flat boundary clip along the
        # outward normal so the rule drift matches -s_eps(x) n exactly
        clip_pts, clip_ws = [], []
        for pt in col_pts:
            cpts, cw = clipped_ball_points(pt, params.eps, dom, degree)
            clip_pts.append(cpts)
            clip_ws.append(cw)
        clip_pts = np.stack(clip_pts)
        clip_ws = np.stack(clip_ws)
        nclip = clip_pts.shape[1]
        gpos_b = (clip_pts - lo[None, None, :]) / spacing
        col_bidx, col_bw = _corner_gathers(gpos_b, np.ones(nclip), shp, strides)
        col_bw = (col_bw.reshape(len(col_pts), nclip, ncorner)
                  * clip_ws[:, :, None]).reshape(len(col_pts), -1)
        col_ball_wsum = np.ones(col_flat.size)
    else:
        col_gidx = np.zeros((0, dirs, nq * ncorner), dtype=np.int64)
        col_gw = np.zeros((0, dirs, nq * ncorner))
        col_bidx = np.zeros((0, 1), dtype=np.int64)
        col_bw = np.zeros((0, 1))
        col_ball_wsum = np.zeros(0)

    max_len = int(run_len.max()) if run_len.size else 1
    return {
        "col_gidx": col_gidx, "col_gw": col_gw,
        "col_bidx": col_bidx, "col_bw": col_bw,
        "strides": strides,
        "shape_arr": shp,
        "tug_tab": tug_tab, "ball_tab": ball_tab, "qw": qw,
        "int_flat": int_flat,
        "run_start": run_start, "run_len": run_len,
        "scratch": np.empty((3, max(run_start.size, 1), max_len)),
        "tug_ptr": np.array(tug_ptr, dtype=np.int64),
        "tug_off": np.concatenate(tug_offs) if tug_offs else np.zeros(0, np.int64),
        "tug_w": np.concatenate(tug_wgts) if tug_wgts else np.zeros(0),
        "ball_off": ball_off, "ball_w": ball_w,
        "col_flat": col_flat, "col_midx": col_midx,
        "col_scale": col_scale, "col_wabs": col_wabs, "col_g": col_g,
        "col_ball_wsum": col_ball_wsum,
        "masked_flat": flat,
    }


def _corner_gathers(gpos: np.ndarray, qw: np.ndarray, shape_arr: np.ndarray,
                    strides: np.ndarray):
    """Flat indices and weights of the 2^n multilinear corners for grid
    positions gpos (..., nq, n); weights already include the rule weights."""
    *lead, nq, n = gpos.shape
    base = np.floor(gpos).astype(np.int64)
    base = np.minimum(base, shape_arr - 2)
    base = np.maximum(base, 0)
    frac = np.clip(gpos - base, 0.0, 1.0)
    ncorner = 1 << n
    idx = np.empty((*lead, nq, ncorner), dtype=np.int64)
    wgt = np.empty((*lead, nq, ncorner))
    for corner in range(ncorner):
        w = np.ones(gpos.shape[:-1])
        flat = np.zeros(gpos.shape[:-1], dtype=np.int64)
        for d in range(n):
            bit = corner >> d & 1
            w = w * (frac[..., d] if bit else 1.0 - frac[..., d])
            flat = flat + (base[..., d] + bit) * strides[d]
        idx[..., corner] = flat
        wgt[..., corner] = w * qw.reshape((1,) * len(lead) + (nq,))
    return idx.reshape(*lead, nq * ncorner), wgt.reshape(*lead, nq * ncorner)


def _flat_runs(int_flat: np.ndarray, cap: int = 1024):
    """Split sorted flat indices into contiguous runs (capped length)."""
    if int_flat.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    breaks = np.flatnonzero(np.diff(int_flat) != 1)
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks + 1, [int_flat.size]])
    run_start, run_len = [], []
    for s, e in zip(starts, ends):
        pos = s
        while pos < e:
            ln = min(cap, e - pos)
            run_start.append(int_flat[pos])
            run_len.append(ln)
            pos += ln
    return np.array(run_start, dtype=np.int64), np.array(run_len, dtype=np.int64)


def eval_scalar_many(G, pts: np.ndarray) -> np.ndarray:
    """Evaluate a scalar callable at many points, vectorized when possible."""
    if hasattr(G, "evaluate_many"):
        return np.asarray(G.evaluate_many(pts), dtype=float)
    try:
        out = np.asarray(G(pts), dtype=float)
        if out.shape == (len(pts),):
            return out
    except Exception:
        pass
    return np.array([float(G(p)) for p in pts])


# -- the sweep kernel ----------------------------------------------------------


@njit(parallel=True, fastmath=True, cache=True)
def _sweep_kernel(veff, out, alpha, ndirs,
              run_start, run_len, scratch,
              tug_ptr, tug_off, tug_w, ball_off, ball_w,
              col_flat, col_scale, col_wabs, col_g, col_ball_wsum,
              col_gidx, col_gw, col_bidx, col_bw):
    """One Jacobi sweep: interior nodes as contiguous runs (vector-friendly
    accumulation), collar nodes as precomputed multilinear gathers."""
    for rr in prange(run_start.size):
        s = run_start[rr]
        L = run_len[rr]
        acc = scratch[0, rr]
        best = scratch[1, rr]
        worst = scratch[2, rr]
        for j in range(L):
            best[j] = -1e300
            worst[j] = 1e300
        for k in range(ndirs):
            for j in range(L):
                acc[j] = 0.0
            for t in range(tug_ptr[k], tug_ptr[k + 1]):
                off = tug_off[t]
                w = tug_w[t]
                for j in range(L):
                    acc[j] += w * veff[s + off + j]
            for j in range(L):
                a = acc[j]
                if a > best[j]:
                    best[j] = a
                if a < worst[j]:
                    worst[j] = a
        for j in range(L):
            acc[j] = 0.0
        for t in range(ball_off.size):
            off = ball_off[t]
            w = ball_w[t]
            for j in range(L):
                acc[j] += w * veff[s + off + j]
        for j in range(L):
            out[s + j] = 0.5 * alpha * (best[j] + worst[j]) \
                + (1.0 - alpha) * acc[j]

    ntap = col_gidx.shape[2]
    nbtap = col_bidx.shape[1]
    for ii in prange(col_flat.size):
        base = col_flat[ii]
        if col_scale[ii] <= 0.0:
            tug_part = veff[base]
        else:
            best = -1e300
            worst = 1e300
            for k in range(ndirs):
                sacc = 0.0
                for t in range(ntap):
                    sacc += col_gw[ii, k, t] * veff[col_gidx[ii, k, t]]
                if sacc > best:
                    best = sacc
                if sacc < worst:
                    worst = sacc
            tug_part = 0.5 * (best + worst)
        bsum = 0.0
        for t in range(nbtap):
            bsum += col_bw[ii, t] * veff[col_bidx[ii, t]]
        ball_part = bsum / col_ball_wsum[ii]
        mixed = alpha * tug_part + (1.0 - alpha) * ball_part
        w_abs = col_wabs[ii]
        out[base] = (1.0 - w_abs) * mixed + w_abs * col_g[ii]


# -- driver --------------------------------------------------------------------


def default_tolerance(G, dom: Domain, lo, spacing, mask) -> float:
    idx = np.argwhere(mask)
    pts = lo + spacing * idx.astype(float)
    g = eval_scalar_many(G, pts)
    return 1e-6 * (float(g.max()) - float(g.min()) + 1.0)


def initial_field(G: ScalarField, dom: Domain, lo, spacing, shape, mask,
                  boundary_samples: int = 512) -> np.ndarray:
    """Default start iterate: G at the boundary projection of each node.

    Nodes whose projection is ambiguous (annulus mid-radius, centers)
    get the mean of G over boundary samples instead.
    """
    values = np.zeros(shape)
    idx = np.argwhere(mask)
    pts = lo + spacing * idx.astype(float)
    proj, ok = _project_many(dom, pts)
    vals = np.empty(len(pts))
    if ok.any():
        vals[ok] = eval_scalar_many(G, proj[ok])
    if (~ok).any():
        bpts, bw = _boundary_samples(dom, boundary_samples)
        gb = eval_scalar_many(G, bpts)
        vals[~ok] = float(np.dot(bw, gb))
    values[tuple(idx.T)] = vals
    return values


def _project_many(dom: Domain, pts: np.ndarray):
    """Vectorized boundary projection; ok=False where not unique."""
    if dom.kind == "strip":
        proj = pts.copy()
        proj[:, -1] = dom.height
        return proj, np.ones(len(pts), dtype=bool)
    v = pts - dom.center
    r = np.linalg.norm(v, axis=1)
    ok = r > 1e-12
    safe_r = np.where(ok, r, 1.0)
    if dom.kind == "ball":
        proj = dom.center + (dom.radius / safe_r)[:, None] * v
        return proj, ok
    mid = 0.5 * (dom.r_inner + dom.r_outer)
    ok &= np.abs(r - mid) > 1e-12
    target = np.where(r < mid, dom.r_inner, dom.r_outer)
    proj = dom.center + (target / safe_r)[:, None] * v
    return proj, ok


def _boundary_samples(dom: Domain, m: int):
    """Boundary points with surface-measure weights (n = 2 or 3)."""
    n = dom.dim
    comps = []
    if dom.kind == "ball":
        comps = [(dom.center, dom.radius)]
    elif dom.kind == "annulus":
        comps = [(dom.center, dom.r_inner), (dom.center, dom.r_outer)]
    else:
        raise ConfigError("boundary sampling needs a bounded domain")
    pts, wts = [], []
    for center, radius in comps:
        if n == 2:
            ang = 2 * math.pi * np.arange(m) / m
            sphere = np.column_stack([np.cos(ang), np.sin(ang)])
        else:
            sphere = direction_set(n, m + (m % 2))
        pts.append(center + radius * sphere)
        wts.append(np.full(len(sphere), radius ** (n - 1) / len(sphere)))
    pts = np.concatenate(pts)
    wts = np.concatenate(wts)
    return pts, wts / wts.sum()


def solve_fixed_point(G: ScalarField, params: GameParams, dom: Domain,
                      grid: float, tol: float | None = None,
                      max_iter: int = 200_000, *, dirs: int = 64,
                      degree: int = 4, u0: ValueField | None = None,
                      log_every: int = 1000,
                      skip_final_residual: bool = False):
    """Iterate Jacobi sweeps of the step operator until the sup residual
    drops below tol; returns (ValueField, SolveReport).

    The start iterate is G at the boundary projection of each node
    unless an explicit u0 field is supplied (it is interpolated onto the
    lattice).  The reported residual is re-measured through the scalar
    dpp_step path after the iteration stops, so it matches any post-hoc
    measurement bit for bit.
    """
    if dom.kind == "strip":
        raise ConfigError("the solver rejects the unbounded strip domain")
    if grid > params.eps / 2 + 1e-12:
        raise ConfigError(f"grid spacing {grid} must be <= eps/2 = {params.eps / 2}")
    t0 = time.perf_counter()
    lo, shape, mask = build_lattice(dom, grid)
    if tol is None:
        tol = default_tolerance(G, dom, lo, grid, mask)
    if u0 is None:
        values = initial_field(G, dom, lo, grid, shape, mask)
    else:
        values = np.zeros(shape)
        idx = np.argwhere(mask)
        pts = lo + grid * idx.astype(float)
        values[tuple(idx.T)] = u0.evaluate_many(pts, check_domain=False)

    st = build_stencils(dom, params, lo, shape, mask, grid, dirs, degree, G)
    field = ValueField(lo=lo, spacing=grid, values=values, mask=mask,
                       domain=dom, params=params,
                       meta={"dirs": dirs, "degree": degree})

    v = values.reshape(-1).copy()
    out = v.copy()
    mflat = st["masked_flat"]
    kernel_res = math.inf
    history = []
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        veff = field.extend_flat(v)
        _sweep_kernel(veff, out, params.alpha, dirs,
                      st["run_start"], st["run_len"], st["scratch"],
                      st["tug_ptr"], st["tug_off"], st["tug_w"],
                      st["ball_off"], st["ball_w"],
                      st["col_flat"], st["col_scale"],
                      st["col_wabs"], st["col_g"], st["col_ball_wsum"],
                      st["col_gidx"], st["col_gw"],
                      st["col_bidx"], st["col_bw"])
        kernel_res = float(np.max(np.abs(out[mflat] - v[mflat])))
        history.append(kernel_res)
        v, out = out, v
        if log_every and it % log_every == 0:
            log.info("sweep %d: residual %.3e (tol %.3e)", it, kernel_res, tol)
        if kernel_res <= 0.999 * tol:
            converged = True
            break

    field.values = v.reshape(shape)
    field.invalidate()
    if skip_final_residual:
        final_res = kernel_res
    else:
        final_res = residual(field, G, params, dom, dirs=dirs, degree=degree)
        if converged and final_res > tol:
            converged = False  # kernel estimate was optimistic; report honestly
    report = SolveReport(iterations=it, residual=final_res, converged=converged,
                         wall_time=time.perf_counter() - t0, tol=tol,
                         kernel_residual=kernel_res, residual_history=history)
    field.meta.update({"residual": final_res, "iterations": it,
                       "converged": converged, "tol": tol})
    if not converged:
        log.warning("not converged after %d sweeps: residual %.3e > tol %.3e",
                    it, final_res, tol)
    return field, report


def residual(field: ValueField, G: ScalarField, params: GameParams,
             dom: Domain, dirs: int | None = None,
             degree: int | None = None) -> float:
    """Sup over masked nodes of |dpp_step(field, node) - field(node)|.

    Evaluates the same scalar dpp_step used everywhere else, so a
    per-node comparison against any other caller is exact.
    """
    dirs = dirs if dirs is not None else field.meta.get("dirs", 64)
    degree = degree if degree is not None else field.meta.get("degree", 4)
    nodes = field.masked_node_coords()
    vals = field.values[field.mask]
    worst = 0.0
    for x, ux in zip(nodes, vals):
        r = abs(dpp_step(field, x, G, params, dom, dirs, degree) - float(ux))
        if r > worst:
            worst = r
    return worst
