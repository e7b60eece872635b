"""Discretized value function on a regular lattice over the domain.

Interpolation is multilinear.  Cells straddling the boundary may have
lattice vertices outside the domain mask; such vertices borrow the value
of their nearest masked-in node (collar extension), which keeps every
interpolated value inside the range of the stored ones, so the
maximum-principle bounds survive interpolation.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import OutsideField
from .geometry import Annulus, Ball, Domain, Strip
from .params import GameParams

_BOX_TOL = 1e-9


@dataclass
class ValueField:
    lo: np.ndarray            # lower corner of the bounding box
    spacing: float            # lattice spacing (same in every axis)
    values: np.ndarray        # nd array of node values
    mask: np.ndarray          # nd bool array: node lies in the closed domain
    domain: Domain | None = None
    params: GameParams | None = None
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape:
            raise ValueError("values and mask shapes differ")
        self._filled = None
        self._donor_flat = None

    # -- lattice bookkeeping -------------------------------------------------

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self):
        return self.values.shape

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.spacing * (np.array(self.shape) - 1)

    def node_coords(self, index) -> np.ndarray:
        return self.lo + self.spacing * np.asarray(index, dtype=float)

    def masked_node_coords(self) -> np.ndarray:
        """(m, n) coordinates of all masked-in nodes, row-major order."""
        idx = np.argwhere(self.mask)
        return self.lo + self.spacing * idx.astype(float)

    def extension_stencil(self):
        """Arrays (out_flat, d1_flat, d2_flat, coef) defining the collar
        extension of masked-out lattice nodes.

        d1 is the nearest masked-in node; d2 one further step inward along
        the quantized donor direction; the extended value is
        u(d1) + coef * (u(d1) - u(d2)), a first-order continuation along
        the boundary normal.  A zeroth-order (nearest-value) extension
        would leave an O(h |Du|) kink in every boundary cell, which the
        step operator amplifies into a solution bias that does not decay
        with eps; the linear continuation restores second-order accuracy
        there.  coef = 0 wherever no second node is available.
        """
        if self._donor_flat is None:
            shape = self.shape
            if self.mask.all():
                self._donor_flat = (np.zeros(0, np.int64),) * 3 + (np.zeros(0),)
            else:
                ind = distance_transform_edt(~self.mask, return_distances=False,
                                             return_indices=True)
                out = ~self.mask
                oi = np.argwhere(out)
                d1 = np.stack([ind[d][out] for d in range(self.dim)], axis=1)
                v = oi - d1
                s = np.sign(v).astype(np.int64)
                d2 = np.clip(d1 - s, 0, np.array(shape) - 1)
                ok = self.mask[tuple(d2.T)]
                ss = (s * s).sum(axis=1)
                coef = np.where(ok & (ss > 0),
                                (v * s).sum(axis=1) / np.maximum(ss, 1), 0.0)
                self._donor_flat = (
                    np.ravel_multi_index(tuple(oi.T), shape),
                    np.ravel_multi_index(tuple(d1.T), shape),
                    np.ravel_multi_index(tuple(d2.T), shape),
                    coef,
                )
        return self._donor_flat

    def extend_flat(self, vflat: np.ndarray) -> np.ndarray:
        """Flat lattice values with masked-out entries linearly extended."""
        out_f, d1_f, d2_f, coef = self.extension_stencil()
        ext = vflat.copy()
        if out_f.size:
            ext[out_f] = vflat[d1_f] + coef * (vflat[d1_f] - vflat[d2_f])
        return ext

    def filled_values(self) -> np.ndarray:
        """Node values with masked-out nodes filled by the collar extension."""
        if self._filled is None:
            self._filled = self.extend_flat(self.values.reshape(-1)) \
                .reshape(self.shape)
        return self._filled

    def invalidate(self) -> None:
        """Drop caches after mutating `values` in place."""
        self._filled = None

    # -- evaluation ----------------------------------------------------------

    def evaluate(self, x) -> float:
        return float(self.evaluate_many(np.asarray(x, dtype=float)[None, :])[0])

    def __call__(self, x) -> float:
        return self.evaluate(x)

    def evaluate_many(self, pts: np.ndarray, check_domain: bool = True) -> np.ndarray:
        """Multilinear interpolation at an (m, n) array of points."""
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        box_tol = _BOX_TOL * max(self.spacing, 1.0)
        lo, hi = self.lo, self.hi
        if np.any(pts < lo - box_tol) or np.any(pts > hi + box_tol):
            raise OutsideField("point outside the field bounding box")
        if check_domain and self.domain is not None:
            tol = 1e-9 * (self.params.eps if self.params is not None
                          else self.spacing)
            sd = _signed_dist_many(self.domain, pts)
            if np.any(sd < -tol):
                raise OutsideField("point outside the domain")
        g = (np.clip(pts, lo, hi) - lo) / self.spacing
        base = np.minimum(g.astype(np.int64), np.array(self.shape) - 2)
        base = np.maximum(base, 0)
        frac = np.clip(g - base, 0.0, 1.0)
        vals = self.filled_values()
        out = np.zeros(len(pts))
        for corner in itertools.product((0, 1), repeat=self.dim):
            w = np.ones(len(pts))
            for ax, c in enumerate(corner):
                w *= frac[:, ax] if c else 1.0 - frac[:, ax]
            idx = tuple(base[:, ax] + corner[ax] for ax in range(self.dim))
            out += w * vals[idx]
        return out

    # -- serialization -------------------------------------------------------

    def to_csv(self, path) -> None:
        """One node per row: x1,...,xn,value,mask (row-major node order)."""
        n = self.dim
        header = ",".join([f"x{i + 1}" for i in range(n)] + ["value", "mask"])
        idx = np.indices(self.shape).reshape(n, -1).T
        coords = self.lo + self.spacing * idx
        vals = self.values.reshape(-1)
        msk = self.mask.reshape(-1).astype(int)
        with open(path, "w") as f:
            f.write(header + "\n")
            for row in range(len(vals)):
                cols = [repr(float(c)) for c in coords[row]]
                f.write(",".join(cols + [repr(float(vals[row])), str(msk[row])]) + "\n")

    def meta_dict(self) -> dict:
        out = {
            "bounding_box": [self.lo.tolist(), self.hi.tolist()],
            "spacing": self.spacing,
            "shape": list(self.shape),
        }
        if self.domain is not None:
            out["domain"] = domain_to_dict(self.domain)
        if self.params is not None:
            out["params"] = params_to_dict(self.params)
        out.update(self.meta)
        return out

    def write_meta(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.meta_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def _signed_dist_many(dom: Domain, pts: np.ndarray) -> np.ndarray:
    # local copy to avoid an import cycle with operators
    if dom.kind == "ball":
        return dom.radius - np.linalg.norm(pts - dom.center, axis=1)
    if dom.kind == "annulus":
        r = np.linalg.norm(pts - dom.center, axis=1)
        return np.minimum(r - dom.r_inner, dom.r_outer - r)
    if dom.kind == "strip":
        return dom.height - pts[:, -1]
    return np.array([dom.signed_dist(p) for p in pts])


def domain_to_dict(dom: Domain) -> dict:
    if dom.kind == "ball":
        return {"kind": "ball", "center": dom.center.tolist(), "radius": dom.radius}
    if dom.kind == "annulus":
        return {"kind": "annulus", "center": dom.center.tolist(),
                "r_inner": dom.r_inner, "r_outer": dom.r_outer}
    if dom.kind == "strip":
        return {"kind": "strip", "dim": dom.dim, "height": dom.height}
    raise ValueError(f"unknown domain kind {dom.kind}")


def domain_from_dict(d: dict) -> Domain:
    kind = d["kind"]
    if kind == "ball":
        return Ball(np.asarray(d["center"], dtype=float), float(d["radius"]))
    if kind == "annulus":
        return Annulus(np.asarray(d["center"], dtype=float),
                       float(d["r_inner"]), float(d["r_outer"]))
    if kind == "strip":
        return Strip(int(d["dim"]), float(d.get("height", 0.0)))
    raise ValueError(f"unknown domain kind {kind}")


def params_to_dict(p: GameParams) -> dict:
    return {"n": p.n, "p": p.p, "p0": p.p0, "gamma0": p.gamma0, "A": p.A,
            "a": p.a, "Q": p.Q, "alpha": p.alpha, "gamma": p.gamma, "eps": p.eps}


def params_from_dict(d: dict) -> GameParams:
    return GameParams(n=int(d["n"]), p=d["p"], p0=d["p0"], gamma0=d["gamma0"],
                      A=d["A"], a=d["a"], Q=d["Q"], alpha=d["alpha"],
                      gamma=d["gamma"], eps=d["eps"])


def load_field(csv_path, meta_path) -> ValueField:
    """Rebuild a ValueField from its CSV dump and JSON sidecar."""
    with open(meta_path) as f:
        meta = json.load(f)
    shape = tuple(meta["shape"])
    lo = np.asarray(meta["bounding_box"][0], dtype=float)
    data = np.genfromtxt(csv_path, delimiter=",", names=True)
    values = np.asarray(data["value"], dtype=float).reshape(shape)
    mask = np.asarray(data["mask"], dtype=float).reshape(shape) > 0.5
    dom = domain_from_dict(meta["domain"]) if "domain" in meta else None
    params = params_from_dict(meta["params"]) if "params" in meta else None
    extra = {k: v for k, v in meta.items()
             if k not in ("bounding_box", "spacing", "shape", "domain", "params")}
    return ValueField(lo=lo, spacing=float(meta["spacing"]), values=values,
                      mask=mask, domain=dom, params=params, meta=extra)
