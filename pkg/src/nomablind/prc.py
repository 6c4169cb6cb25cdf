"""Pilot reuse-based classification.

The second of two consecutive pilots is turned by a mode-specific angle.
The receiver estimates that angle from the pair, looks up which arc of the
circle it falls in (OMA or one of the far-order regions), picks the
nearest mode angle inside that region, and finally runs a pilot-residual
test to decide whether SIC is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import _kernels
from .channel import ChannelRealization
from .mlc import BatchDecisions
from .modset import ModeTable, base_constellation, composite_constellation

TWO_PI = 2 * np.pi
OMA_REGION = "oma"
_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class Arc:
    """Half-open arc [start, stop) with 0 <= start < stop <= 2*pi."""

    start: float
    stop: float

    def contains(self, phi):
        return (phi >= self.start) & (phi < self.stop)

    @property
    def width(self) -> float:
        return self.stop - self.start


def _arcs(start: float, stop: float) -> tuple[Arc, ...]:
    """Arc from ``start`` counter-clockwise to ``stop``, split at the 0/2pi seam.

    Both ends are reduced mod 2pi on their own so that neighbouring arcs
    built from the same boundary value meet exactly.
    """
    s = start % TWO_PI
    e = stop % TWO_PI
    if s == e:
        return ()
    if e == 0.0:
        return (Arc(s, TWO_PI),)
    if s < e:
        return (Arc(s, e),)
    return (Arc(s, TWO_PI), Arc(0.0, e))


def _merge(arcs) -> tuple[Arc, ...]:
    out: list[Arc] = []
    for a in sorted(arcs, key=lambda a: a.start):
        if out and abs(out[-1].stop - a.start) < 1e-12:
            out[-1] = Arc(out[-1].start, a.stop)
        else:
            out.append(a)
    return tuple(out)


@dataclass(frozen=True)
class PhasePlan:
    """Pilot rotations per mode plus the arcs that decide each outcome.

    ``regions`` maps ``"oma"`` and every far-UT order to its arcs;
    ``cells`` maps each mode id to the sub-arcs that decide it.
    """

    phis: tuple[float, ...]
    regions: Mapping[object, tuple[Arc, ...]]
    cells: Mapping[int, tuple[Arc, ...]]
    rule: str = "uniform"
    weights: Mapping[object, float] | None = field(default=None, compare=False)

    def region_of(self, phi: float):
        phi = float(wrap_angle(phi))
        for key, arcs in self.regions.items():
            if any(a.contains(phi) for a in arcs):
                return key
        raise AssertionError(f"phase plan regions do not cover {phi}")

    def cell_of(self, phi: float) -> int:
        phi = float(wrap_angle(phi))
        for l, arcs in self.cells.items():
            if any(a.contains(phi) for a in arcs):
                return l
        raise AssertionError(f"phase plan cells do not cover {phi}")

    def region_width(self, key) -> float:
        return sum(a.width for a in self.regions.get(key, ()))

    def apply(self, table: ModeTable) -> ModeTable:
        """Copy of ``table`` whose pilots carry this plan's rotations."""
        return table.with_phis(self.phis)

    def to_config(self) -> dict:
        cfg: dict = {"rule": self.rule}
        if self.weights is not None:
            cfg["weights"] = {str(k): float(v) for k, v in self.weights.items()}
        return cfg


def _voronoi_cells(lo: float, hi: float, ids, phis) -> dict[int, tuple[Arc, ...]]:
    """Split [lo, hi) at midpoints between consecutive mode angles (nearest-angle rule)."""
    bounds = [lo] + [(phis[a] + phis[b]) / 2 for a, b in zip(ids, ids[1:])] + [hi]
    return {l: _arcs(bounds[i], bounds[i + 1]) for i, l in enumerate(ids)}


def assign_uniform(table: ModeTable) -> PhasePlan:
    """phi_l = 2 pi l / (L+1); mode l decided on the arc of width 2 pi/(L+1) centred on phi_l."""
    L = table.L
    if L < 1:
        raise ValueError("need at least one NOMA mode")
    step = TWO_PI / (L + 1)
    phis = tuple(step * l for l in range(L + 1))
    edges = [step * (l + 0.5) for l in range(L + 1)]   # upper edge of cell l
    cells = {l: _arcs(edges[l - 1], edges[l]) for l in range(L + 1)}
    regions: dict[object, tuple[Arc, ...]] = {OMA_REGION: cells[0]}
    for order, ids in table.grouping.items():
        regions[order] = _merge(a for l in ids for a in cells[l])
    return PhasePlan(phis, regions, cells, "uniform")


def default_weights(table: ModeTable) -> dict[object, float]:
    """Equal arcs for OMA and every far order that has modes."""
    keys = [OMA_REGION, *table.grouping]
    return {k: TWO_PI / len(keys) for k in keys}


def assign_nonuniform(table: ModeTable, region_weights: Mapping[object, float] | None = None) -> PhasePlan:
    """OMA arc centred on 0, then one arc per far order counter-clockwise.

    Inside a far-order arc [lo, hi) holding L_i modes the rotations are
    lo + k (hi - lo) / L_i. ``region_weights`` are arc widths in radians
    keyed by ``"oma"`` and far order; they must cover the circle.
    """
    if table.L < 1:
        raise ValueError("need at least one NOMA mode")
    w = dict(default_weights(table) if region_weights is None else region_weights)
    w = {(k if k == OMA_REGION else int(k)): float(v) for k, v in w.items()}
    needed = {OMA_REGION, *table.grouping}
    extra = {k for k, v in w.items() if k not in needed and v != 0.0}
    if extra:
        raise ValueError(f"weights given for far orders with no modes: {sorted(map(str, extra))}")
    missing = needed - set(w)
    if missing or any(w[k] <= 0 for k in needed):
        raise ValueError("every non-empty region needs a positive weight")
    total = sum(w[k] for k in needed)
    if abs(total - TWO_PI) > _WEIGHT_TOL:
        raise ValueError(f"region weights sum to {total}, they must cover the circle (2*pi)")

    half = w[OMA_REGION] / 2
    phis = [0.0] * (table.L + 1)
    regions: dict[object, tuple[Arc, ...]] = {OMA_REGION: _arcs(-half, half)}
    cells: dict[int, tuple[Arc, ...]] = {0: regions[OMA_REGION]}
    lo = half
    last = list(table.grouping)[-1]
    for order, ids in table.grouping.items():
        hi = -half if order == last else lo + w[order]
        step = w[order] / len(ids)
        unwrapped = {l: lo + k * step for k, l in enumerate(ids)}
        for l, p in unwrapped.items():
            phis[l] = p % TWO_PI
        regions[order] = _arcs(lo, hi)
        cells.update(_voronoi_cells(lo, hi, ids, unwrapped))
        lo = hi
    return PhasePlan(tuple(phis), regions, cells, "nonuniform", {k: w[k] for k in needed})


def estimate_rotation(r_u, r_r):
    """Angle of conj(r_u) * r_r folded into [0, 2pi). Works elementwise on arrays."""
    r_u = np.asarray(r_u, dtype=np.complex128)
    if np.any(r_u == 0):
        raise ValueError("degenerate pilot: r_u = 0")
    phi = wrap_angle(np.angle(np.conj(r_u) * np.asarray(r_r)))
    return float(phi) if phi.ndim == 0 else phi


def wrap_angle(phi):
    """Reduce to [0, 2pi); tiny negative inputs would otherwise land on 2pi itself."""
    phi = np.mod(phi, TWO_PI)
    return np.where(phi >= TWO_PI, 0.0, phi)


def circular_distance(a, b):
    d = np.abs(np.mod(np.asarray(a) - np.asarray(b), TWO_PI))
    return np.minimum(d, TWO_PI - d)


def classify_prc_batch(phi_hat, plan: PhasePlan, table: ModeTable):
    """Nearest mode angle inside the far-order region, via the half-open cells.

    The cells are the per-region Voronoi cells of the mode angles, so a
    lookup there resolves ties at cell edges the same way as region edges.
    Returns (noma, mode).
    """
    phi = wrap_angle(np.atleast_1d(np.asarray(phi_hat, dtype=float)))
    mode = np.full(phi.shape, -1, dtype=np.int64)
    for l, arcs in plan.cells.items():
        for a in arcs:
            mode[a.contains(phi)] = l
    if np.any(mode < 0):
        raise AssertionError("phase plan cells do not cover the circle")
    return mode > 0, mode


def classify_prc(phi_hat: float, plan: PhasePlan, table: ModeTable) -> tuple[str, int]:
    noma, mode = classify_prc_batch([phi_hat], plan, table)
    return ("NOMA" if noma[0] else "OMA"), int(mode[0])


def derotate_pilot(r_r, l_hat, table: ModeTable):
    """Undo the tabulated rotation of the decided mode (not the estimate)."""
    phis = np.asarray(table.phis)
    return np.asarray(r_r) * np.exp(-1j * phis[np.asarray(l_hat)])


def near_far_prc_batch(y, modes, h_est, p0, table: ModeTable) -> np.ndarray:
    """Pilot-residual test, vectorised; returns True for a near decision.

    a_f = y - h sqrt(Pf) p0,  Delta_f = min_{q in chi_l}   |a_f - h sqrt(Pn) q|
    a_n = y - h sqrt(Pn) p0,  Delta_n = min_{q in chi^f}   |a_n - h sqrt(Pf) q|
    with chi^f the unit-power far constellation, near iff Delta_f >= Delta_n.
    """
    y = np.atleast_1d(np.asarray(y, dtype=np.complex128))
    modes = np.broadcast_to(np.asarray(modes), y.shape)
    h = np.broadcast_to(np.asarray(h_est, dtype=np.complex128), y.shape)
    p0 = np.broadcast_to(np.asarray(p0, dtype=np.complex128), y.shape)
    if np.any(modes < 1):
        raise ValueError("near/far undefined for OMA")
    near = np.zeros(y.shape, dtype=bool)
    for l in np.unique(modes):
        m = table[int(l)]
        rows = modes == l
        sf, sn = np.sqrt(m.power_far), np.sqrt(m.power_near)
        a_f = y[rows] - h[rows] * sf * p0[rows]
        a_n = y[rows] - h[rows] * sn * p0[rows]
        _, df2 = _kernels.nearest(a_f, h[rows] * sn, composite_constellation(m).points)
        _, dn2 = _kernels.nearest(a_n, h[rows] * sf, base_constellation(m.far_order).points)
        near[rows] = df2 >= dn2
    return near


def classify_near_far_prc(r_u: complex, mode_id: int, table: ModeTable,
                          chan: ChannelRealization, p0: complex) -> str:
    if mode_id < 1:
        raise ValueError("near/far undefined for OMA")
    return "near" if near_far_prc_batch([r_u], [mode_id], chan.h_est, p0, table)[0] else "far"


def prc_batch(r_u, r_r, h_est, table: ModeTable, plan: PhasePlan, p0,
              own_order=None) -> BatchDecisions:
    """Full pilot-reuse pipeline on one pilot pair per trial.

    The near/far test runs on the unrotated pilot and is skipped, as in the
    ML pipeline, when the decided mode's two orders differ and the UT's own
    order settles it.
    """
    r_u = np.atleast_1d(np.asarray(r_u, dtype=np.complex128))
    h = np.broadcast_to(np.asarray(h_est, dtype=np.complex128), r_u.shape)
    p0 = np.broadcast_to(np.asarray(p0, dtype=np.complex128), r_u.shape)
    phi = estimate_rotation(r_u, r_r)
    noma, mode = classify_prc_batch(phi, plan, table)
    near = np.zeros(r_u.shape, dtype=bool)
    test = noma.copy()
    if own_order is not None:
        own = np.broadcast_to(np.asarray(own_order), r_u.shape)
        for l in range(1, table.L + 1):
            m = table[l]
            if m.far_order != m.near_order:
                rows = mode == l
                near[rows] = own[rows] == m.near_order
                test &= ~rows
    if test.any():
        near[test] = near_far_prc_batch(r_u[test], mode[test], h[test], p0[test], table)
    return BatchDecisions(noma, mode, near, {"phi_hat": np.atleast_1d(phi)})
