"""Modulation modes, Gray-mapped QAM sets and power-domain composite constellations."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

SUPPORTED_ORDERS = (4, 16, 64)
_POWER_TOL = 1e-9
_TIE_RTOL = 1e-9


class ModulationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConstellationSet:
    """Labeled complex points. ``points[i]`` carries ``labels[i]``."""

    points: np.ndarray
    labels: np.ndarray
    bits_per_label: int

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.complex128).ravel()
        labels = np.array(self.labels, dtype=np.int64).ravel()
        if pts.shape != labels.shape:
            raise ModulationError("points and labels differ in length")
        if len(np.unique(labels)) != len(labels):
            raise ModulationError("bit labels must be unique")
        pts.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.points)

    @property
    def avg_power(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))

    def scaled(self, power: float) -> "ConstellationSet":
        return ConstellationSet(np.sqrt(power) * self.points, self.labels, self.bits_per_label)

    def bits(self, index: int) -> tuple[int, ...]:
        lab = int(self.labels[index])
        return tuple((lab >> b) & 1 for b in reversed(range(self.bits_per_label)))


def _gray_pam_levels(bits: int) -> np.ndarray:
    """Amplitude for every Gray codeword of a 2**bits PAM axis."""
    n = 1 << bits
    pos = np.arange(n)
    gray = pos ^ (pos >> 1)
    levels = np.empty(n)
    levels[gray] = 2 * pos - (n - 1)
    return levels


_BASE_CACHE: dict[int, ConstellationSet] = {}


def base_constellation(order: int) -> ConstellationSet:
    """Unit average power square QAM with per-axis Gray labels.

    The label's upper half of bits selects the in-phase level, the lower
    half the quadrature level; ``points`` are indexed by label.
    """
    if order not in SUPPORTED_ORDERS:
        raise ModulationError(f"unsupported modulation order: {order}")
    if order in _BASE_CACHE:
        return _BASE_CACHE[order]
    nbits = int(np.log2(order))
    half = nbits // 2
    levels = _gray_pam_levels(half)
    labels = np.arange(order)
    i_code = labels >> half
    q_code = labels & ((1 << half) - 1)
    pts = levels[i_code] + 1j * levels[q_code]
    pts = pts / np.sqrt(2.0 * (order - 1) / 3.0)
    cset = ConstellationSet(pts, labels, nbits)
    _BASE_CACHE[order] = cset
    return cset


def pam_levels(order: int) -> np.ndarray:
    """Sorted per-axis amplitudes of the unit-power square QAM of this order."""
    if order not in SUPPORTED_ORDERS:
        raise ModulationError(f"unsupported modulation order: {order}")
    n = 1 << (int(np.log2(order)) // 2)
    return (2 * np.arange(n) - (n - 1)) / np.sqrt(2.0 * (order - 1) / 3.0)


@dataclass(frozen=True)
class ModulationMode:
    """One row of a mode table. For the OMA mode (id 0) ``far_order`` is the OMA order."""

    id: int
    far_order: int
    near_order: int | None
    power_far: float
    power_near: float
    data_rotation: float = 0.0
    pilot_rotation: float = 0.0

    def __post_init__(self):
        if self.far_order not in SUPPORTED_ORDERS:
            raise ModulationError(f"unsupported modulation order: {self.far_order}")
        if self.id == 0:
            if self.near_order is not None:
                raise ModulationError("OMA mode has no near-UT order")
            if abs(self.power_far - 1.0) > _POWER_TOL or abs(self.power_near) > _POWER_TOL:
                raise ModulationError("OMA mode must have power_far = 1, power_near = 0")
        else:
            if self.near_order not in SUPPORTED_ORDERS:
                raise ModulationError(f"unsupported modulation order: {self.near_order}")
            if abs(self.power_far + self.power_near - 1.0) > _POWER_TOL:
                raise ModulationError(
                    f"mode {self.id}: power ratios sum to {self.power_far + self.power_near}, expected 1"
                )
            if not 0.0 <= self.power_near < 1.0:
                raise ModulationError(f"mode {self.id}: power_near outside [0, 1)")
            if not self.power_far > self.power_near:
                raise ModulationError(f"mode {self.id}: far UT must get the larger power share")
        phi = self.pilot_rotation
        if not 0.0 <= phi < 2 * np.pi:
            raise ModulationError(f"mode {self.id}: pilot rotation outside [0, 2*pi)")

    @property
    def is_oma(self) -> bool:
        return self.id == 0


def composite_constellation(mode: ModulationMode) -> ConstellationSet:
    """Superposed set sqrt(Pf)*a + sqrt(Pn)*b, far bits as MSBs. Unrotated."""
    if mode.is_oma:
        raise ModulationError("composite undefined for OMA")
    far = base_constellation(mode.far_order)
    near = base_constellation(mode.near_order)
    pts = (np.sqrt(mode.power_far) * far.points[:, None]
           + np.sqrt(mode.power_near) * near.points[None, :]).ravel()
    labels = ((far.labels[:, None] << near.bits_per_label) | near.labels[None, :]).ravel()
    return ConstellationSet(pts, labels, far.bits_per_label + near.bits_per_label)


def apply_rotation(cset: ConstellationSet, theta: float) -> ConstellationSet:
    if theta == 0.0:
        return cset
    return ConstellationSet(cset.points * np.exp(1j * theta), cset.labels, cset.bits_per_label)


def _pairwise_distances(a: ConstellationSet, b: ConstellationSet) -> np.ndarray:
    if len(a) == 0 or len(b) == 0:
        raise ModulationError("min_distance needs non-empty sets")
    return np.abs(a.points[:, None] - b.points[None, :])


def min_distance(a: ConstellationSet, b: ConstellationSet) -> float:
    return float(_pairwise_distances(a, b).min())


def min_distance_count(a: ConstellationSet, b: ConstellationSet) -> tuple[float, int]:
    """Return (d_min, N_min); pairs within relative 1e-9 of d_min count as ties."""
    d = _pairwise_distances(a, b)
    dmin = float(d.min())
    tol = _TIE_RTOL * dmin if dmin > 0 else 1e-12
    return dmin, int(np.count_nonzero(d <= dmin + tol))


@dataclass(frozen=True, eq=False)
class ModeTable:
    modes: tuple[ModulationMode, ...]
    name: str = field(default="custom")

    def __post_init__(self):
        modes = tuple(self.modes)
        object.__setattr__(self, "modes", modes)
        if not modes or modes[0].id != 0 or sum(m.id == 0 for m in modes) != 1:
            raise ModulationError("mode table needs exactly one OMA mode, at index 0")
        for idx, m in enumerate(modes):
            if m.id != idx:
                raise ModulationError(f"mode ids must be 0..L in order (got {m.id} at {idx})")
        seen: list[int] = []
        for m in modes[1:]:
            if seen and m.far_order != seen[-1] and m.far_order in seen:
                raise ModulationError("modes sharing a far-UT order must be contiguous")
            if not seen or seen[-1] != m.far_order:
                seen.append(m.far_order)
        phis = [m.pilot_rotation for m in modes]
        if len(modes) > 1 and len(set(phis)) != len(phis):
            raise ModulationError("pilot rotations must be pairwise distinct")

    def __len__(self):
        return len(self.modes)

    def __getitem__(self, l: int) -> ModulationMode:
        return self.modes[l]

    @property
    def L(self) -> int:
        return len(self.modes) - 1

    @property
    def thetas(self) -> tuple[float, ...]:
        return tuple(m.data_rotation for m in self.modes)

    @property
    def phis(self) -> tuple[float, ...]:
        return tuple(m.pilot_rotation for m in self.modes)

    @cached_property
    def grouping(self) -> dict[int, tuple[int, ...]]:
        """Far-UT order -> contiguous NOMA mode ids using it."""
        groups: dict[int, list[int]] = {}
        for m in self.modes[1:]:
            groups.setdefault(m.far_order, []).append(m.id)
        return {k: tuple(v) for k, v in groups.items()}

    @cached_property
    def _sets(self) -> tuple[ConstellationSet, ...]:
        out = [apply_rotation(base_constellation(self.modes[0].far_order), self.modes[0].data_rotation)]
        for m in self.modes[1:]:
            out.append(apply_rotation(composite_constellation(m), m.data_rotation))
        return tuple(out)

    def constellation(self, l: int) -> ConstellationSet:
        """chi_l as transmitted, data rotation included."""
        return self._sets[l]

    def far_set(self, l: int) -> ConstellationSet:
        """sqrt(Pf) * base(m_f), rotated by the mode's data rotation."""
        m = self.modes[l]
        return apply_rotation(base_constellation(m.far_order).scaled(m.power_far), m.data_rotation)

    def axis_levels(self, l: int, far_only: bool = False) -> tuple[np.ndarray, float]:
        """Per-axis amplitude multiset of chi_l (or of its far part) and the data rotation.

        Every set in a table is the product of one level multiset on the
        in-phase axis with the same multiset on the quadrature axis.
        """
        m = self.modes[l]
        far = pam_levels(m.far_order)
        if m.is_oma:
            return far, m.data_rotation
        far = np.sqrt(m.power_far) * far
        if far_only:
            return far, m.data_rotation
        near = np.sqrt(m.power_near) * pam_levels(m.near_order)
        return (far[:, None] + near[None, :]).ravel(), m.data_rotation

    def near_set(self, l: int) -> ConstellationSet:
        m = self.modes[l]
        if m.is_oma:
            raise ModulationError("OMA mode has no near-UT set")
        return apply_rotation(base_constellation(m.near_order).scaled(m.power_near), m.data_rotation)

    def with_thetas(self, thetas: Sequence[float]) -> "ModeTable":
        if len(thetas) != len(self.modes):
            raise ModulationError(f"expected {len(self.modes)} rotations, got {len(thetas)}")
        return ModeTable(tuple(replace(m, data_rotation=float(t)) for m, t in zip(self.modes, thetas)),
                         self.name)

    def with_phis(self, phis: Sequence[float]) -> "ModeTable":
        if len(phis) != len(self.modes):
            raise ModulationError(f"expected {len(self.modes)} rotations, got {len(phis)}")
        return ModeTable(tuple(replace(m, pilot_rotation=float(p)) for m, p in zip(self.modes, phis)),
                         self.name)


def noma_union(table: ModeTable) -> ConstellationSet:
    """Multiset union of all NOMA composite sets; labels are re-indexed to stay unique."""
    if table.L < 1:
        raise ModulationError("table has no NOMA mode")
    pts = np.concatenate([table.constellation(l).points for l in range(1, table.L + 1)])
    return ConstellationSet(pts, np.arange(len(pts)), int(np.ceil(np.log2(max(len(pts), 2)))))


def _uniform_phis(n_modes: int) -> list[float]:
    return [2 * np.pi * l / n_modes for l in range(n_modes)]


def make_table(rows: Sequence[tuple[int, int | None, float]], name: str = "custom",
               thetas: Sequence[float] | None = None,
               phis: Sequence[float] | None = None) -> ModeTable:
    """Build a table from (far_order, near_order, power_far) rows; row 0 is OMA.

    Pilot rotations default to the uniform rule so the table is valid on its own.
    """
    n = len(rows)
    thetas = [0.0] * n if thetas is None else list(thetas)
    phis = _uniform_phis(n) if phis is None else list(phis)
    modes = []
    for l, (mf, mn, pf) in enumerate(rows):
        pn = 0.0 if l == 0 else 1.0 - pf
        modes.append(ModulationMode(l, mf, mn, pf, pn, thetas[l], phis[l]))
    return ModeTable(tuple(modes), name)


# far-UT power ratios exactly as tabulated for the three evaluation cases
CASE_ROWS = {
    "case1": [(4, None, 1.0), (4, 4, 0.8), (4, 4, 0.8621), (4, 4, 0.9163)],
    "case2": [(16, None, 1.0), (4, 16, 0.8653), (16, 16, 0.95)],
    "case3": [(16, None, 1.0), (4, 16, 0.7619), (4, 16, 0.8653), (4, 16, 0.9275),
              (16, 16, 0.95), (16, 16, 0.97)],
}

# default OMA rotation theta_0 per preset, tuned at 13, 20 and 20 dB
DEFAULT_THETA0 = {"case1": 0.6, "case2": 0.51, "case3": 0.69}


def case_table(name: str) -> ModeTable:
    try:
        rows = CASE_ROWS[name]
    except KeyError:
        raise ModulationError(f"unknown preset {name!r}") from None
    return make_table(rows, name)
