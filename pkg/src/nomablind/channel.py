"""Block-fading channel draws, data frames and the rotated pilot pair."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .modset import ModulationMode, base_constellation

NEAR = "near"
FAR = "far"
OMA = "oma"
ROLES = (NEAR, FAR, OMA)


@dataclass(frozen=True)
class ChannelRealization:
    h: complex
    sigma2: float
    h_est: complex

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("noise variance must be non-negative")


def noise_variance(snr_db: float) -> float:
    # unit total transmit power, so SNR = 1 / sigma2 before fading
    return 10.0 ** (-snr_db / 10.0)


def rayleigh(rng: np.random.Generator, size=None):
    """CN(0, 1) draws."""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)


def sample_channel(rng: np.random.Generator, snr_db: float) -> ChannelRealization:
    h = complex(rayleigh(rng))
    return ChannelRealization(h, noise_variance(snr_db), h)


def reference_point(order: int) -> complex:
    """First-quadrant point of base(order) with power closest to 1 (smallest angle on ties)."""
    pts = base_constellation(order).points
    q1 = pts[(pts.real > 0) & (pts.imag > 0)]
    key = np.lexsort((np.angle(q1), np.round(np.abs(np.abs(q1) ** 2 - 1.0), 9)))
    return complex(q1[key[0]])


def pilot_value(order: int, role: str) -> complex:
    """Known pilot of a UT with the given own order.

    Far and near pilots must differ, otherwise the near/far test sees the
    same received pilot and the same known value for both UTs. The near
    pilot is the reference point turned by -90 degrees, which keeps it on
    the constellation grid.
    """
    ref = reference_point(order)
    return -1j * ref if role == NEAR else ref


def superposed_pilot(mode: ModulationMode) -> complex:
    """Power-multiplexed legacy pilot sqrt(Pf) p^f + sqrt(Pn) p^n (OMA: p^0)."""
    if mode.is_oma:
        return pilot_value(mode.far_order, OMA)
    return (np.sqrt(mode.power_far) * pilot_value(mode.far_order, FAR)
            + np.sqrt(mode.power_near) * pilot_value(mode.near_order, NEAR))


@dataclass(frozen=True)
class Truth:
    mode_id: int
    role: str
    far_idx: np.ndarray   # OMA symbols live here for the OMA mode
    near_idx: np.ndarray
    pilot: complex

    @property
    def own_idx(self) -> np.ndarray:
        return self.near_idx if self.role == NEAR else self.far_idx


@dataclass(frozen=True)
class TransmitFrame:
    data: np.ndarray
    pilot_unrotated: complex
    pilot_rotated: complex
    truth: Truth

    @property
    def K(self) -> int:
        return len(self.data)


def _cn(rng, sigma2, size=None):
    return np.sqrt(sigma2) * rayleigh(rng, size)


def modulate(mode: ModulationMode, role: str, far_idx, near_idx):
    """Noiseless, channel-free transmitted symbols (data rotation applied).

    A far-UT frame carries only the far component: the near UT's share sits
    below the far UT's noise floor.
    """
    rot = np.exp(1j * mode.data_rotation)
    far = base_constellation(mode.far_order).points[far_idx]
    if mode.is_oma:
        return rot * far
    far = np.sqrt(mode.power_far) * far
    if role == FAR:
        return rot * far
    near = np.sqrt(mode.power_near) * base_constellation(mode.near_order).points[near_idx]
    return rot * (far + near)


def _check_role(mode: ModulationMode, role: str):
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}")
    if mode.is_oma != (role == OMA):
        raise ValueError("role 'oma' goes with the OMA mode only")


def transmit_data(mode: ModulationMode, role: str, chan: ChannelRealization, K: int,
                  rng: np.random.Generator):
    """Return (y, truth) for K uniformly drawn symbols through the block-fading channel."""
    if K < 1:
        raise ValueError("K must be >= 1")
    _check_role(mode, role)
    far_idx = rng.integers(0, mode.far_order, size=K)
    near_idx = (np.zeros(K, dtype=np.int64) if mode.is_oma
                else rng.integers(0, mode.near_order, size=K))
    x = modulate(mode, role, far_idx, near_idx)
    y = chan.h * x + _cn(rng, chan.sigma2, K)
    truth = Truth(mode.id, role, far_idx, near_idx, superposed_pilot(mode))
    return y, truth


def transmit_pilots(mode: ModulationMode, role: str, chan: ChannelRealization,
                    rng: np.random.Generator):
    """Return (r_u, r_r, p_u): legacy pilot then the same pilot turned by phi_l, one h for both."""
    _check_role(mode, role)
    p_u = superposed_pilot(mode)
    w = _cn(rng, chan.sigma2, 2)
    r_u = chan.h * p_u + w[0]
    r_r = chan.h * p_u * np.exp(1j * mode.pilot_rotation) + w[1]
    return complex(r_u), complex(r_r), complex(p_u)


def transmit_frame(mode: ModulationMode, role: str, chan: ChannelRealization, K: int,
                   rng: np.random.Generator) -> TransmitFrame:
    y, truth = transmit_data(mode, role, chan, K, rng)
    r_u, r_r, _ = transmit_pilots(mode, role, chan, rng)
    return TransmitFrame(y, r_u, r_r, truth)
