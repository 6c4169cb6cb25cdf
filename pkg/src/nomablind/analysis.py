"""SINR, capacity and classification-error expressions for the near UT.

Expectations over constellation indices are done by full enumeration, so
everything here except the fading average is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, log_ndtr, logsumexp

from .channel import ChannelRealization, noise_variance, rayleigh
from .modset import ModeTable, min_distance_count

MATCHED = "matched"
NEAREST = "nearest"


def qfunc(x):
    """Gaussian tail probability Q(x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def _eff_noise(chan: ChannelRealization) -> float:
    return chan.sigma2 / abs(chan.h) ** 2


def interference_terms(l: int, m: int, table: ModeTable, sic_policy: str = MATCHED):
    """(E_i|s_f,l(i) - s_hat_f|^2, E_k|s_n,l(k) - s_n,m(k)|^2) when mode l is decoded as m.

    ``matched`` regenerates the far symbol with the same label from mode m
    whenever the far orders agree; with different far orders (or the
    ``nearest`` policy) the closest point of m's far set is used. The near
    term is None when the near orders differ: no label correspondence exists.
    """
    if l < 1 or m < 1:
        raise ValueError("SINR terms are defined between NOMA modes only")
    if sic_policy not in (MATCHED, NEAREST):
        raise ValueError(f"unknown SIC policy {sic_policy!r}")
    fl, fm = table.far_set(l).points, table.far_set(m).points
    if sic_policy == MATCHED and len(fl) == len(fm):
        e_far = float(np.mean(np.abs(fl - fm) ** 2))
    else:
        e_far = float(np.mean(np.min(np.abs(fl[:, None] - fm[None, :]) ** 2, axis=1)))
    nl, nm = table.near_set(l).points, table.near_set(m).points
    e_near = float(np.mean(np.abs(nl - nm) ** 2)) if len(nl) == len(nm) else None
    return e_far, e_near


def sinr_correct(mode, chan: ChannelRealization) -> float:
    if chan.sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    return mode.power_near / _eff_noise(chan)


def sinr_misclassified(l: int, m: int, table: ModeTable, chan: ChannelRealization,
                       sic_policy: str = MATCHED) -> float:
    e_far, e_near = interference_terms(l, m, table, sic_policy)
    if e_near is None:
        return 0.0
    return table[m].power_near / (e_far + e_near + _eff_noise(chan))


def sinr_condition(l: int, m: int, table: ModeTable, chan: ChannelRealization,
                   sic_policy: str = MATCHED) -> bool:
    """P_n,l (E_i + E_k + s~2) >= P_n,m s~2, i.e. deciding m does not raise the SINR."""
    e_far, e_near = interference_terms(l, m, table, sic_policy)
    if e_near is None:
        return True
    s2 = _eff_noise(chan)
    return table[l].power_near * (e_far + e_near + s2) >= table[m].power_near * s2


@dataclass
class SinrReport:
    eta_correct: np.ndarray          # (L,)
    eta_mis: np.ndarray              # (L, L); diagonal equals eta_correct
    far_terms: np.ndarray            # (L, L)
    near_terms: np.ndarray           # (L, L); nan where the near orders differ


def sinr_report(table: ModeTable, chan: ChannelRealization, sic_policy: str = MATCHED) -> SinrReport:
    L = table.L
    eta = np.zeros((L, L))
    ef = np.zeros((L, L))
    en = np.zeros((L, L))
    for i in range(L):
        for j in range(L):
            a, b = interference_terms(i + 1, j + 1, table, sic_policy)
            ef[i, j] = a
            en[i, j] = np.nan if b is None else b
            eta[i, j] = sinr_misclassified(i + 1, j + 1, table, chan, sic_policy)
    correct = np.array([sinr_correct(table[l], chan) for l in range(1, L + 1)])
    return SinrReport(correct, eta, ef, en)


@dataclass(frozen=True)
class RateModel:
    """Per (true, decided) mode pair: eta = num / (interference + sigma2/|h|^2).

    Row/column 0 (OMA) and pairs whose near labels cannot match carry num = 0.
    """

    num: np.ndarray
    interference: np.ndarray

    @classmethod
    def build(cls, table: ModeTable, sic_policy: str = MATCHED) -> "RateModel":
        n = table.L + 1
        num = np.zeros((n, n))
        itf = np.zeros((n, n))
        for l in range(1, n):
            for m in range(1, n):
                e_far, e_near = interference_terms(l, m, table, sic_policy)
                if e_near is None:
                    continue
                num[l, m] = table[m].power_near
                itf[l, m] = e_far + e_near
        return cls(num, itf)

    def rate(self, true_mode, decided_mode, gain2, sigma2):
        """log2(1 + eta) elementwise; ``gain2`` is |h|^2."""
        eff = sigma2 / np.asarray(gain2, dtype=float)
        eta = self.num[true_mode, decided_mode] / (self.interference[true_mode, decided_mode] + eff)
        return np.log2(1.0 + eta)

    def expected_rates(self, gain2: np.ndarray, sigma2: float) -> np.ndarray:
        """E_h[log2(1 + eta_{l->m})] over the supplied |h|^2 samples, (L+1, L+1)."""
        eff = sigma2 / np.asarray(gain2, dtype=float)
        eta = self.num[..., None] / (self.interference[..., None] + eff[None, None, :])
        return np.log2(1.0 + eta).mean(axis=-1)


def mc_error_logprob(l: int, m: int, table: ModeTable, chan: ChannelRealization,
                     exact: bool = True) -> float:
    """Natural log of :func:`mc_error_prob`, computed without underflow."""
    if chan.sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    a, b = table.constellation(l), table.constellation(m)
    scale = abs(chan.h) / (np.sqrt(2.0) * np.sqrt(chan.sigma2))
    norm = np.log(len(a) * len(b))
    if exact:
        d = np.abs(a.points[:, None] - b.points[None, :]).ravel()
        return float(logsumexp(log_ndtr(-scale * d)) - norm)
    dmin, nmin = min_distance_count(a, b)
    return float(np.log(nmin) + log_ndtr(-scale * dmin) - norm)


def mc_error_prob(l: int, m: int, table: ModeTable, chan: ChannelRealization,
                  exact: bool = True) -> float:
    """Pairwise-error estimate of deciding mode m when l was sent.

    exact: average over all point pairs of Q(|h||s_l - s_m| / (sqrt(2) sigma));
    otherwise keep only the N_min pairs at the minimum distance.
    """
    return float(np.exp(mc_error_logprob(l, m, table, chan, exact)))


@dataclass
class CapacityInputs:
    """Classification statistics feeding the capacity expression.

    ``p[l, m]`` is the probability that mode l is decided as m (column 0 is
    an OMA decision), ``q[m]`` the probability that a frame decided as mode
    m is sent through SIC. ``priors`` default to 1/L on the NOMA modes; the
    OMA mode contributes no near-UT rate.
    """

    p: np.ndarray
    q: np.ndarray
    priors: np.ndarray | None = None
    mc_samples: int = field(default=10_000)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        n = self.p.shape[0]
        if self.p.shape != (n, n) or self.q.shape != (n,):
            raise ValueError("p must be (L+1, L+1) and q (L+1,)")
        if np.any(self.p < 0) or np.any(self.p > 1) or np.any(self.q < 0) or np.any(self.q > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if not np.allclose(self.p.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("rows of p must sum to 1")
        if self.priors is None:
            pri = np.full(n, 1.0 / (n - 1))
            pri[0] = 0.0
            self.priors = pri
        self.priors = np.asarray(self.priors, dtype=float)


def capacity(table: ModeTable, inputs: CapacityInputs, snr_db: float, mc_samples: int | None = None,
             rng: np.random.Generator | None = None, sic_policy: str = MATCHED,
             gain2: np.ndarray | None = None) -> float:
    """sum_l pi_l E_h[ sum_m p_{l->m} q_m log2(1 + eta_{l->m}) ] in bit/s/Hz.

    ``gain2`` supplies |h|^2 samples directly (common random numbers across
    schemes); otherwise ``mc_samples`` Rayleigh draws are taken from ``rng``.
    """
    if gain2 is None:
        rng = np.random.default_rng(0) if rng is None else rng
        n = inputs.mc_samples if mc_samples is None else mc_samples
        gain2 = np.abs(rayleigh(rng, n)) ** 2
    model = RateModel.build(table, sic_policy)
    rates = model.expected_rates(gain2, noise_variance(snr_db))
    weights = inputs.p * inputs.q[None, :]
    return float(np.sum(inputs.priors[:, None] * weights * rates))


@dataclass
class ThetaSearch:
    theta: float
    objective: float
    ci: float
    thetas: np.ndarray
    objectives: np.ndarray
    cis: np.ndarray

    def at(self, theta: float) -> tuple[float, float]:
        """Objective and CI half-width at the grid point closest to ``theta``."""
        i = int(np.argmin(np.abs(self.thetas - theta)))
        return float(self.objectives[i]), float(self.cis[i])


def optimize_theta(table: ModeTable, snr_db: float, step: float = 0.01, trials: int = 10_000,
                   seed: int = 0, K: int = 10, upper: float = np.pi / 2,
                   sic_policy: str = MATCHED) -> ThetaSearch:
    """Grid search of the OMA rotation theta_0 (all NOMA rotations stay 0).

    Square QAM is invariant to quarter turns, so [0, pi/2) covers every
    distinct rotation. The objective is the measured near-UT capacity of the
    rotated ML classifier; all grid points reuse the same trials. Ties go
    to the smallest angle.
    """
    if step <= 0:
        raise ValueError("grid resolution must be positive")
    from . import sim  # local import: sim depends on this module

    grid = np.arange(0.0, upper - 1e-12, step)
    obj = np.empty(len(grid))
    ci = np.empty(len(grid))
    base = table.with_thetas([0.0] * (table.L + 1))
    blocks = sim.make_blocks(base, snr_db, trials, K, seed)
    model = RateModel.build(base, sic_policy)
    for i, theta in enumerate(grid):
        prm = base.with_thetas([theta] + [0.0] * table.L)
        rates = np.concatenate([sim.ml_capacity_samples(b, prm, model) for b in blocks])
        obj[i] = rates.mean()
        ci[i] = 1.96 * rates.std(ddof=1) / np.sqrt(len(rates))
    k = int(np.argmax(obj))
    return ThetaSearch(float(grid[k]), float(obj[k]), float(ci[k]), grid, obj, ci)
