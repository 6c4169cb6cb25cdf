"""Maximum-likelihood signal classification: OMA/NOMA, mode, near/far.

Scalar entry points take one frame ``ys`` of K samples and a
:class:`ChannelRealization`. The ``*_batch`` variants take ``(T, K)``
samples with per-trial ``h_est`` and ``sigma2`` and are what the Monte
Carlo engine runs; the scalar functions are thin wrappers around them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import _kernels
from .channel import ChannelRealization
from .modset import ConstellationSet, ModeTable

NEAR = "near"
FAR = "far"


class Kind(Enum):
    OMA = "H0"
    NOMA = "HN"
    MODE = "Hl"
    NEAR = "Hl^n"
    FAR = "Hl^f"


@dataclass(frozen=True)
class Hypothesis:
    kind: Kind
    mode: int | None = None

    def __post_init__(self):
        needs_mode = self.kind in (Kind.MODE, Kind.NEAR, Kind.FAR)
        if needs_mode and (self.mode is None or self.mode < 1):
            raise ValueError(f"{self.kind.value} needs a NOMA mode index >= 1")
        if not needs_mode and self.mode is not None:
            raise ValueError(f"{self.kind.value} takes no mode index")


@dataclass(frozen=True)
class ClassificationResult:
    oma_noma: str                      # "OMA" | "NOMA"
    mode_id: int | None = None
    near_far: str | None = None
    log_likelihoods: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.oma_noma == "OMA" and (self.mode_id is not None or self.near_far is not None):
            raise ValueError("OMA decision carries no mode or near/far field")

    @property
    def is_noma(self) -> bool:
        return self.oma_noma == "NOMA"


@dataclass
class BatchDecisions:
    """Per-trial decisions; ``mode`` is 0 and ``near`` False where OMA was decided."""

    noma: np.ndarray
    mode: np.ndarray
    near: np.ndarray
    scores: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.noma)

    def result(self, t: int = 0) -> ClassificationResult:
        if not self.noma[t]:
            return ClassificationResult("OMA", log_likelihoods=_trial_scores(self.scores, t))
        return ClassificationResult("NOMA", int(self.mode[t]), NEAR if self.near[t] else FAR,
                                    _trial_scores(self.scores, t))


def _trial_scores(scores, t):
    return {k: (v[t].tolist() if np.ndim(v) > 1 else float(v[t])) for k, v in scores.items()}


def _points(cset) -> np.ndarray:
    return cset.points if isinstance(cset, ConstellationSet) else np.asarray(cset)


def _prep(ys, h_est, sigma2):
    ys = np.atleast_2d(np.asarray(ys, dtype=np.complex128))
    T = ys.shape[0]
    h = np.broadcast_to(np.asarray(h_est, dtype=np.complex128), (T,))
    s2 = np.broadcast_to(np.asarray(sigma2, dtype=np.float64), (T,))
    if np.any(s2 <= 0):
        raise ValueError("likelihood needs sigma2 > 0")
    return ys, h, s2


def sample_logliks(ys, h_est, sigma2, cset) -> np.ndarray:
    """Per-sample log p(y | set) for ``(T, K)`` samples."""
    ys, h, s2 = _prep(ys, h_est, sigma2)
    return _kernels.loglik(ys, h[:, None], s2[:, None], _points(cset))


def likelihood(y: complex, cset: ConstellationSet, chan: ChannelRealization) -> float:
    """(1/|set|) sum_s exp(-|y - h s|^2 / sigma2) / (pi sigma2), evaluated via log-sum-exp."""
    if chan.sigma2 <= 0:
        raise ValueError("likelihood needs sigma2 > 0")
    return float(np.exp(sample_logliks([[y]], chan.h_est, chan.sigma2, cset)[0, 0]))


def log_likelihood(y: complex, cset: ConstellationSet, chan: ChannelRealization) -> float:
    return float(sample_logliks([[y]], chan.h_est, chan.sigma2, cset)[0, 0])


def joint_log_likelihood(ys: Sequence[complex], cset: ConstellationSet,
                         chan: ChannelRealization) -> float:
    ys = np.asarray(ys, dtype=np.complex128).ravel()
    if ys.size < 1:
        raise ValueError("need at least one sample")
    per = sample_logliks(ys[None, :], chan.h_est, chan.sigma2, cset)[0]
    # sorted summation makes the result independent of sample order
    return float(np.sum(np.sort(per)))


def _table_ll(ys, h, s2, table: ModeTable, l: int, far_only: bool = False) -> np.ndarray:
    """Per-sample log-likelihoods under a table set, using its per-axis product form."""
    levels, rot = table.axis_levels(l, far_only)
    return _kernels.product_set_loglik(ys, h[:, None], s2[:, None], levels, rot)


def _joint(per_sample: np.ndarray) -> np.ndarray:
    return np.sort(per_sample, axis=-1).sum(axis=-1)


def _mode_sample_logliks(ys, h, s2, table: ModeTable) -> np.ndarray:
    """(L, T, K) per-sample log-likelihoods under each NOMA mode's composite set."""
    return np.stack([_table_ll(ys, h, s2, table, l) for l in range(1, table.L + 1)])


def _noma_aggregate(per_mode: np.ndarray, table: ModeTable) -> np.ndarray:
    """Per-sample log p(y|H_N) over the multiset union, from per-mode values.

    p(y|H_N) = sum_l (|chi_l| / |N|) p(y|H_l), so the union never has to be
    scanned separately.
    """
    sizes = np.array([len(table.constellation(l)) for l in range(1, table.L + 1)], dtype=float)
    w = np.log(sizes / sizes.sum())[:, None, None]
    return np.logaddexp.reduce(per_mode + w, axis=0)


def _far_only_joint(ys, h, s2, table, l, rows) -> np.ndarray:
    return _joint(_table_ll(ys[rows], h[rows], s2[rows], table, l, far_only=True))


def oma_noma_batch(ys, h_est, sigma2, table: ModeTable) -> np.ndarray:
    ys, h, s2 = _prep(ys, h_est, sigma2)
    j0 = _joint(_table_ll(ys, h, s2, table, 0))
    jn = _joint(_noma_aggregate(_mode_sample_logliks(ys, h, s2, table), table))
    return jn > j0


def three_step_batch(ys, h_est, sigma2, table: ModeTable, own_order=None,
                     keep_scores: bool = False) -> BatchDecisions:
    """OMA/NOMA, then mode, then near/far (skipped when the mode's two orders differ).

    With the near/far test skipped the decision is inferred from the UT's own
    order: near when it equals the mode's near-UT order.
    """
    ys, h, s2 = _prep(ys, h_est, sigma2)
    T = ys.shape[0]
    own = None if own_order is None else np.broadcast_to(np.asarray(own_order), (T,))
    j0 = _joint(_table_ll(ys, h, s2, table, 0))
    per_mode = _mode_sample_logliks(ys, h, s2, table)
    jn = _joint(_noma_aggregate(per_mode, table))
    jmode = _joint(per_mode).T                     # (T, L)
    noma = jn > j0                                 # ties go to H_0
    mode = np.where(noma, np.argmax(jmode, axis=1) + 1, 0)
    near = np.zeros(T, dtype=bool)
    jfar = np.full(T, np.nan)
    for l in range(1, table.L + 1):
        rows = np.flatnonzero(mode == l)
        if rows.size == 0:
            continue
        m = table[l]
        if m.far_order != m.near_order and own is not None:
            near[rows] = own[rows] == m.near_order
            continue
        jf = _far_only_joint(ys, h, s2, table, l, rows)
        jfar[rows] = jf
        near[rows] = jmode[rows, l - 1] >= jf
    scores = {"H0": j0, "HN": jn, "Hl": jmode, "Hl^f": jfar} if keep_scores else {}
    return BatchDecisions(noma, mode, near, scores)


def joint_batch(ys, h_est, sigma2, table: ModeTable, keep_scores: bool = False) -> BatchDecisions:
    """Single argmax over {H_0, H_1^f..H_L^f, H_1^n..H_L^n}; ties to the lowest index."""
    ys, h, s2 = _prep(ys, h_est, sigma2)
    L = table.L
    cols = [_joint(_table_ll(ys, h, s2, table, 0))]
    for l in range(1, L + 1):
        cols.append(_joint(_table_ll(ys, h, s2, table, l, far_only=True)))
    jn = _joint(_mode_sample_logliks(ys, h, s2, table))
    cols.extend(jn)
    scores = np.stack(cols, axis=1)                # (T, 2L+1)
    best = np.argmax(scores, axis=1)
    noma = best > 0
    mode = np.where(best == 0, 0, np.where(best <= L, best, best - L))
    near = best > L
    return BatchDecisions(noma, mode, near, {"joint": scores} if keep_scores else {})


def hypothesis_of(dec: BatchDecisions, t: int = 0) -> Hypothesis:
    if not dec.noma[t]:
        return Hypothesis(Kind.OMA)
    return Hypothesis(Kind.NEAR if dec.near[t] else Kind.FAR, int(dec.mode[t]))


def classify_joint(ys, table: ModeTable, chan: ChannelRealization) -> Hypothesis:
    return hypothesis_of(joint_batch([ys], chan.h_est, chan.sigma2, table))


def classify_oma_noma(ys, table: ModeTable, chan: ChannelRealization) -> str:
    return "NOMA" if oma_noma_batch([ys], chan.h_est, chan.sigma2, table)[0] else "OMA"


def classify_modulation(ys, table: ModeTable, chan: ChannelRealization) -> int:
    ys, h, s2 = _prep([ys], chan.h_est, chan.sigma2)
    jmode = _joint(_mode_sample_logliks(ys, h, s2, table))[:, 0]
    return int(np.argmax(jmode)) + 1


def classify_near_far(ys, mode_id: int, table: ModeTable, chan: ChannelRealization) -> str:
    """Compare chi_l against the far-only set sqrt(Pf) chi^f of the same mode."""
    if mode_id < 1:
        raise ValueError("near/far undefined for OMA")
    ys, h, s2 = _prep([ys], chan.h_est, chan.sigma2)
    jn = _joint(_table_ll(ys, h, s2, table, mode_id))
    jf = _joint(_table_ll(ys, h, s2, table, mode_id, far_only=True))
    return NEAR if jn[0] >= jf[0] else FAR


def classify_three_step(ys, table: ModeTable, chan: ChannelRealization,
                        own_order: int | None = None) -> ClassificationResult:
    dec = three_step_batch([ys], chan.h_est, chan.sigma2, table, own_order, keep_scores=True)
    return dec.result(0)


def build_prm_table(table: ModeTable, thetas: Sequence[float]) -> ModeTable:
    """Table whose mode-l constellations are rotated by thetas[l] on both ends of the link."""
    if len(thetas) != table.L + 1:
        raise ValueError(f"rotation list must have L+1 = {table.L + 1} entries, got {len(thetas)}")
    return table.with_thetas(thetas)


def oma_only_thetas(table: ModeTable, theta0: float) -> list[float]:
    """The applied policy: rotate the OMA mode only."""
    return [float(theta0)] + [0.0] * table.L
