"""Post-classification detection: OMA slicing, far-UT slicing, or SIC for the near UT."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .channel import FAR, NEAR, OMA, ChannelRealization, TransmitFrame, pilot_value
from .mlc import BatchDecisions, three_step_batch
from .modset import ConstellationSet, ModeTable
from .prc import PhasePlan, prc_batch

GENIE = "genie"
CLASSIFIERS = ("mlc", "prm", "prc", GENIE)

ROLE_CODES = {NEAR: 0, FAR: 1, OMA: 2}


def detect(y, cset: ConstellationSet, chan: ChannelRealization):
    """Nearest-point labels of ``y`` under ``h_est * cset``; ties go to the lower index."""
    idx, _ = _kernels.nearest(y, chan.h_est, cset.points)
    return cset.labels[idx]


def sic_cancel(y, mode_id: int, table: ModeTable, chan: ChannelRealization):
    """Slice the far component with the decided mode's far set and subtract it."""
    if mode_id < 1:
        raise ValueError("SIC needs a NOMA mode")
    far = table.far_set(mode_id).points
    idx, _ = _kernels.nearest(y, chan.h_est, far)
    return np.asarray(y) - chan.h_est * far[idx]


@dataclass(frozen=True)
class DetectionOutcome:
    symbols: np.ndarray           # decoded own-UT labels, -1 where nothing was decodable
    symbol_errors: int
    frame_lost: bool
    classification: object

    @property
    def used_sic(self) -> bool:
        c = self.classification
        return c.oma_noma == "NOMA" and c.near_far == NEAR


@dataclass
class TruthBatch:
    """Ground truth of T trials as arrays; role codes follow ``ROLE_CODES``."""

    mode: np.ndarray
    role: np.ndarray
    far_idx: np.ndarray
    near_idx: np.ndarray

    @property
    def own_idx(self) -> np.ndarray:
        return np.where((self.role == ROLE_CODES[NEAR])[:, None], self.near_idx, self.far_idx)


def detect_batch(ys, h_est, table: ModeTable, dec: BatchDecisions, truth: TruthBatch):
    """Decode every trial along its decided branch and count symbol errors.

    Returns ``(labels, errors)``. A decision that routes the frame to the
    wrong branch (OMA vs NOMA, or near vs far) loses all K symbols; so does
    a mode whose own-UT order differs from the transmitted one.
    """
    ys = np.asarray(ys)
    T, K = ys.shape
    h = np.broadcast_to(np.asarray(h_est, dtype=np.complex128), (T,))
    labels = np.full((T, K), -1, dtype=np.int64)
    t_near = truth.role == ROLE_CODES[NEAR]
    t_far = truth.role == ROLE_CODES[FAR]
    t_oma = truth.role == ROLE_CODES[OMA]
    ok = np.zeros(T, dtype=bool)
    orders = np.array([[m.far_order, m.near_order] for m in table])

    rows = ~dec.noma
    if rows.any():
        labels[rows], _ = _kernels.nearest(ys[rows], h[rows, None], table.constellation(0).points)
        ok[rows] = t_oma[rows]
    for m in range(1, table.L + 1):
        far = table.far_set(m).points
        for near_branch in (True, False):
            rows = dec.noma & (dec.mode == m) & (dec.near == near_branch)
            if not rows.any():
                continue
            hs = h[rows, None]
            fi, _ = _kernels.nearest(ys[rows], hs, far)
            if near_branch:
                resid = ys[rows] - hs * far[fi]
                labels[rows], _ = _kernels.nearest(resid, hs, table.near_set(m).points)
                same = orders[truth.mode[rows], 1] == orders[m, 1]
                ok[rows] = t_near[rows] & same
            else:
                labels[rows] = fi
                same = orders[truth.mode[rows], 0] == orders[m, 0]
                ok[rows] = t_far[rows] & same
    errors = np.where(ok, np.sum(labels != truth.own_idx, axis=1), K)
    return labels, errors


def genie_decisions(truth: TruthBatch) -> BatchDecisions:
    noma = truth.mode > 0
    return BatchDecisions(noma, truth.mode.copy(), truth.role == ROLE_CODES[NEAR])


def receive_end_to_end(frame: TransmitFrame, classifier: str, table: ModeTable,
                       chan: ChannelRealization, plan: PhasePlan | None = None,
                       own_order: int | None = None) -> DetectionOutcome:
    """Classify one frame and decode the own-UT symbols.

    ``table`` must be the table the frame was sent with: the base table for
    ``mlc``, the rotated one for ``prm`` and the plan-applied one for ``prc``.
    """
    t = frame.truth
    truth = TruthBatch(np.array([t.mode_id]), np.array([ROLE_CODES[t.role]]),
                       np.asarray(t.far_idx)[None, :], np.asarray(t.near_idx)[None, :])
    if classifier in ("mlc", "prm"):
        dec = three_step_batch([frame.data], chan.h_est, chan.sigma2, table, own_order)
    elif classifier == "prc":
        if plan is None:
            raise ValueError("prc needs a phase plan")
        own = own_order if own_order is not None else _own_order(table, t)
        p0 = own_pilot(own, t.role)
        dec = prc_batch([frame.pilot_unrotated], [frame.pilot_rotated], chan.h_est, table, plan,
                        p0, own_order)
    elif classifier == GENIE:
        dec = genie_decisions(truth)
    else:
        raise ValueError(f"unknown classifier {classifier!r}")
    labels, errors = detect_batch([frame.data], chan.h_est, table, dec, truth)
    return DetectionOutcome(labels[0], int(errors[0]), bool(errors[0] > 0), dec.result(0))


def own_pilot(order: int, role: str) -> complex:
    """Known pilot of the UT under test; in OMA frames it keeps its near-UT pilot."""
    return pilot_value(order, FAR if role == FAR else NEAR)


def _own_order(table: ModeTable, truth) -> int:
    m = table[truth.mode_id]
    return m.near_order if truth.role == NEAR else m.far_order
