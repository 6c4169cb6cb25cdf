"""Paired Monte Carlo sweeps: every classifier sees the same channels, symbols and noise.

Trials are generated in fixed-size blocks. Block b at a given SNR draws
from its own stream ``SeedSequence(seed, spawn_key=(snr key, b))``, so a
trial's content depends only on (seed, snr, index), never on the total
trial count or the order blocks are processed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .analysis import MATCHED, NEAREST, CapacityInputs, RateModel, capacity, optimize_theta
from .channel import FAR, NEAR, OMA, modulate, noise_variance, rayleigh, superposed_pilot
from .mlc import BatchDecisions, joint_batch, oma_only_thetas, three_step_batch
from .modset import DEFAULT_THETA0, ModeTable
from .prc import PhasePlan, assign_nonuniform, assign_uniform, prc_batch
from .receiver import GENIE, ROLE_CODES, TruthBatch, detect_batch, genie_decisions, own_pilot

CLASSIFIERS = ("mlc", "prm", "prc", GENIE)
KNOWN_CLASSIFIERS = CLASSIFIERS + ("joint",)
PHASE_RULES = ("uniform", "nonuniform")
ROLE_POLICIES = (NEAR, FAR, "mixed")
OPTIMIZE = "optimize"
Z95 = 1.959963984540054
_CAPACITY_STREAM = 1 << 20


class InvariantError(RuntimeError):
    """A run produced a result that violates a structural invariant."""


@dataclass(frozen=True)
class SimConfig:
    table: ModeTable
    snr_db: tuple[float, ...]
    trials: int = 100_000
    K: int = 10
    classifiers: tuple[str, ...] = CLASSIFIERS
    phase_rule: str = "uniform"
    phase_weights: Mapping | None = None
    thetas: tuple[float, ...] | str | None = None
    theta_snr: float = 13.0
    seed: int = 0
    role: str = NEAR
    block_size: int = 2048
    sic_policy: str = MATCHED
    capacity_samples: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in np.atleast_1d(self.snr_db)))
        object.__setattr__(self, "classifiers", tuple(self.classifiers))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.snr_db:
            raise ValueError("SNR grid must be nonempty")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.classifiers or len(set(self.classifiers)) != len(self.classifiers):
            raise ValueError("classifier list must be nonempty and free of duplicates")
        bad = [c for c in self.classifiers if c not in KNOWN_CLASSIFIERS]
        if bad:
            raise ValueError(f"unknown classifier(s): {', '.join(bad)}")
        if self.phase_rule not in PHASE_RULES:
            raise ValueError(f"phase rule must be one of {PHASE_RULES}")
        if self.role not in ROLE_POLICIES:
            raise ValueError(f"role must be one of {ROLE_POLICIES}")
        if self.sic_policy not in (MATCHED, NEAREST):
            raise ValueError(f"SIC policy must be {MATCHED!r} or {NEAREST!r}")
        if self.block_size < 1 or self.capacity_samples < 1:
            raise ValueError("block size and capacity samples must be >= 1")
        if isinstance(self.thetas, str):
            if self.thetas != OPTIMIZE:
                raise ValueError(f"thetas must be a list or {OPTIMIZE!r}")
        elif self.thetas is not None:
            object.__setattr__(self, "thetas", tuple(float(t) for t in self.thetas))
            if len(self.thetas) != self.table.L + 1:
                raise ValueError(f"thetas must have L+1 = {self.table.L + 1} entries")


@dataclass(frozen=True)
class Setup:
    """Tables actually transmitted for each scheme, plus the phase plan."""

    base: ModeTable
    prm: ModeTable
    prc: ModeTable
    plan: PhasePlan
    thetas: tuple[float, ...]
    rate_model: RateModel

    def data_table(self, classifier: str) -> ModeTable:
        return self.prm if classifier == "prm" else self.base


def resolve(config: SimConfig) -> Setup:
    base = config.table.with_thetas([0.0] * (config.table.L + 1))
    if config.thetas == OPTIMIZE:
        search = optimize_theta(base, config.theta_snr, seed=config.seed, K=config.K,
                                sic_policy=config.sic_policy)
        thetas = tuple(oma_only_thetas(base, search.theta))
    elif config.thetas is None:
        thetas = tuple(oma_only_thetas(base, DEFAULT_THETA0.get(config.table.name, 0.0)))
    else:
        thetas = config.thetas
    if config.phase_rule == "uniform":
        plan = assign_uniform(base)
    else:
        plan = assign_nonuniform(base, config.phase_weights)
    return Setup(base, base.with_thetas(thetas), plan.apply(base), plan, thetas,
                 RateModel.build(base, config.sic_policy))


# ---------------------------------------------------------------- trial blocks


def _snr_key(snr_db: float) -> tuple[int, int]:
    milli = int(round(snr_db * 1000))
    return (0 if milli >= 0 else 1, abs(milli))


@dataclass
class TrialBlock:
    snr_db: float
    sigma2: float
    start: int
    truth: TruthBatch
    h: np.ndarray          # (B,)
    w: np.ndarray          # (B, K) unit-variance data noise
    w_pilot: np.ndarray    # (B, 2) unit-variance pilot noise

    def __len__(self):
        return len(self.h)

    def take(self, rows: slice) -> "TrialBlock":
        t = self.truth
        truth = TruthBatch(t.mode[rows], t.role[rows], t.far_idx[rows], t.near_idx[rows])
        return TrialBlock(self.snr_db, self.sigma2, self.start + (rows.start or 0), truth,
                          self.h[rows], self.w[rows], self.w_pilot[rows])


def make_block(table: ModeTable, snr_db: float, seed: int, index: int, size: int, K: int,
               role: str = NEAR) -> TrialBlock:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(*_snr_key(snr_db), index)))
    n_modes = table.L + 1
    mode = rng.integers(0, n_modes, size)
    role_u = rng.random(size)
    far_u = rng.random((size, K))
    near_u = rng.random((size, K))
    h = rayleigh(rng, size)
    w = rayleigh(rng, (size, K))
    w_pilot = rayleigh(rng, (size, 2))
    far_order = np.array([m.far_order for m in table])
    near_order = np.array([m.near_order or 1 for m in table])
    far_idx = np.floor(far_u * far_order[mode][:, None]).astype(np.int64)
    near_idx = np.floor(near_u * near_order[mode][:, None]).astype(np.int64)
    if role == NEAR:
        is_far = np.zeros(size, dtype=bool)
    elif role == FAR:
        is_far = np.ones(size, dtype=bool)
    else:
        is_far = role_u < 0.5
    codes = np.where(is_far, ROLE_CODES[FAR], ROLE_CODES[NEAR])
    codes[mode == 0] = ROLE_CODES[OMA]
    near_idx[mode == 0] = 0
    return TrialBlock(float(snr_db), noise_variance(snr_db), index * size,
                      TruthBatch(mode, codes, far_idx, near_idx), h, w, w_pilot)


def iter_blocks(table: ModeTable, snr_db: float, trials: int, K: int, seed: int,
                role: str = NEAR, block_size: int = 2048):
    n_blocks = -(-trials // block_size)
    for b in range(n_blocks):
        block = make_block(table, snr_db, seed, b, block_size, K, role)
        keep = min(block_size, trials - b * block_size)
        yield block if keep == block_size else block.take(slice(0, keep))


def make_blocks(table, snr_db, trials, K, seed, role=NEAR, block_size=2048) -> list[TrialBlock]:
    return list(iter_blocks(table, snr_db, trials, K, seed, role, block_size))


_ROLE_NAMES = {v: k for k, v in ROLE_CODES.items()}


def received_data(block: TrialBlock, table: ModeTable) -> np.ndarray:
    t = block.truth
    x = np.empty(block.w.shape, dtype=np.complex128)
    for l in range(table.L + 1):
        for code, name in _ROLE_NAMES.items():
            rows = (t.mode == l) & (t.role == code)
            if rows.any():
                x[rows] = modulate(table[l], name, t.far_idx[rows], t.near_idx[rows])
    return block.h[:, None] * x + np.sqrt(block.sigma2) * block.w


def received_pilots(block: TrialBlock, table: ModeTable):
    """(r_u, r_r) per trial; the pilot depends on the mode, not on the receiving UT."""
    pu = np.array([superposed_pilot(m) for m in table])[block.truth.mode]
    rot = np.exp(1j * np.asarray(table.phis))[block.truth.mode]
    s = np.sqrt(block.sigma2)
    r_u = block.h * pu + s * block.w_pilot[:, 0]
    r_r = block.h * pu * rot + s * block.w_pilot[:, 1]
    return r_u, r_r


def own_orders(block: TrialBlock, table: ModeTable) -> np.ndarray:
    t = block.truth
    far = np.array([m.far_order for m in table])[t.mode]
    near = np.array([m.near_order or 0 for m in table])[t.mode]
    return np.where(t.role == ROLE_CODES[NEAR], near, far)


def own_pilots(block: TrialBlock, table: ModeTable) -> np.ndarray:
    orders = own_orders(block, table)
    roles = block.truth.role
    return np.array([own_pilot(int(o), _ROLE_NAMES[int(r)]) for o, r in zip(orders, roles)])


def decide(name: str, block: TrialBlock, setup: Setup, data: Mapping[int, np.ndarray]) -> BatchDecisions:
    """Run one classifier; ``data`` maps id(table) -> received samples for that table."""
    own = own_orders(block, setup.base)
    if name in ("mlc", "prm"):
        table = setup.data_table(name)
        return three_step_batch(data[id(table)], block.h, block.sigma2, table, own)
    if name == "joint":
        return joint_batch(data[id(setup.base)], block.h, block.sigma2, setup.base)
    if name == "prc":
        r_u, r_r = received_pilots(block, setup.prc)
        return prc_batch(r_u, r_r, block.h, setup.prc, setup.plan, own_pilots(block, setup.base), own)
    if name == GENIE:
        return genie_decisions(block.truth)
    raise ValueError(f"unknown classifier {name!r}")


def _rates(block: TrialBlock, dec: BatchDecisions, model: RateModel) -> np.ndarray:
    """Per-trial near-UT rate log2(1 + eta_{l->m}); zero unless (NOMA, near) was decided."""
    r = model.rate(block.truth.mode, dec.mode, np.abs(block.h) ** 2, block.sigma2)
    return np.where(dec.noma & dec.near, r, 0.0)


def _capacity_mask(block: TrialBlock) -> np.ndarray:
    return (block.truth.mode > 0) & (block.truth.role == ROLE_CODES[NEAR])


def ml_capacity_samples(block: TrialBlock, table: ModeTable, model: RateModel) -> np.ndarray:
    """Per-trial MLC rates on the NOMA near-UT trials of ``block`` sent with ``table``."""
    dec = three_step_batch(received_data(block, table), block.h, block.sigma2, table,
                           own_orders(block, table))
    return _rates(block, dec, model)[_capacity_mask(block)]


# ---------------------------------------------------------------- statistics


@dataclass(frozen=True)
class Rate:
    """Binomial rate with its Wilson 95% interval."""

    value: float
    lo: float
    hi: float
    k: int
    n: int

    @property
    def half_width(self) -> float:
        return (self.hi - self.lo) / 2

    @classmethod
    def wilson(cls, k: int, n: int, z: float = Z95) -> "Rate":
        if n == 0:
            return cls(math.nan, math.nan, math.nan, 0, 0)
        p = k / n
        denom = 1 + z * z / n
        center = (p + z * z / (2 * n)) / denom
        half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
        return cls(p, max(0.0, center - half), min(1.0, center + half), int(k), int(n))


@dataclass(frozen=True)
class Mean:
    value: float
    half_width: float
    n: int


class Tally:
    """Running counts for every classifier at one SNR; merged in block order."""

    def __init__(self, names: Sequence[str], L: int):
        c = len(names)
        self.names = tuple(names)
        self.trials = 0
        self.noma_trials = 0
        self.symbols = 0
        self.oma_noma_err = np.zeros(c, dtype=np.int64)
        self.nearfar_err = np.zeros(c, dtype=np.int64)
        self.mc_n = np.zeros(c, dtype=np.int64)
        self.mc_err = np.zeros(c, dtype=np.int64)
        self.frame_loss = np.zeros(c, dtype=np.int64)
        self.loss_cross = np.zeros((c, c), dtype=np.int64)
        self.class_err = np.zeros(c, dtype=np.int64)
        self.sym_err = np.zeros(c, dtype=np.int64)
        self.confusion = np.zeros((c, L + 1, L + 1), dtype=np.int64)
        self.cap_n = 0
        self.cap_sum = np.zeros(c)
        self.cap_cross = np.zeros((c, c))
        self.cap_conf = np.zeros((c, L + 1, L + 1), dtype=np.int64)   # truth x decided, capacity trials
        self.cap_near = np.zeros((c, L + 1), dtype=np.int64)          # near decisions per decided mode

    def add(self, block: TrialBlock, decisions: Sequence[BatchDecisions], errors: Sequence[np.ndarray],
            rates: Sequence[np.ndarray]):
        t = block.truth
        n, K = block.w.shape
        t_noma = t.mode > 0
        t_near = t.role == ROLE_CODES[NEAR]
        self.trials += n
        self.noma_trials += int(t_noma.sum())
        self.symbols += n * K
        cap = _capacity_mask(block)
        self.cap_n += int(cap.sum())
        r = np.stack([x[cap] for x in rates])
        self.cap_sum += r.sum(axis=1)
        self.cap_cross += r @ r.T
        lost = np.stack([e > 0 for e in errors]).astype(np.int64)
        self.loss_cross += lost @ lost.T
        for i, (dec, err) in enumerate(zip(decisions, errors)):
            self.oma_noma_err[i] += int(np.sum(dec.noma != t_noma))
            nf_ok = dec.noma & (dec.near == t_near)
            self.nearfar_err[i] += int(np.sum(t_noma & ~nf_ok))
            cond = t_noma & nf_ok
            self.mc_n[i] += int(cond.sum())
            self.mc_err[i] += int(np.sum(cond & (dec.mode != t.mode)))
            self.frame_loss[i] += int(np.sum(err > 0))
            wrong = (dec.noma != t_noma) | (t_noma & ((dec.mode != t.mode) | (dec.near != t_near)))
            self.class_err[i] += int(wrong.sum())
            self.sym_err[i] += int(err.sum())
            np.add.at(self.confusion[i], (t.mode, dec.mode), 1)
            np.add.at(self.cap_conf[i], (t.mode[cap], dec.mode[cap]), 1)
            np.add.at(self.cap_near[i], dec.mode[cap & dec.near], 1)

    def capacity_mean(self, i: int) -> Mean:
        n = self.cap_n
        if n == 0:
            return Mean(math.nan, math.nan, 0)
        m = self.cap_sum[i] / n
        return Mean(m, _half(self.cap_cross[i, i], self.cap_sum[i], n), n)

    def capacity_diff(self, i: int, j: int) -> Mean:
        """Paired mean of rate_i - rate_j with its normal-approximation 95% half-width."""
        n = self.cap_n
        if n == 0:
            return Mean(math.nan, math.nan, 0)
        s = self.cap_sum[i] - self.cap_sum[j]
        ss = self.cap_cross[i, i] + self.cap_cross[j, j] - 2 * self.cap_cross[i, j]
        return Mean(s / n, _half(ss, s, n), n)

    def frame_loss_diff(self, i: int, j: int) -> Mean:
        """Paired difference of frame-loss rates, classifier i minus j."""
        n = self.trials
        s = float(self.frame_loss[i] - self.frame_loss[j])
        ss = float(self.loss_cross[i, i] + self.loss_cross[j, j] - 2 * self.loss_cross[i, j])
        return Mean(s / n, _half(ss, s, n), n)

    def capacity_inputs(self, i: int) -> CapacityInputs:
        conf = self.cap_conf[i].astype(float)
        L1 = conf.shape[0]
        p = np.eye(L1)
        rows = conf.sum(axis=1)
        p[rows > 0] = conf[rows > 0] / rows[rows > 0, None]
        decided = conf.sum(axis=0)
        q = np.divide(self.cap_near[i], decided, out=np.zeros(L1), where=decided > 0)
        return CapacityInputs(p, q)


def _half(sumsq: float, s: float, n: int) -> float:
    if n < 2:
        return math.nan
    var = max(0.0, (sumsq - s * s / n) / (n - 1))
    return Z95 * math.sqrt(var / n)


@dataclass(frozen=True)
class CurvePoint:
    snr_db: float
    classifier: str
    trials: int
    oma_noma_error: Rate
    classification_error: Rate
    nearfar_error: Rate
    mc_error: Rate
    frame_loss: Rate
    ser: Rate
    capacity: Mean
    capacity_vs_genie: Mean
    capacity_pq: float
    confusion: np.ndarray = field(compare=False, repr=False)

    def __post_init__(self):
        for r in (self.oma_noma_error, self.classification_error, self.nearfar_error, self.mc_error, self.frame_loss, self.ser):
            if r.n and not (0.0 <= r.value <= 1.0 and r.half_width >= 0.0):
                raise InvariantError(f"rate out of range at {self.snr_db} dB ({self.classifier})")


@dataclass
class SweepResult:
    config: SimConfig
    setup: Setup
    points: list[CurvePoint]
    tallies: dict[float, Tally]

    def point(self, snr_db: float, classifier: str) -> CurvePoint:
        for p in self.points:
            if p.snr_db == snr_db and p.classifier == classifier:
                return p
        raise KeyError((snr_db, classifier))

    def capacity_diff(self, snr_db: float, a: str, b: str) -> Mean:
        t = self.tallies[float(snr_db)]
        return t.capacity_diff(t.names.index(a), t.names.index(b))

    def frame_loss_diff(self, snr_db: float, a: str, b: str) -> Mean:
        t = self.tallies[float(snr_db)]
        return t.frame_loss_diff(t.names.index(a), t.names.index(b))


def capacity_gain2(seed: int, snr_db: float, n: int) -> np.ndarray:
    """|h|^2 draws shared by every scheme's capacity expression at one SNR."""
    rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(*_snr_key(snr_db), _CAPACITY_STREAM)))
    return np.abs(rayleigh(rng, n)) ** 2


def _internal_names(config: SimConfig) -> tuple[str, ...]:
    names = tuple(config.classifiers)
    return names if GENIE in names else names + (GENIE,)


def _run_block(block: TrialBlock, setup: Setup, names: Sequence[str]):
    data = {}
    for name in names:
        table = setup.data_table(name)
        if id(table) not in data:
            data[id(table)] = received_data(block, table)
    decisions, errors, rates = [], [], []
    for name in names:
        dec = decide(name, block, setup, data)
        table = setup.prc if name == "prc" else setup.data_table(name)
        _, err = detect_batch(data[id(setup.data_table(name))], block.h, table, dec, block.truth)
        decisions.append(dec)
        errors.append(err)
        rates.append(_rates(block, dec, setup.rate_model))
    return data, decisions, errors, rates


def run_sweep(config: SimConfig, progress: Callable[[float, int], None] | None = None,
              setup: Setup | None = None) -> SweepResult:
    setup = resolve(config) if setup is None else setup
    names = _internal_names(config)
    points: list[CurvePoint] = []
    tallies: dict[float, Tally] = {}
    for snr in config.snr_db:
        tally = Tally(names, config.table.L)
        for block in iter_blocks(setup.base, snr, config.trials, config.K, config.seed,
                                 config.role, config.block_size):
            _, decisions, errors, rates = _run_block(block, setup, names)
            tally.add(block, decisions, errors, rates)
            if progress is not None:
                progress(snr, tally.trials)
        tallies[snr] = tally
        gain2 = capacity_gain2(config.seed, snr, config.capacity_samples)
        g = names.index(GENIE)
        for i, name in enumerate(names):
            if name not in config.classifiers:
                continue
            cap_pq = capacity(setup.base, tally.capacity_inputs(i), snr, gain2=gain2,
                              sic_policy=config.sic_policy)
            points.append(CurvePoint(
                snr, name, tally.trials,
                Rate.wilson(tally.oma_noma_err[i], tally.trials),
                Rate.wilson(tally.class_err[i], tally.trials),
                Rate.wilson(tally.nearfar_err[i], tally.noma_trials),
                Rate.wilson(tally.mc_err[i], tally.mc_n[i]),
                Rate.wilson(tally.frame_loss[i], tally.trials),
                Rate.wilson(tally.sym_err[i], tally.symbols),
                tally.capacity_mean(i),
                tally.capacity_diff(i, g),
                cap_pq,
                tally.confusion[i].copy(),
            ))
    return SweepResult(config, setup, points, tallies)


@dataclass
class TrialRecord:
    snr_db: float
    index: int
    mode: int
    role: str
    h: complex
    samples: dict            # classifier -> received samples (shared objects where tables agree)
    decisions: dict          # classifier -> ClassificationResult
    symbol_errors: dict
    rates: dict


def run_trial(config: SimConfig, snr_db: float, trial_index: int,
              setup: Setup | None = None) -> TrialRecord:
    if not 0 <= trial_index < config.trials:
        raise ValueError("trial index out of range")
    setup = resolve(config) if setup is None else setup
    b, r = divmod(trial_index, config.block_size)
    block = make_block(setup.base, snr_db, config.seed, b, config.block_size, config.K, config.role)
    one = block.take(slice(r, r + 1))
    names = tuple(config.classifiers)
    data, decisions, errors, rates = _run_block(one, setup, names)
    return TrialRecord(
        float(snr_db), trial_index, int(one.truth.mode[0]), _ROLE_NAMES[int(one.truth.role[0])],
        complex(one.h[0]),
        {n: data[id(setup.data_table(n))] for n in names},
        {n: d.result(0) for n, d in zip(names, decisions)},
        {n: int(e[0]) for n, e in zip(names, errors)},
        {n: float(x[0]) for n, x in zip(names, rates)},
    )
