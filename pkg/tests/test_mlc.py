import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nomablind import _kernels
from nomablind.channel import FAR, NEAR, OMA, ChannelRealization, transmit_data
from nomablind.mlc import (ClassificationResult, Hypothesis, Kind, build_prm_table,
                           classify_joint, classify_modulation, classify_near_far,
                           classify_oma_noma, classify_three_step, joint_batch,
                           joint_log_likelihood, likelihood, log_likelihood, oma_only_thetas,
                           sample_logliks, three_step_batch)
from nomablind.modset import base_constellation, case_table, noma_union
from nomablind.sim import SimConfig, make_blocks, own_orders, received_data, run_sweep

NOISELESS = 1e-9


def _chan(h=1.0, s2=1.0):
    return ChannelRealization(h, s2, h)


def _frames(table, l, role, n, K, s2, seed):
    rng = np.random.default_rng(seed)
    ys, hs = [], []
    for _ in range(n):
        h = (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2)
        y, _ = transmit_data(table[l], role, ChannelRealization(h, s2, h), K, rng)
        ys.append(y)
        hs.append(h)
    return np.array(ys), np.array(hs)


class TestLikelihood:
    def test_origin_qpsk(self):
        v = likelihood(0j, base_constellation(4), _chan())
        assert v == pytest.approx(0.11709966304863834, rel=1e-12)
        assert v == pytest.approx(np.exp(-1) / np.pi, rel=1e-12)

    def test_rejects_zero_noise(self):
        with pytest.raises(ValueError):
            likelihood(0j, base_constellation(4), _chan(s2=0.0))

    def test_finite_far_from_points(self):
        v = log_likelihood(1e3 + 1e3j, base_constellation(16), _chan(s2=1e-6))
        assert np.isfinite(v)

    @given(st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False),
           st.floats(1e-4, 10.0), st.sampled_from([4, 16, 64]))
    def test_log_domain_matches_direct(self, y, s2, order):
        pts = base_constellation(order).points
        direct = np.mean(np.exp(-np.abs(y - pts) ** 2 / s2)) / (np.pi * s2)
        v = log_likelihood(y, base_constellation(order), _chan(s2=s2))
        assert np.isfinite(v)
        if direct > 1e-250:
            assert np.exp(v) == pytest.approx(direct, rel=1e-9)

    @pytest.mark.parametrize("s2", [0.1, 1.0])
    def test_quadrature(self, case1, s2):
        for cset in (case1.constellation(0), case1.constellation(1)):
            ext = np.max(np.abs(cset.points)) + 6 * np.sqrt(s2)
            g = np.linspace(-ext, ext, 801)
            Y = (g[:, None] + 1j * g[None, :]).ravel()
            f = np.exp(sample_logliks(Y[None, :], 1.0, s2, cset)[0]).reshape(801, 801)
            total = np.trapezoid(np.trapezoid(f, g, axis=1), g)
            assert total == pytest.approx(1.0, abs=0.01)

    def test_product_kernel_matches_direct(self, case3, rng):
        t = case3.with_thetas([0.69, 0, 0.2, 0, 0, 1.0])
        ys = (rng.standard_normal((40, 10)) + 1j * rng.standard_normal((40, 10)))
        hs = (rng.standard_normal(40) + 1j * rng.standard_normal(40))[:, None]
        s2 = rng.uniform(0.01, 1.0, 40)[:, None]
        for l in range(t.L + 1):
            lv, rot = t.axis_levels(l)
            fast = _kernels.product_set_loglik(ys, hs, s2, lv, rot)
            slow = _kernels.loglik(ys, hs, s2, t.constellation(l).points)
            assert np.allclose(fast, slow, rtol=1e-9, atol=1e-9)


class TestJointLogLikelihood:
    def test_single_sample(self):
        c = base_constellation(16)
        y = 0.3 - 0.2j
        assert joint_log_likelihood([y], c, _chan(s2=0.5)) == log_likelihood(y, c, _chan(s2=0.5))

    def test_two_identical_samples(self):
        c = base_constellation(4)
        y = 0.1 + 0.9j
        one = log_likelihood(y, c, _chan(s2=0.3))
        assert joint_log_likelihood([y, y], c, _chan(s2=0.3)) == 2 * one

    @given(st.permutations(list(range(10))))
    def test_permutation_invariant(self, perm):
        ys = np.exp(1j * np.arange(10)) * np.linspace(0.2, 1.5, 10)
        c = noma_union(case_table("case1"))
        a = joint_log_likelihood(ys, c, _chan(s2=0.2))
        assert joint_log_likelihood(ys[list(perm)], c, _chan(s2=0.2)) == a

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            joint_log_likelihood([], base_constellation(4), _chan())


class TestHypothesisTypes:
    def test_mode_required(self):
        with pytest.raises(ValueError):
            Hypothesis(Kind.NEAR)
        with pytest.raises(ValueError):
            Hypothesis(Kind.OMA, 1)

    def test_oma_result_has_no_mode(self):
        with pytest.raises(ValueError):
            ClassificationResult("OMA", mode_id=1)


class TestNoiseless:
    def test_oma_and_noma(self, table, rng):
        chan = _chan(0.7 + 0.4j, NOISELESS)
        y, _ = transmit_data(table[0], OMA, chan, 10, rng)
        assert classify_oma_noma(y, table, chan) == "OMA"
        assert classify_joint(y, table, chan) == Hypothesis(Kind.OMA)
        for l in range(1, table.L + 1):
            y, _ = transmit_data(table[l], NEAR, chan, 10, rng)
            assert classify_oma_noma(y, table, chan) == "NOMA"
            assert classify_modulation(y, table, chan) == l

    def test_three_step_fully_correct(self, table, rng):
        chan = _chan(-0.3 + 1.2j, NOISELESS)
        for l in range(1, table.L + 1):
            y, _ = transmit_data(table[l], NEAR, chan, 10, rng)
            r = classify_three_step(y, table, chan, own_order=table[l].near_order)
            assert (r.oma_noma, r.mode_id, r.near_far) == ("NOMA", l, NEAR)

    def test_joint_case2_near(self, case2):
        ys, hs = _frames(case2, 1, NEAR, 1000, 10, 1e-8, 3)
        dec = joint_batch(ys, hs, 1e-8, case2)
        assert np.all(dec.noma & (dec.mode == 1) & dec.near)

    def test_near_far_test(self, case1, rng):
        chan = _chan(0.9j, NOISELESS)
        for l in range(1, 4):
            y, _ = transmit_data(case1[l], NEAR, chan, 10, rng)
            assert classify_near_far(y, l, case1, chan) == NEAR
            y, _ = transmit_data(case1[l], FAR, chan, 10, rng)
            assert classify_near_far(y, l, case1, chan) == "far"
        with pytest.raises(ValueError):
            classify_near_far(y, 0, case1, chan)


class TestSkipRule:
    def test_case2_mode1_inferred(self, case2):
        # orders differ in mode 1, so the UT's own order settles near/far
        chan = _chan(1.0, NOISELESS)
        y, _ = transmit_data(case2[1], NEAR, chan, 10, np.random.default_rng(0))
        dec = three_step_batch([y], 1.0, NOISELESS, case2, own_order=16, keep_scores=True)
        assert dec.mode[0] == 1 and dec.near[0]
        assert np.isnan(dec.scores["Hl^f"][0])
        dec = three_step_batch([y], 1.0, NOISELESS, case2, own_order=4, keep_scores=True)
        assert not dec.near[0]

    def test_case1_always_runs(self, case1):
        ys, hs = _frames(case1, 2, NEAR, 20, 10, 0.05, 4)
        dec = three_step_batch(ys, hs, 0.05, case1, own_order=4, keep_scores=True)
        noma = dec.mode > 0
        assert np.all(np.isfinite(dec.scores["Hl^f"][noma]))


class TestDecisionProperties:
    def test_scale_invariance(self, case1):
        # dropping the 1/(pi sigma2) factor shifts every score equally
        ys, hs = _frames(case1, 1, NEAR, 200, 10, 0.1, 5)
        dec = three_step_batch(ys, hs, 0.1, case1, keep_scores=True)
        s = dec.scores
        shift = 10 * np.log(np.pi * 0.1)
        noma = (s["HN"] + shift) > (s["H0"] + shift)
        assert np.array_equal(noma, dec.noma)
        assert np.array_equal(np.argmax(s["Hl"] + shift, axis=1) + 1, np.where(dec.noma, dec.mode, np.argmax(s["Hl"], axis=1) + 1))

    def test_common_rotation_bit_identical(self, case3):
        # turning every mode by theta is the same as turning h: identical decisions
        blocks = make_blocks(case3, 8.0, 2000, 10, 0)
        theta = 1.1
        rot = case3.with_thetas([theta] * (case3.L + 1))
        for b in blocks:
            own = own_orders(b, case3)
            ys = received_data(b, rot)
            d0 = three_step_batch(ys, b.h * np.exp(1j * theta), b.sigma2, case3, own)
            d1 = three_step_batch(ys, b.h, b.sigma2, rot, own)
            assert np.array_equal(d0.noma, d1.noma)
            assert np.array_equal(d0.mode, d1.mode)
            assert np.array_equal(d0.near, d1.near)

    def test_common_rotation_same_error_rate(self, case3):
        rot = case3.with_thetas([1.1] * (case3.L + 1))
        err = []
        for t in (case3, rot):
            wrong = n = 0
            for b in make_blocks(case3, 8.0, 20_000, 10, 0):
                d = three_step_batch(received_data(b, t), b.h, b.sigma2, t, own_orders(b, t))
                wrong += int(np.sum(d.noma != (b.truth.mode > 0)))
                n += len(b)
            err.append(wrong / n)
        half = 1.96 * np.sqrt(err[0] * (1 - err[0]) / n)
        assert abs(err[0] - err[1]) < 2 * half

    def test_zero_thetas_bit_identical(self, case1):
        prm = build_prm_table(case1, [0.0] * 4)
        b = make_blocks(case1, 10.0, 2000, 10, 1)[0]
        d0 = three_step_batch(received_data(b, case1), b.h, b.sigma2, case1)
        d1 = three_step_batch(received_data(b, prm), b.h, b.sigma2, prm)
        assert np.array_equal(d0.mode, d1.mode) and np.array_equal(d0.near, d1.near)

    def test_prm_table_length(self, case1):
        with pytest.raises(ValueError):
            build_prm_table(case1, [0.6])
        assert oma_only_thetas(case1, 0.6) == [0.6, 0.0, 0.0, 0.0]


class TestMonteCarlo:
    @pytest.fixture(scope="class")
    @staticmethod
    def case1_13db():
        cfg = SimConfig(case_table("case1"), (13.0,), trials=100_000,
                        classifiers=("mlc", "prm", "joint"))
        return run_sweep(cfg)

    def test_joint_not_better_than_three_step(self, case1_13db):
        j = case1_13db.point(13.0, "joint").classification_error.value
        m = case1_13db.point(13.0, "mlc").classification_error.value
        assert j >= m

    def test_prm_beats_mlc_on_oma_noma(self, case1_13db):
        prm = case1_13db.point(13.0, "prm").oma_noma_error
        mlc = case1_13db.point(13.0, "mlc").oma_noma_error
        assert prm.value < mlc.value

    def test_confusion_adjacent(self):
        cfg = SimConfig(case_table("case1"), (20.0,), trials=100_000, classifiers=("mlc",))
        c = run_sweep(cfg).point(20.0, "mlc").confusion
        adj = c[1, 2] + c[2, 1] + c[2, 3] + c[3, 2]
        assert adj > c[1, 3] + c[3, 1]

    def test_oma_noma_decreasing_with_snr(self):
        cfg = SimConfig(case_table("case1"), tuple(range(0, 21, 5)), trials=20_000,
                        classifiers=("mlc",))
        pts = [p.oma_noma_error for p in run_sweep(cfg).points]
        for a, b in zip(pts, pts[1:]):
            assert b.value <= a.value + a.half_width + b.half_width

    def test_near_far_easier_than_oma_noma(self, case1):
        n = 3000
        yn, hn = _frames(case1, 2, NEAR, n, 10, 0.1, 8)
        yf, hf = _frames(case1, 2, FAR, n, 10, 0.1, 9)
        err = 0
        for ys, hs, role in ((yn, hn, NEAR), (yf, hf, "far")):
            for y, h in zip(ys, hs):
                err += classify_near_far(y, 2, case1, _chan(h, 0.1)) != role
        nf_rate = err / (2 * n)
        cfg = SimConfig(case1, (10.0,), trials=2 * n, classifiers=("mlc",))
        on_rate = run_sweep(cfg).point(10.0, "mlc").oma_noma_error.value
        assert nf_rate < on_rate
