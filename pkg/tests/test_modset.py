import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nomablind.modset import (CASE_ROWS, ModeTable, ModulationError, ModulationMode,
                              apply_rotation, base_constellation, case_table,
                              composite_constellation, make_table, min_distance,
                              min_distance_count, noma_union, pam_levels)

angles = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)
orders = st.sampled_from([4, 16, 64])


def _same_points(a, b, tol=1e-12):
    d = np.abs(a[:, None] - b[None, :])
    return np.all(d.min(axis=1) < tol) and np.all(d.min(axis=0) < tol)


class TestBaseConstellation:
    def test_qpsk_points(self):
        q = base_constellation(4)
        expected = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
        assert _same_points(q.points, expected)
        assert q.avg_power == pytest.approx(1.0, abs=1e-12)

    def test_16qam_grid(self):
        s = base_constellation(16).points * np.sqrt(10)
        assert set(np.round(s.real, 9)) == {-3.0, -1.0, 1.0, 3.0}
        assert set(np.round(s.imag, 9)) == {-3.0, -1.0, 1.0, 3.0}

    @pytest.mark.parametrize("order", [4, 16, 64])
    def test_unit_power_and_size(self, order):
        c = base_constellation(order)
        assert len(c) == order
        assert abs(c.avg_power - 1.0) < 1e-12

    def test_unsupported_order(self):
        with pytest.raises(ModulationError, match="unsupported modulation order"):
            base_constellation(8)

    @pytest.mark.parametrize("order", [16, 64])
    def test_gray_neighbours_differ_in_one_bit(self, order):
        c = base_constellation(order)
        d = np.abs(c.points[:, None] - c.points[None, :])
        step = np.min(d[d > 1e-9])
        for i, j in zip(*np.nonzero(np.abs(d - step) < 1e-9)):
            assert bin(int(c.labels[i]) ^ int(c.labels[j])).count("1") == 1

    @pytest.mark.parametrize("order", [4, 16, 64])
    def test_pam_levels_match_points(self, order):
        lv = pam_levels(order)
        pts = base_constellation(order).points
        assert np.allclose(np.sort(np.unique(np.round(pts.real, 12))), lv)


class TestComposite:
    def test_case1_mode1(self, case1):
        c = composite_constellation(case1[1])
        assert len(c) == 16
        assert c.avg_power == pytest.approx(1.0, abs=1e-12)

    def test_case2_mode1_size(self, case2):
        assert len(composite_constellation(case2[1])) == 64

    def test_oma_rejected(self, case1):
        with pytest.raises(ModulationError, match="composite undefined for OMA"):
            composite_constellation(case1[0])

    def test_far_bits_are_msbs(self, case1):
        m = case1[1]
        c = composite_constellation(m)
        far = base_constellation(4).points
        near = base_constellation(4).points
        for i in range(16):
            a, b = c.labels[i] >> 2, c.labels[i] & 3
            assert c.points[i] == pytest.approx(np.sqrt(m.power_far) * far[a]
                                                + np.sqrt(m.power_near) * near[b])

    def test_zero_near_power_replicates_far(self):
        m = ModulationMode(1, 4, 4, 1.0, 0.0)
        c = composite_constellation(m)
        far = base_constellation(4).points
        for a in range(4):
            assert np.allclose(c.points[a * 4:(a + 1) * 4], far[a])

    @pytest.mark.parametrize("name", ["case1", "case2", "case3"])
    def test_all_modes_unit_power(self, name):
        t = case_table(name)
        for l in range(t.L + 1):
            assert t.constellation(l).avg_power == pytest.approx(1.0, abs=1e-12)


class TestRotation:
    def test_zero_is_identity(self):
        c = base_constellation(16)
        assert np.array_equal(apply_rotation(c, 0.0).points, c.points)

    def test_qpsk_quarter_turn(self):
        c = base_constellation(4)
        r = apply_rotation(c, np.pi / 2)
        assert _same_points(r.points, c.points)
        assert not np.allclose(r.points, c.points)

    def test_power_kept(self):
        assert apply_rotation(base_constellation(16), 0.6).avg_power == pytest.approx(1.0, abs=1e-12)

    @given(orders, angles)
    def test_distances_preserved(self, order, theta):
        c = base_constellation(order)
        r = apply_rotation(c, theta)
        d0 = np.abs(c.points[:, None] - c.points[None, :])
        d1 = np.abs(r.points[:, None] - r.points[None, :])
        assert np.max(np.abs(d0 - d1)) < 1e-12


class TestMinDistance:
    def test_self_distance_zero(self):
        c = base_constellation(16)
        assert min_distance(c, c) == 0.0

    def test_qpsk_vs_rotated_qpsk(self):
        q = base_constellation(4)
        d, n = min_distance_count(q, apply_rotation(q, np.pi / 4))
        assert d == pytest.approx(0.7653668647301793, abs=1e-12)
        assert d == pytest.approx(2 * np.sin(np.pi / 8), abs=1e-12)
        assert n == 8

    def test_case1_oracle_values(self, case1):
        # independent enumeration: rotating by 0.6 shrinks this pairwise distance
        chi0, chi1 = case1.constellation(0), case1.constellation(1)
        d, n = min_distance_count(chi1, chi0)
        assert d == pytest.approx(0.34164078649987356, abs=1e-12)
        assert n == 4
        assert min_distance(apply_rotation(chi1, 0.6), chi0) == pytest.approx(0.1362467880367464, abs=1e-12)

    def test_case1_oma_vs_union(self, case1):
        u = noma_union(case1)
        q = case1.constellation(0)
        assert min_distance(q, u) == pytest.approx(0.24654512601220288, abs=1e-12)
        assert min_distance(apply_rotation(q, 0.79), u) == pytest.approx(0.31582122678908614, abs=1e-12)

    def test_empty_rejected(self):
        from nomablind.modset import ConstellationSet
        empty = ConstellationSet(np.array([], dtype=complex), np.array([], dtype=int), 0)
        with pytest.raises(ModulationError):
            min_distance(empty, base_constellation(4))

    @given(orders, orders, angles)
    def test_symmetric(self, a, b, theta):
        A = base_constellation(a)
        B = apply_rotation(base_constellation(b), theta)
        assert min_distance(A, B) == min_distance(B, A)

    @given(angles, angles)
    def test_common_rotation_invariant(self, t1, t2):
        t = case_table("case1")
        A, B = t.constellation(1), apply_rotation(t.constellation(0), t1)
        d = min_distance(A, B)
        assert abs(min_distance(apply_rotation(A, t2), apply_rotation(B, t2)) - d) < 1e-12


class TestTable:
    def test_union_sizes(self, case1, case3):
        assert len(noma_union(case1)) == 48
        assert len(noma_union(case3)) == 3 * 64 + 2 * 256

    def test_single_mode_union(self):
        t = make_table([(4, None, 1.0), (4, 4, 0.8)])
        assert np.array_equal(noma_union(t).points, t.constellation(1).points)

    def test_case_power_ratios(self):
        assert [m.power_far for m in case_table("case1")] == [1.0, 0.8, 0.8621, 0.9163]
        assert [m.power_far for m in case_table("case3")] == [1.0, 0.7619, 0.8653, 0.9275, 0.95, 0.97]
        assert [m.power_far for m in case_table("case2")] == [1.0, 0.8653, 0.95]

    def test_grouping_contiguous(self, case3):
        assert case3.grouping == {4: (1, 2, 3), 16: (4, 5)}

    def test_non_contiguous_rejected(self):
        with pytest.raises(ModulationError, match="contiguous"):
            make_table([(16, None, 1.0), (4, 16, 0.8), (16, 16, 0.95), (4, 16, 0.9)])

    def test_power_sum_checked(self):
        with pytest.raises(ModulationError, match="sum"):
            ModulationMode(1, 4, 4, 0.8, 0.21)

    def test_one_oma_mode(self):
        with pytest.raises(ModulationError):
            ModeTable((ModulationMode(1, 4, 4, 0.8, 0.2),))

    def test_thetas_round_trip(self, case1):
        t = case1.with_thetas([0.6, 0, 0, 0])
        assert t.thetas == (0.6, 0.0, 0.0, 0.0)
        assert np.allclose(t.constellation(0).points, case1.constellation(0).points * np.exp(0.6j))

    @pytest.mark.parametrize("name", list(CASE_ROWS))
    def test_axis_levels_rebuild_sets(self, name):
        t = case_table(name).with_thetas([0.3] * len(CASE_ROWS[name]))
        for l in range(t.L + 1):
            for far_only in ((False, True) if l else (False,)):
                lv, rot = t.axis_levels(l, far_only)
                pts = np.exp(1j * rot) * (lv[:, None] + 1j * lv[None, :]).ravel()
                ref = t.far_set(l).points if far_only else t.constellation(l).points
                assert len(pts) == len(ref)
                assert _same_points(pts, ref, 1e-12)
