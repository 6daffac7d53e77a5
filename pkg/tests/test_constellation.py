import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffbps.constellation import (
    Constellation,
    ConstellationFormatError,
    DegenerateConstellationError,
    UnsupportedOrderError,
    gray_qam,
    label_bits,
    nearest_symbol,
    normalize,
    parse,
    serialize,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
point_arrays = arrays(np.complex128, st.integers(1, 32), elements=st.complex_numbers(max_magnitude=10, allow_nan=False))


def _random_constellation(m, seed):
    rng = np.random.default_rng(seed)
    pts = normalize(rng.standard_normal(1 << m) + 1j * rng.standard_normal(1 << m))
    return Constellation(pts, rng.permutation(1 << m))


class TestNormalize:
    def test_examples(self):
        np.testing.assert_allclose(normalize([1 + 1j, -1 - 1j]), np.array([1 + 1j, -1 - 1j]) / math.sqrt(2))
        np.testing.assert_allclose(normalize([1, -1]), [1, -1])
        np.testing.assert_allclose(normalize([2]), [1])

    def test_all_zero_rejected(self):
        with pytest.raises(DegenerateConstellationError):
            normalize([0, 0])

    @given(point_arrays)
    def test_unit_power_and_idempotent(self, pts):
        if np.mean(np.abs(pts) ** 2) < 1e-6:
            return
        once = normalize(pts)
        assert np.mean(np.abs(once) ** 2) == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(normalize(once), once, atol=1e-12)

    @given(point_arrays, st.floats(-math.pi, math.pi))
    def test_commutes_with_rotation(self, pts, theta):
        if np.mean(np.abs(pts) ** 2) < 1e-6:
            return
        rot = np.exp(1j * theta)
        np.testing.assert_allclose(normalize(rot * pts), rot * normalize(pts), atol=1e-12)


class TestGrayQam:
    def test_qpsk(self):
        c = gray_qam(2)
        expected = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / math.sqrt(2)
        np.testing.assert_allclose(c.points, expected)

    def test_64qam_levels(self):
        c = gray_qam(6)
        assert c.size == 64
        assert c.mean_power() == pytest.approx(1.0, abs=1e-12)
        levels = np.array([-7, -5, -3, -1, 1, 3, 5, 7]) / math.sqrt(42)
        np.testing.assert_allclose(np.unique(np.round(c.points.real, 12)), np.round(levels, 12))
        np.testing.assert_allclose(np.unique(np.round(c.points.imag, 12)), np.round(levels, 12))

    def test_odd_order_rejected(self):
        with pytest.raises(UnsupportedOrderError):
            gray_qam(3)

    @pytest.mark.parametrize("m", [2, 4, 6, 8])
    def test_grid_neighbours_differ_in_one_bit(self, m):
        c = gray_qam(m)
        spacing = np.min(np.abs(np.diff(np.unique(np.round(c.points.real, 12)))))
        bits = c.bit_labels
        pairs = 0
        for i in range(c.size):
            for j in range(i + 1, c.size):
                dist = abs(c.points[i] - c.points[j])
                if abs(dist - spacing) < 1e-9:
                    pairs += 1
                    assert np.sum(bits[i] != bits[j]) == 1
        side = 1 << (m // 2)
        assert pairs == 2 * side * (side - 1)

    def test_labels_are_permutation(self):
        c = gray_qam(6)
        assert sorted(c.labels) == list(range(64))


class TestNearestSymbol:
    def test_exact_hit(self):
        c = gray_qam(4)
        assert nearest_symbol(c.points[3], c) == 3

    def test_tie_goes_to_lowest_index(self):
        assert nearest_symbol(0, gray_qam(2)) == 0

    def test_brute_force(self):
        c = gray_qam(2)
        target = (1 + 1j) / math.sqrt(2)
        assert c.points[nearest_symbol(0.9 + 0.9j, c)] == pytest.approx(target)

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 0.999), st.floats(-math.pi, math.pi))
    def test_small_perturbation_keeps_index(self, seed, frac, angle):
        c = _random_constellation(4, seed)
        diffs = np.abs(c.points[:, None] - c.points[None, :])
        dmin = np.min(diffs[~np.eye(c.size, dtype=bool)])
        eps = frac * dmin / 2 * np.exp(1j * angle)
        for i in range(c.size):
            assert nearest_symbol(c.points[i] + eps, c) == i


class TestSerialize:
    def test_qpsk_first_row(self):
        text = serialize(gray_qam(2), precision=8)
        assert text.splitlines()[0] == "re\tim\tlabel"
        assert text.splitlines()[1] == "0.70710678\t0.70710678\t0"

    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_round_trip_is_bit_exact(self, m, seed):
        c = _random_constellation(m, seed)
        back = parse(serialize(c))
        assert back.equals(c)

    def test_64_rows_with_hex_labels(self):
        rows = serialize(gray_qam(6)).splitlines()[1:]
        assert len(rows) == 64
        labels = sorted(int(r.split("\t")[2], 16) for r in rows)
        assert labels == list(range(64))
        assert {r.split("\t")[2] for r in rows} == {f"{i:X}" for i in range(64)}

    def test_malformed_row_reports_row_number(self):
        text = serialize(gray_qam(2)).splitlines()
        text[3] = "0.1\tnot-a-number\t2"
        with pytest.raises(ConstellationFormatError) as err:
            parse("\n".join(text))
        assert err.value.row == 4

    def test_missing_header(self):
        with pytest.raises(ConstellationFormatError):
            parse("1\t0\t0\n-1\t0\t1\n")

    def test_duplicate_label_rejected(self):
        with pytest.raises(ConstellationFormatError):
            parse("re\tim\tlabel\n1\t0\t0\n-1\t0\t0\n")


def test_label_bits_msb_first():
    np.testing.assert_array_equal(label_bits([5], 3), [[1, 0, 1]])


def test_constellation_validates_size():
    with pytest.raises(UnsupportedOrderError):
        Constellation(np.ones(3), np.arange(3))
