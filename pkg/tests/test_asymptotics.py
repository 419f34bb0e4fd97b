import math
from fractions import Fraction

import pytest

from ergodic_lab.components.asymptotics import (
    BandVerdict,
    SeqPrefix,
    band_drift,
    band_of,
    compensated_cumsum,
    doubling_check,
    log_fit,
    partial_power_sum,
    ratio_band,
    rv_index,
    rv_index_positive,
)
from ergodic_lab.exception.custom_exception import DomainError, RangeError


def test_seq_prefix_indexing():
    seq = SeqPrefix(1, (0.5, 0.25, 0.125))
    assert seq.at(1) == 0.5
    assert seq.at(3) == 0.125
    assert seq.last_index == 3
    assert seq.covers((1, 3))
    assert not seq.covers((0, 3))
    assert seq.window_values((2, 3)) == [0.25, 0.125]
    with pytest.raises(RangeError):
        seq.at(4)
    with pytest.raises(RangeError):
        seq.window_values((2, 5))


def test_seq_prefix_rejects_bad_entries():
    with pytest.raises(DomainError):
        SeqPrefix(1, (0.5, -0.1), nonnegative=True)
    with pytest.raises(DomainError):
        SeqPrefix(1, (0.5, math.inf))
    with pytest.raises(DomainError):
        SeqPrefix(-1, (0.5,))


def test_compensated_cumsum_exact_and_float():
    assert compensated_cumsum([Fraction(1, 3)] * 3)[-1] == 1
    assert compensated_cumsum([1e16, 1.0, -1e16])[-1] == 1.0
    assert compensated_cumsum([0.1] * 10)[-1] == pytest.approx(1.0, abs=1e-15)


def test_partial_power_sum():
    u = SeqPrefix(1, (Fraction(1, 2), Fraction(1, 4)))
    a = partial_power_sum(u, 2)
    assert a.values == (Fraction(1, 4), Fraction(5, 16))
    assert a.offset == 1


def test_partial_power_sum_skips_index_zero():
    u = SeqPrefix(0, (Fraction(1), Fraction(1, 2)))
    assert partial_power_sum(u, 1).values == (Fraction(1, 2),)


def test_partial_power_sum_rejects_bad_power():
    with pytest.raises(DomainError):
        partial_power_sum(SeqPrefix(1, (0.5,)), 0)


def test_doubling_check_linear_sequence():
    a = SeqPrefix(1, tuple(float(n) for n in range(1, 21)))
    band = doubling_check(a, (1, 10))
    assert band.low == pytest.approx(2.0)
    assert band.high == pytest.approx(2.0)
    with pytest.raises(RangeError):
        doubling_check(a, (1, 11))


def test_rv_index_power_law():
    a = SeqPrefix(1, tuple(n ** -0.5 for n in range(1, 101)))
    assert rv_index(a, (10, 100)) == pytest.approx(-0.5, abs=1e-10)


def test_rv_index_positive_skips_parity_gaps():
    values = tuple(0.0 if n % 2 else 1.0 / n for n in range(1, 101))
    a = SeqPrefix(1, values, nonnegative=True)
    assert rv_index_positive(a, (10, 100)) == pytest.approx(-1.0, abs=1e-10)


def test_log_fit_recovers_coefficients():
    a = SeqPrefix(1, tuple(3 * math.log(n) + 2 for n in range(1, 201)))
    c, b = log_fit(a, (10, 200))
    assert c == pytest.approx(3.0)
    assert b == pytest.approx(2.0)


def test_ratio_band():
    x = SeqPrefix(1, (2.0, 4.0, 9.0))
    y = SeqPrefix(1, (1.0, 1.0, 3.0))
    band = ratio_band(x, y, (1, 3))
    assert (band.low, band.high) == (2.0, 4.0)


def test_ratio_band_allows_zero_numerator():
    band = ratio_band(SeqPrefix(1, (0.0, 2.0)), SeqPrefix(1, (1.0, 1.0)), (1, 2))
    assert (band.low, band.high) == (0.0, 2.0)
    assert band.spread == math.inf
    with pytest.raises(DomainError):
        ratio_band(SeqPrefix(1, (1.0, 2.0)), SeqPrefix(1, (0.0, 1.0)), (1, 2))
    with pytest.raises(DomainError):
        ratio_band(SeqPrefix(1, (-1.0, 2.0)), SeqPrefix(1, (1.0, 1.0)), (1, 2))


def test_band_of_and_passes():
    band = band_of([2.0, 4.0, 3.0], (1, 3))
    assert (band.low, band.high) == (2.0, 4.0)
    assert band.spread == pytest.approx(2.0)
    assert band.passes(4.0)
    assert not band.passes(3.0)
    with pytest.raises(RangeError):
        band_of([], (1, 3))


def test_band_verdict_validation():
    with pytest.raises(DomainError):
        BandVerdict(2.0, 1.0, (1, 2))
    assert BandVerdict(0.0, 1.0, (1, 2)).spread == math.inf


def test_band_drift():
    first = BandVerdict(1.0, 2.0, (1, 10))
    second = BandVerdict(1.1, 2.0, (1, 20))
    assert band_drift(first, second) == pytest.approx(0.1)
