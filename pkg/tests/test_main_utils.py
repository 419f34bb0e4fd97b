import time
from fractions import Fraction

import pytest

from ergodic_lab.components.util.main_utils import ordered_map, parse_rational
from ergodic_lab.exception.custom_exception import ConfigError


def _slow_square(x):
    time.sleep(0.01 * (5 - x))
    return x * x


@pytest.mark.parametrize("threads", [1, 4])
def test_ordered_map_keeps_input_order(threads):
    assert ordered_map(_slow_square, range(5), threads) == [0, 1, 4, 9, 16]


def test_ordered_map_of_nothing():
    assert ordered_map(_slow_square, [], 8) == []


@pytest.mark.parametrize("value, expected", [
    ("3/2", Fraction(3, 2)),
    ("0.25", Fraction(1, 4)),
    (7, Fraction(7)),
    (0.5, Fraction(1, 2)),
    (Fraction(2, 3), Fraction(2, 3)),
])
def test_parse_rational(value, expected):
    assert parse_rational(value) == expected


@pytest.mark.parametrize("value", ["abc", "1/0", True, None])
def test_parse_rational_rejects(value):
    with pytest.raises(ConfigError):
        parse_rational(value)
