import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from ergodic_lab.exception.custom_exception import DomainError, RangeError
from ergodic_lab.logging.logger import logging

IndexWindow = Tuple[int, int]


# ============================================
# SEQUENCE TYPES
# ============================================
@dataclass(frozen=True)
class SeqPrefix:
    """
    Finite prefix of a real sequence, first entry at index `offset`.

    Entries are either all Fractions (exact backend) or floats.
    """
    offset: int
    values: Tuple[Real, ...]
    nonnegative: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if self.offset < 0:
            raise DomainError(f"SeqPrefix offset must be >= 0, got {self.offset}")
        for i, v in enumerate(self.values):
            if not isinstance(v, Fraction) and not math.isfinite(v):
                raise DomainError(f"non-finite entry at index {self.offset + i}")
            if self.nonnegative and v < 0:
                raise DomainError(f"negative entry {v} at index {self.offset + i} in a nonnegative sequence")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def last_index(self) -> int:
        return self.offset + len(self.values) - 1

    def at(self, n: int) -> Real:
        if n < self.offset or n > self.last_index:
            raise RangeError(f"index {n} outside [{self.offset}, {self.last_index}]")
        return self.values[n - self.offset]

    def covers(self, window: IndexWindow) -> bool:
        return self.offset <= window[0] and window[1] <= self.last_index

    def window_values(self, window: IndexWindow) -> List[Real]:
        lo, hi = _check_window(window)
        if not self.covers(window):
            raise RangeError(f"window {window} exceeds available data [{self.offset}, {self.last_index}]")
        return list(self.values[lo - self.offset:hi - self.offset + 1])

    def as_array(self) -> np.ndarray:
        return np.array([float(v) for v in self.values], dtype=float)

    def scaled(self, c: Real) -> "SeqPrefix":
        return SeqPrefix(self.offset, tuple(c * v for v in self.values), self.nonnegative and c >= 0)


@dataclass(frozen=True)
class BandVerdict:
    """Ratio band [low, high] measured over an index window."""
    low: float
    high: float
    window: IndexWindow
    skipped: Tuple[int, ...] = ()

    def __post_init__(self):
        if not (0 <= self.low <= self.high):
            raise DomainError(f"invalid band [{self.low}, {self.high}]")

    def within(self, low: float, high: float) -> bool:
        return low <= self.low and self.high <= high

    def passes(self, bound: float) -> bool:
        """True when the band fits in [1/bound, bound]."""
        return self.within(1.0 / bound, bound)

    @property
    def spread(self) -> float:
        if self.low == 0:
            return math.inf
        return float(self.high / self.low)


def _check_window(window: IndexWindow) -> IndexWindow:
    lo, hi = int(window[0]), int(window[1])
    if lo > hi:
        raise RangeError(f"empty window [{lo}, {hi}]")
    return lo, hi


# ============================================
# SUMMATION
# ============================================
def compensated_cumsum(values: Iterable[Real]) -> List[Real]:
    """
    Running sums in fixed left-to-right order.

    Floats use Neumaier's compensated summation, Fractions are summed exactly.
    """
    out: List[Real] = []
    total = None
    comp = 0.0
    for v in values:
        if isinstance(v, Fraction):
            total = v if total is None else total + v
            out.append(total)
            continue
        v = float(v)
        if total is None:
            total = v
        else:
            t = total + v
            if abs(total) >= abs(v):
                comp += (total - t) + v
            else:
                comp += (v - t) + total
            total = t
        out.append(total + comp)
    return out


def partial_power_sum(u: SeqPrefix, d: int) -> SeqPrefix:
    """
    a(n) = sum_{k=1}^{n} u_k^d for n = 1 .. last index of u.

    An entry u_0 (offset 0) is not part of the sum.
    """
    if d <= 0:
        raise DomainError(f"power d must be positive, got {d}")
    if u.offset > 1:
        raise DomainError(f"partial power sums need offset <= 1, got {u.offset}")
    if any(v < 0 for v in u.values):
        raise DomainError("partial power sums need a nonnegative sequence")

    terms = [v ** d for v in u.values[1 - u.offset:]]
    return SeqPrefix(1, tuple(compensated_cumsum(terms)), nonnegative=True)


# ============================================
# BANDS AND TRENDS
# ============================================
def ratio_band(x: SeqPrefix, y: SeqPrefix, window: IndexWindow) -> BandVerdict:
    xs = x.window_values(window)
    ys = y.window_values(window)
    ratios = []
    for n, (a, b) in enumerate(zip(xs, ys), start=window[0]):
        if b <= 0:
            raise DomainError(f"denominator {b} at n={n} is not positive")
        if a < 0:
            raise DomainError(f"numerator {a} at n={n} is negative")
        ratios.append(a / b)
    return BandVerdict(min(ratios), max(ratios), _check_window(window))


def doubling_check(a: SeqPrefix, window: IndexWindow) -> BandVerdict:
    lo, hi = _check_window(window)
    if not a.covers((lo, 2 * hi)):
        raise RangeError(f"doubling over {window} needs data up to {2 * hi}, have {a.last_index}")
    ratios = []
    for n in range(lo, hi + 1):
        den = a.at(n)
        if den <= 0:
            raise DomainError(f"a({n}) = {den} is not positive")
        ratios.append(a.at(2 * n) / den)
    band = BandVerdict(min(ratios), max(ratios), (lo, hi))
    logging.info(f"doubling band over [{lo}, {hi}]: [{float(band.low):.6g}, {float(band.high):.6g}]")
    return band


def _log_points(a: SeqPrefix, window: IndexWindow) -> Tuple[np.ndarray, np.ndarray]:
    lo, hi = _check_window(window)
    vals = a.window_values((lo, hi))
    if len(vals) < 3:
        raise RangeError(f"need at least 3 points, window {window} has {len(vals)}")
    if any(v <= 0 for v in vals):
        raise DomainError("log-log fit needs a strictly positive sequence")
    n = np.arange(lo, hi + 1, dtype=float)
    return n, np.array([float(v) for v in vals])


def rv_index(a: SeqPrefix, window: IndexWindow) -> float:
    """Least-squares slope of log a(n) against log n."""
    n, vals = _log_points(a, window)
    if n[0] <= 0:
        raise DomainError("regular-variation fit needs indices >= 1")
    slope, _ = np.polyfit(np.log(n), np.log(vals), 1)
    return float(slope)


def rv_index_positive(a: SeqPrefix, window: IndexWindow) -> float:
    """rv_index restricted to the indices where a is positive (parity gaps skipped)."""
    lo, hi = _check_window(window)
    pts = [(n, float(a.at(n))) for n in range(max(lo, 1), hi + 1) if a.at(n) > 0]
    if len(pts) < 3:
        raise RangeError(f"fewer than 3 positive points in {window}")
    n, vals = np.array(pts).T
    slope, _ = np.polyfit(np.log(n), np.log(vals), 1)
    return float(slope)


def log_fit(a: SeqPrefix, window: IndexWindow) -> Tuple[float, float]:
    """Fit a(n) ~ c*log(n) + b over the window; returns (c, b)."""
    n, vals = _log_points(a, window)
    c, b = np.polyfit(np.log(n), vals, 1)
    return float(c), float(b)


def band_drift(first: BandVerdict, second: BandVerdict) -> float:
    """Largest relative movement of either band edge."""
    return max(abs(float(second.low) - float(first.low)) / float(first.low),
               abs(float(second.high) - float(first.high)) / float(first.high))


def band_of(values: Sequence[Real], window: IndexWindow) -> BandVerdict:
    vals = [v for v in values]
    if not vals:
        raise RangeError("no values to band")
    return BandVerdict(min(vals), max(vals), _check_window(window))
