from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ergodic_lab.components.asymptotics import partial_power_sum
from ergodic_lab.components.markov import (
    Cylinder,
    MarkovModel,
    TransitionKernels,
    intersection_measure,
    return_sequence,
)
from ergodic_lab.exception.custom_exception import DomainError, ResourceError, StructuralError
from ergodic_lab.logging.logger import logging

Pair = Tuple[int, int]  # (kappa, epsilon)
MAX_PSI_N = 2000


# ============================================
# FAREY SEQUENCES
# ============================================
@dataclass(frozen=True)
class FareySeq:
    d: int
    fractions: Tuple[Fraction, ...]

    @property
    def intervals(self) -> int:
        return len(self.fractions) - 1

    def interval(self, j: int) -> Tuple[Fraction, Fraction]:
        if not 0 <= j < self.intervals:
            raise DomainError(f"interval index {j} outside [0, {self.intervals})")
        return self.fractions[j], self.fractions[j + 1]

    def neighbours_unimodular(self) -> bool:
        return all(r.denominator * s.numerator - r.numerator * s.denominator == 1
                   for r, s in zip(self.fractions, self.fractions[1:]))


def farey_sequence(d: int) -> FareySeq:
    """Reduced fractions in [0, 1] with denominator <= d, in increasing order."""
    if d < 1:
        raise DomainError(f"Farey order must be >= 1, got {d}")
    a, b, c, e = 0, 1, 1, d
    out = [Fraction(0)]
    while c <= d:
        k = (d + b) // e
        a, b, c, e = c, e, k * c - a, k * e - b
        out.append(Fraction(a, b))
    return FareySeq(d, tuple(out))


# ============================================
# ORDERING BIJECTIONS
# ============================================
@dataclass(frozen=True)
class OrderingBijection:
    """
    Ordering of the 2d values (1-eps)*kappa*k + eps*kappa*l, one entry (kappa, eps) per value.

    slope_interval is the half-open (lo, hi] on which the ordering is claimed.
    """
    d: int
    pairs: Tuple[Pair, ...]
    slope_interval: Tuple[Fraction, Fraction]

    def __post_init__(self):
        expected = {(kap, eps) for kap in range(1, self.d + 1) for eps in (0, 1)}
        if len(self.pairs) != 2 * self.d or set(self.pairs) != expected:
            raise StructuralError(f"pairs {self.pairs} are not a bijection onto {{1..{self.d}}} x {{0,1}}")

    def values(self, k: int, l: int) -> List[int]:
        return [(1 - eps) * kap * k + eps * kap * l for kap, eps in self.pairs]

    def orders(self, k: int, l: int) -> bool:
        vals = self.values(k, l)
        for j in range(len(vals) - 1):
            (kap0, eps0), (kap1, eps1) = self.pairs[j], self.pairs[j + 1]
            if vals[j] > vals[j + 1]:
                return False
            if vals[j] == vals[j + 1] and (eps0, kap0) > (eps1, kap1):
                return False
        return True


def _sort_at(d: int, k: int, l: int) -> Tuple[Pair, ...]:
    pairs = [(kap, eps) for kap in range(1, d + 1) for eps in (0, 1)]
    return tuple(sorted(pairs, key=lambda p: ((1 - p[1]) * p[0] * k + p[1] * p[0] * l, p[1], p[0])))


def build_ordering(d: int, j: int) -> OrderingBijection:
    """pi_j for the slope interval (r_j, r_{j+1}] of the order-d Farey sequence."""
    farey = farey_sequence(d)
    lo, hi = farey.interval(j)
    pairs = _sort_at(d, hi.numerator, hi.denominator)
    return OrderingBijection(d, pairs, (lo, hi))


def all_orderings(d: int) -> List[OrderingBijection]:
    return [build_ordering(d, j) for j in range(farey_sequence(d).intervals)]


def _grid(bound: int) -> Tuple[np.ndarray, np.ndarray]:
    k, l = np.triu_indices(bound)
    return k + 1, l + 1


def _ordered_mask(pi: OrderingBijection, k: np.ndarray, l: np.ndarray) -> np.ndarray:
    kap = np.array([p[0] for p in pi.pairs], dtype=np.int64)[:, None]
    eps = np.array([p[1] for p in pi.pairs], dtype=np.int64)[:, None]
    vals = (1 - eps) * kap * k[None, :] + eps * kap * l[None, :]
    tie_ok = np.array([(pi.pairs[j][1], pi.pairs[j][0]) < (pi.pairs[j + 1][1], pi.pairs[j + 1][0])
                       for j in range(len(pi.pairs) - 1)], dtype=bool)[:, None]
    step = (vals[:-1] < vals[1:]) | ((vals[:-1] == vals[1:]) & tie_ok)
    return step.all(axis=0)


def _in_interval(pi: OrderingBijection, k: np.ndarray, l: np.ndarray) -> np.ndarray:
    lo, hi = pi.slope_interval
    return (lo.numerator * l < k * lo.denominator) & (k * hi.denominator <= hi.numerator * l)


@dataclass(frozen=True)
class DomainCheck:
    passed: bool
    counterexample: Optional[Tuple[int, int]] = None
    checked: int = 0


def verify_ordering_domain(pi: OrderingBijection, bound: int) -> DomainCheck:
    """pi orders (k, l) iff k/l lies in its slope interval, for all 1 <= k <= l <= bound."""
    if bound < pi.d + 1:
        raise DomainError(f"bound must be >= d + 1 = {pi.d + 1}, got {bound}")
    k, l = _grid(bound)
    bad = np.nonzero(_ordered_mask(pi, k, l) != _in_interval(pi, k, l))[0]
    if bad.size:
        first = (int(k[bad[0]]), int(l[bad[0]]))
        logging.info(f"ordering {pi.pairs} fails the domain check at (k, l) = {first}")
        return DomainCheck(False, first, int(k.size))
    return DomainCheck(True, None, int(k.size))


def domain_partition(d: int, bound: int) -> DomainCheck:
    """Every (k, l) with k <= l <= bound is ordered by exactly one pi_j."""
    k, l = _grid(bound)
    hits = np.zeros(k.size, dtype=np.int64)
    for pi in all_orderings(d):
        hits += _ordered_mask(pi, k, l)
    bad = np.nonzero(hits != 1)[0]
    if bad.size:
        return DomainCheck(False, (int(k[bad[0]]), int(l[bad[0]])), int(k.size))
    return DomainCheck(True, None, int(k.size))


# ============================================
# STEP VECTORS
# ============================================
@dataclass(frozen=True)
class StepVectors:
    vectors: Tuple[Tuple[int, int], ...]
    pairing: Tuple[Tuple[int, int], ...]

    def determinant(self, i: int, j: int) -> int:
        (a, b), (c, e) = self.vectors[i], self.vectors[j]
        return a * e - b * c

    def partial_values(self, k: int, l: int) -> List[int]:
        out, acc = [], 0
        for a, b in self.vectors:
            acc += a * k + b * l
            out.append(acc)
        return out


def _independent_matching(vectors: Sequence[Tuple[int, int]]) -> Optional[List[Tuple[int, int]]]:
    def det(i, j):
        return vectors[i][0] * vectors[j][1] - vectors[i][1] * vectors[j][0]

    def search(free: List[int]) -> Optional[List[Tuple[int, int]]]:
        if not free:
            return []
        first, rest = free[0], free[1:]
        for idx, other in enumerate(rest):
            if det(first, other) != 0:
                tail = search(rest[:idx] + rest[idx + 1:])
                if tail is not None:
                    return [(first, other)] + tail
        return None

    return search(list(range(len(vectors))))


def step_vectors(pi: OrderingBijection) -> StepVectors:
    prev = (0, 0)
    vectors = []
    for kap, eps in pi.pairs:
        cur = (kap * (1 - eps), kap * eps)
        vectors.append((cur[0] - prev[0], cur[1] - prev[1]))
        prev = cur
    if any(v == (0, 0) for v in vectors):
        raise StructuralError(f"zero step vector for ordering {pi.pairs}")
    pairing = _independent_matching(vectors)
    if pairing is None:
        raise StructuralError(f"no independent pairing of step vectors {vectors} for ordering {pi.pairs}")
    return StepVectors(tuple(vectors), tuple(pairing))


# ============================================
# PSI MOMENTS
# ============================================
@dataclass(frozen=True)
class PsiMoments:
    first: Real
    second: Real
    a_d: Real

    @property
    def first_ratio(self) -> float:
        return float(self.first) / float(self.a_d)

    @property
    def second_ratio(self) -> float:
        return float(self.second) / float(self.a_d) ** 2


def _psi_times(d: int, nu: int, k: int) -> List[int]:
    return [-i * k for i in range(1, nu + 1)] + [j * k for j in range(1, d - nu + 1)]


def psi_moments(model: MarkovModel, Omega: Sequence[Cylinder], d: int, nu: int, n: int,
                kernels: Optional[TransitionKernels] = None) -> PsiMoments:
    """
    Moments over Omega of sum_{k<=n} prod_{i<=nu} 1_Omega(T^{-ik}) prod_{j<=d-nu} 1_Omega(T^{jk}).

    Negative times are shifted to start at 0; the extension is invariant, so
    the measures are unchanged.
    """
    if d < 1 or not 0 <= nu <= d:
        raise DomainError(f"need d >= 1 and 0 <= nu <= d, got d={d}, nu={nu}")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if n > MAX_PSI_N:
        raise ResourceError(f"psi moments at n={n} exceed the window limit {MAX_PSI_N}")

    K = kernels or TransitionKernels(model, 2 * d * n + 2, 0)
    first = model.zero()
    for k in range(1, n + 1):
        first = first + intersection_measure(model, [(m * k, Omega) for m in range(d + 1)], K)

    second = model.zero()
    for k in range(1, n + 1):
        for l in range(k, n + 1):
            times = {0} | set(_psi_times(d, nu, k)) | set(_psi_times(d, nu, l))
            shift = -min(times)
            value = intersection_measure(model, [(t + shift, Omega) for t in sorted(times)], K)
            second = second + (value if k == l else 2 * value)

    a_d = partial_power_sum(return_sequence(model, n, kernels=K), d).at(n)
    logging.info(f"psi moments d={d}, nu={nu}, n={n}: first/a={float(first) / float(a_d):.6g}, "
                 f"second/a^2={float(second) / float(a_d) ** 2:.6g}")
    return PsiMoments(first, second, a_d)
