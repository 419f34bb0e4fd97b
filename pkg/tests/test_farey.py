from fractions import Fraction

import pytest
from sympy import totient

from ergodic_lab.components import farey
from ergodic_lab.components.markov import TransitionKernels, zero_fiber
from ergodic_lab.components.util.main_utils import ordered_map
from ergodic_lab.exception.custom_exception import DomainError, ResourceError, StructuralError


def test_farey_sequence_of_order_four():
    seq = farey.farey_sequence(4)
    assert seq.fractions == tuple(Fraction(f) for f in ("0", "1/4", "1/3", "1/2", "2/3", "3/4", "1"))
    assert seq.intervals == 6
    assert seq.interval(2) == (Fraction(1, 3), Fraction(1, 2))
    assert seq.neighbours_unimodular()
    with pytest.raises(DomainError):
        seq.interval(6)
    with pytest.raises(DomainError):
        farey.farey_sequence(0)


@pytest.mark.parametrize("d", [1, 2, 3, 4, 5, 6])
def test_orderings_hold_exactly_on_their_slope_intervals(d):
    for pi in farey.all_orderings(d):
        check = farey.verify_ordering_domain(pi, 300)
        assert check.passed, check.counterexample
        assert check.checked == 300 * 301 // 2


@pytest.mark.parametrize("d", [1, 2, 3, 4, 5, 6])
def test_domains_partition_the_triangle(d):
    assert farey.domain_partition(d, 300).passed


@pytest.mark.parametrize("d", range(1, 21))
def test_farey_neighbours_are_unimodular(d):
    seq = farey.farey_sequence(d)
    assert seq.neighbours_unimodular()
    assert len(seq.fractions) == 1 + sum(int(totient(q)) for q in range(1, d + 1))


def test_ordering_is_a_sort_of_the_values():
    pi = farey.build_ordering(3, 2)
    lo, hi = pi.slope_interval
    k, l = hi.numerator * 5, hi.denominator * 5
    values = pi.values(k, l)
    assert values == sorted(values)
    assert pi.orders(k, l)


def test_ordering_must_be_a_bijection():
    with pytest.raises(StructuralError):
        farey.OrderingBijection(2, ((1, 0), (1, 0), (2, 0), (2, 1)), (Fraction(0), Fraction(1)))


def test_domain_check_needs_a_large_enough_bound():
    with pytest.raises(DomainError):
        farey.verify_ordering_domain(farey.build_ordering(4, 0), 3)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_step_vectors_telescope_and_pair_independently(d):
    for pi in farey.all_orderings(d):
        steps = farey.step_vectors(pi)
        kap, eps = pi.pairs[-1]
        assert (sum(a for a, _ in steps.vectors), sum(b for _, b in steps.vectors)) == (kap * (1 - eps), kap * eps)
        assert sorted(i for pair in steps.pairing for i in pair) == list(range(2 * d))
        assert all(steps.determinant(i, j) != 0 for i, j in steps.pairing)
        assert steps.partial_values(7, 11) == pi.values(7, 11)


def test_psi_first_moment_matches_partial_power_sum(lazy_exact):
    Omega = zero_fiber(lazy_exact)
    moments = farey.psi_moments(lazy_exact, Omega, 2, 1, 6)
    assert moments.first == moments.a_d
    assert moments.first_ratio == 1.0
    assert moments.second_ratio > 0


def test_psi_moments_domain(lazy_exact):
    Omega = zero_fiber(lazy_exact)
    with pytest.raises(DomainError):
        farey.psi_moments(lazy_exact, Omega, 2, 3, 5)
    with pytest.raises(ResourceError):
        farey.psi_moments(lazy_exact, Omega, 2, 0, farey.MAX_PSI_N + 1)


def test_shared_kernels_match_serial_moments_across_threads(lazy_exact):
    Omega = zero_fiber(lazy_exact)
    cases = [(nu, n) for nu in range(3) for n in range(2, 5)]
    serial = [farey.psi_moments(lazy_exact, Omega, 2, nu, n) for nu, n in cases]
    # starts too small, so the workers grow it while others read
    shared = TransitionKernels(lazy_exact, 1, 0)
    threaded = ordered_map(lambda case: farey.psi_moments(lazy_exact, Omega, 2, case[0], case[1], kernels=shared),
                           cases, threads=8)
    assert [(m.first, m.second) for m in threaded] == [(m.first, m.second) for m in serial]
