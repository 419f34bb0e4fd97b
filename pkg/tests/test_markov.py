import itertools
import math
from fractions import Fraction

import pytest

from ergodic_lab.components import markov
from ergodic_lab.components.asymptotics import SeqPrefix
from ergodic_lab.components.constant.builtin_models import markov_models
from ergodic_lab.components.markov import Cylinder
from ergodic_lab.exception.custom_exception import DomainError, ResourceError, StructuralError


def central_binomial(n):
    return Fraction(math.comb(2 * n, n), 4 ** n)


def brute_force_intersection(model, anchored):
    """m(intersection of T^{-t} [word] x {fiber}) by summing over every word, one cylinder per set."""
    length = max(t + len(c.word) for t, (c,) in anchored)
    step = {key: law[0][0][0] for key, law in model.labels.items()}
    total = Fraction(0)
    for w in itertools.product(range(model.size), repeat=length):
        weight = model.mu[w[0]]
        for a, b in zip(w, w[1:]):
            weight *= model.P[a, b]
        if weight == 0:
            continue
        phi = [0]
        for a, b in zip(w, w[1:]):
            phi.append(phi[-1] + step[(a, b)])
        t0, (c0,) = anchored[0]
        z0 = c0.fiber[0] - phi[t0]
        if all(list(w[t:t + len(c.word)]) == [model.index(s) for s in c.word] and z0 + phi[t] == c.fiber[0]
               for t, (c,) in anchored):
            total += weight
    return total


def test_lazy_walk_return_sequence_is_central_binomial(lazy_exact):
    u = markov.return_sequence(lazy_exact, 12)
    assert list(u.values) == [central_binomial(n) for n in range(1, 13)]


def test_state_return_probability(lazy_exact):
    assert markov.return_probability(lazy_exact, "o", 3) == Fraction(5, 16)
    assert markov.return_sequence(lazy_exact, 6, state="o").values == markov.return_sequence(lazy_exact, 6).values


def test_split_walk_matches_lazy_walk(split_exact):
    u = markov.return_sequence(split_exact, 8)
    assert list(u.values) == [central_binomial(n) for n in range(1, 9)]


def test_float_backend_agrees(lazy_float):
    u = markov.return_sequence(lazy_float, 50)
    assert u.at(50) == pytest.approx(float(central_binomial(50)), rel=1e-12)


def test_stationary_distribution_of_biased_chain():
    model = markov.model_from_dict(markov_models["biased-chain"], "exact")
    assert list(model.mu) == [Fraction(2, 3), Fraction(1, 3)]


def test_model_dict_round_trip(split_exact):
    again = markov.model_from_dict(markov.model_to_dict(split_exact), "exact")
    assert again.states == split_exact.states
    assert (again.P == split_exact.P).all()
    assert again.edges == split_exact.edges


def test_build_rejects_non_stochastic_rows():
    with pytest.raises(StructuralError):
        markov.build_markov_model(["a", "b"], [["1/2", "1/4"], ["1/2", "1/2"]])


def test_build_rejects_periodic_chain():
    with pytest.raises(StructuralError):
        markov.build_markov_model(["a", "b"], [["0", "1"], ["1", "0"]])


def test_build_rejects_uncentered_cocycle():
    with pytest.raises(StructuralError):
        markov.build_markov_model(["o"], [["1"]], {("o", "o"): {(0,): "1/2", (1,): "1/2"}}, kappa=1)


def test_unknown_state_is_a_domain_error(split_exact):
    with pytest.raises(DomainError):
        markov.cylinder_measure(split_exact, Cylinder(0, ("Q",), (0,)))


def test_measures_of_fibered_sets(split_exact):
    assert markov.fibered_measure(split_exact, markov.zero_fiber(split_exact)) == 1
    assert markov.cylinder_measure(split_exact, Cylinder(0, ("L", "R"), (0,))) == Fraction(1, 16)
    overlapping = (Cylinder(0, ("L",), (0,)), Cylinder(0, ("L", "R"), (0,)))
    assert markov.fibered_measure(split_exact, overlapping) == Fraction(1, 4)


def test_unfibered_set_has_infinite_measure(split_exact):
    with pytest.raises(DomainError):
        markov.fibered_measure(split_exact, (Cylinder(0, ("L",)),))


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_intersection_measure_matches_path_enumeration(split_exact, k):
    A = (Cylinder(0, ("Z",), (0,)),)
    B = (Cylinder(0, ("L", "R"), (0,)),)
    C = (Cylinder(0, ("R",), (1,)),)
    anchored = [(0, A), (k, B), (2 * k, C)]
    assert markov.intersection_measure(split_exact, anchored) == brute_force_intersection(split_exact, anchored)


def test_multi_correlation_with_shifts_matches_path_enumeration(split_exact):
    A = (Cylinder(0, ("L",), (0,)),)
    B = (Cylinder(0, ("Z",), (-1,)),)
    value = markov.multi_correlation(split_exact, [A, B], 3, shifts=[0, 1])
    assert value == brute_force_intersection(split_exact, [(0, A), (4, B)])


def test_correlation_sequence_of_zero_fiber_is_u_squared(lazy_exact):
    Omega = markov.zero_fiber(lazy_exact)
    corr = markov.correlation_sequence(lazy_exact, [Omega] * 3, 6)
    assert list(corr.values) == [central_binomial(k) ** 2 for k in range(1, 7)]


def test_recurrence_witness(split_exact):
    assert markov.recurrence_witness(split_exact, markov.zero_fiber(split_exact), 2, 10) == 1


def test_admissibility_band_of_single_state_walk_is_one(lazy_exact):
    band = markov.admissibility_band(lazy_exact, markov.zero_fiber(lazy_exact), 2, (5, 15))
    assert band.low == 1 and band.high == 1
    assert band.skipped == ()


def test_admissibility_skips_parity_obstructions():
    model = markov.model_from_dict(markov_models["two-state-pm"], "exact")
    band = markov.admissibility_band(model, markov.zero_fiber(model), 1, (1, 6))
    assert band.skipped == (1, 3, 5)


def test_rwm_defect_needs_d_plus_one_sets(split_float):
    Omega = markov.zero_fiber(split_float)
    with pytest.raises(DomainError):
        markov.rwm_defect(split_float, [Omega, Omega], 2, None, 10)


def test_rwm_defect_of_markov_sets_vanishes(lazy_exact):
    Omega = markov.zero_fiber(lazy_exact)
    assert markov.rwm_defect(lazy_exact, [Omega, Omega, Omega], 2, None, 8) == 0


def test_correlation_average_of_zero_fiber_is_one(lazy_exact):
    Omega = markov.zero_fiber(lazy_exact)
    assert markov.correlation_average(lazy_exact, [Omega] * 3, None, 8) == 1


def test_recurrence_classification(lazy_float):
    verdict = markov.recurrence_classify(lazy_float, 1, n_max=2000)
    assert verdict.verdict == "recurrent"
    assert verdict.exponent == pytest.approx(0.5, abs=0.05)


def test_recurrence_classification_of_three_dimensional_walk():
    model = markov.model_from_dict(markov_models["lazy-walk-z3"], "float")
    verdict = markov.recurrence_classify(model, 1)
    assert verdict.verdict == "dissipative"


def test_recurrence_boundary_uses_local_exponent(lazy_float):
    verdict = markov.recurrence_classify(lazy_float, 2, n_max=2000)
    assert verdict.verdict == "recurrent"
    assert verdict.local_exponent == pytest.approx(1.0, abs=0.01)


@pytest.mark.parametrize("q, expected", [(0.5, "recurrent"), (0.525, "inconclusive")])
def test_boundary_divergence_separates_log_growth_from_slow_convergence(q, expected):
    u = SeqPrefix(1, tuple(n ** -q for n in range(1, 4001)), nonnegative=True)
    verdict, local = markov.boundary_divergence(u, 2, 4000)
    assert verdict == expected
    assert local == pytest.approx(2 * q, abs=0.005)


def test_recurrence_needs_positive_d(lazy_float):
    with pytest.raises(DomainError):
        markov.recurrence_classify(lazy_float, 0)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_transfer_operator_duality(split_exact, n):
    A = markov.zero_fiber(split_exact)[:1]
    B = markov.zero_fiber(split_exact)
    lhs = markov.integrate(split_exact, markov.transfer_apply(split_exact, markov.indicator(split_exact, A), n),
                           markov.indicator(split_exact, B))
    assert lhs == markov.multi_correlation(split_exact, [A, B], n)


def test_nested_transfer_matches_triple_intersection(split_exact):
    A = markov.zero_fiber(split_exact)[1:2]
    B = markov.zero_fiber(split_exact)
    f = markov.transfer_apply(split_exact, markov.indicator(split_exact, A), 2, nest=[(B, 1)])
    lhs = markov.integrate(split_exact, f, markov.indicator(split_exact, B))
    assert lhs == markov.intersection_measure(split_exact, [(0, B), (1, A), (3, B)])


def test_transfer_preserves_integrals(split_exact):
    f = markov.indicator(split_exact, (Cylinder(0, ("L", "Z"), (0,)),))
    assert markov.integrate(split_exact, markov.transfer_apply(split_exact, f, 3)) == Fraction(1, 8)


def test_indicator_of_unfibered_set_is_refused(split_exact):
    with pytest.raises(ResourceError):
        markov.indicator(split_exact, (Cylinder(0, ("L",)),))


def test_induced_return_distribution(lazy_exact):
    law = markov.induced_return_distribution(lazy_exact, 3)
    assert law == [Fraction(1, 2), Fraction(1, 8), Fraction(1, 16)]


def test_induced_return_needs_rank_one():
    model = markov.model_from_dict(markov_models["lazy-walk-z2"], "exact")
    with pytest.raises(DomainError):
        markov.induced_return_distribution(model, 3)


def test_stable_density_identity():
    value = markov.stable_density_check(1e-6, 1e6)
    assert value == pytest.approx(1.0, abs=1e-3)
    assert value == pytest.approx(markov.half_stable_closed_form(1e-6, 1e6), abs=1e-9)
    assert markov.dual_ergodic_riemann_sum(1e-6, 1e6, 1_000_000) == pytest.approx(value, abs=1e-2)


def test_stable_density_domain():
    with pytest.raises(DomainError):
        markov.stable_density_check(2.0, 1.0)
    with pytest.raises(DomainError):
        markov.stable_density_check(1.0, 2.0, gamma=0.3)
    assert markov.stable_density_check(1.0, 1.0) == 0.0


def test_product_moments_of_single_state_walk(lazy_exact):
    moments = markov.product_moments(lazy_exact, markov.zero_fiber(lazy_exact), 2, 4)
    assert moments.first == sum(central_binomial(k) ** 2 for k in range(1, 5))
    assert moments.ratio > 0


def test_nice_report_of_split_walk(split_float):
    report = markov.nice_report(split_float, markov.zero_fiber(split_float), 2, (10, 30))
    assert report.admissibility.passes(10.0)
    assert report.recurrence.verdict == "recurrent"
    assert 1.0 <= report.doubling.low <= report.doubling.high <= 2.0


@pytest.mark.parametrize("state", ["L", "Z", "R"])
def test_state_returns_are_super_multiplicative(split_exact, state):
    u = markov.return_sequence(split_exact, 10, state=state)
    mu = split_exact.mu[split_exact.index(state)]
    for m in range(1, 6):
        for n in range(1, 6):
            assert u.at(m + n) >= mu * u.at(m) * u.at(n)


def _cylinders(model, max_len, fiber):
    return [Cylinder(0, word, fiber) for L in range(1, max_len + 1)
            for word in itertools.product(model.states, repeat=L)]


@pytest.mark.parametrize("name", ["two-state-pm", "lazy-walk-split"])
@pytest.mark.parametrize("n", [1, 3])
def test_transfer_duality_over_short_cylinders(name, n):
    model = markov.model_from_dict(markov_models[name], "exact")
    K = markov.TransitionKernels(model, n + 6, 4)
    targets = _cylinders(model, 3, (0,)) + _cylinders(model, 3, (1,))
    for a in _cylinders(model, 3, (0,)):
        pushed = markov.transfer_apply(model, markov.indicator(model, (a,)), n)
        for b in targets:
            lhs = markov.integrate(model, pushed, markov.indicator(model, (b,)))
            assert lhs == markov.multi_correlation(model, [(a,), (b,)], n, kernels=K), (a, b)


def test_kernel_rebuild_publishes_a_fresh_table(lazy_exact):
    K = markov.TransitionKernels(lazy_exact, 2, 0)
    small = K.ensure(2, 0)
    large = K.ensure(6, 3)
    assert (small.n_max, small.radius) == (2, 0)
    assert large is not small
    assert large.n_max == 6 and large.radius == 3
    assert K.ensure(4, 1) is large
    # the old table stays readable after the swap
    assert small.windows[2][0, 0, 0] == Fraction(3, 8)
    assert K.value(2, 0, 0, (0,)) == Fraction(3, 8)
