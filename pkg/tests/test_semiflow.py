import itertools
import math
from fractions import Fraction

import pytest

from ergodic_lab.components import markov, semiflow
from ergodic_lab.components.constant.builtin_models import markov_models
from ergodic_lab.components.markov import model_from_dict
from ergodic_lab.exception.custom_exception import DomainError, StructuralError


def test_mean_roof_and_denominator(two_valued_exact):
    assert two_valued_exact.mean_roof == Fraction(9, 8)
    assert two_valued_exact.roof.Q == 2
    assert two_valued_exact.roof.units() == (2, 2, 3)
    assert two_valued_exact.roof.min_value == 1


def test_build_rejects_bad_roofs(split_exact):
    with pytest.raises(StructuralError):
        semiflow.build_semiflow(split_exact, {"L": "1", "Z": "1"})
    with pytest.raises(StructuralError):
        semiflow.build_semiflow(split_exact, {"L": "1", "Z": "0", "R": "1"})
    with pytest.raises(StructuralError):
        semiflow.build_semiflow(split_exact, {"L": "1", "Z": "1", "R": "1", "Q": "1"})
    with pytest.raises(StructuralError):
        semiflow.build_semiflow(model_from_dict(markov_models["biased-chain"]), {"a": "1", "b": "1"})


def test_semiflow_dict_round_trip(two_valued_exact):
    again = semiflow.semiflow_from_dict(semiflow.semiflow_to_dict(two_valued_exact), "exact")
    assert again.roof == two_valued_exact.roof
    assert again.base.states == two_valued_exact.base.states


def test_two_valued_roof_is_aperiodic(two_valued_exact):
    verdict = semiflow.aperiodicity_check(two_valued_exact)
    assert verdict.verdict == "aperiodic"
    assert set(verdict.invariants) == {1}


def test_arithmetic_roofs(pm_roof_exact, unit_roof_float):
    assert semiflow.aperiodicity_check(pm_roof_exact).verdict == "arithmetic"
    assert semiflow.aperiodicity_check(unit_roof_float).verdict == "arithmetic"


def test_flow_return_verdicts(unit_roof_float):
    assert semiflow.flow_return_sequence(unit_roof_float, 50).verdict == "conservative"
    z3 = semiflow.build_semiflow(model_from_dict(markov_models["lazy-walk-z3"]), {"o": 1})
    ret = semiflow.flow_return_sequence(z3, 50)
    assert ret.verdict == "dissipative"
    assert ret.value is None


def test_flow_return_grows(two_valued_float):
    small = semiflow.flow_return_sequence(two_valued_float, 100).value
    large = semiflow.flow_return_sequence(two_valued_float, 400).value
    # a_n ~ 2 sqrt(n / pi) up to a constant
    assert 1.9 < large / small < 2.2


def test_gaussian_density_at_zero(unit_roof_float):
    params = semiflow.gaussian_parameters(unit_roof_float, 200)
    assert params.fX0 == pytest.approx(1 / math.sqrt(math.pi), rel=1e-6)
    assert params.degenerate
    with pytest.raises(DomainError):
        params.fZ([0.0, 0.0])


def test_lattice_local_limit(unit_roof_float):
    params = semiflow.gaussian_parameters(unit_roof_float, 200)
    check = semiflow.llt_lattice_check(unit_roof_float, None, (0,), 400, params)
    assert check.in_regime
    assert check.relative_error < 0.01


def test_spacing_window_matches_window_sum(two_valued_float):
    params = semiflow.gaussian_parameters(two_valued_float, 400)
    lll = semiflow.lll_window_sum(two_valued_float, None, (0, 1), 200, 2.0, gaussian=params)
    profile = semiflow.spacing_profile(two_valued_float, 200, 2.0)
    assert profile.window == lll.window
    assert profile.passes


def test_window_sum_grows_with_window(two_valued_float):
    params = semiflow.gaussian_parameters(two_valued_float, 400)
    narrow = semiflow.lll_window_sum(two_valued_float, None, (0, 1), 50, 1.0, gaussian=params)
    wide = semiflow.lll_window_sum(two_valued_float, None, (0, 1), 50, 3.0, gaussian=params)
    assert wide.value >= narrow.value > 0
    assert wide.predicted == narrow.predicted


def test_window_sum_interval_must_fit_under_the_roof(two_valued_float):
    with pytest.raises(DomainError):
        semiflow.lll_window_sum(two_valued_float, None, (0, 2), 50, 1.0)
    with pytest.raises(DomainError):
        semiflow.lll_window_sum(two_valued_float, None, (Fraction(1, 2), Fraction(1, 2)), 50, 1.0)


def test_bell_tail_has_no_truncation(two_valued_float):
    tail = semiflow.bell_tail_sum(two_valued_float, 50, 2.0)
    assert tail.truncation_bound == 0.0
    assert tail.value >= 0
    assert tail.n_range[0] <= 50 / 1.125 <= tail.n_range[1]


def test_joint_distribution_is_a_probability(two_valued_exact):
    law = semiflow.joint_distribution(two_valued_exact, 3)
    assert sum(law.values()) == 1


def test_joint_distribution_matches_path_enumeration(two_valued_exact):
    base = two_valued_exact.base
    step = {"L": -1, "Z": 0, "R": 1}
    roof = dict(zip(base.states, two_valued_exact.roof.values))
    expected = {}
    for path in itertools.product(base.states, repeat=3):
        i = [base.index(s) for s in path]
        weight = base.mu[i[0]] * base.P[i[0], i[1]] * base.P[i[1], i[2]]
        key = (path[2], (step[path[1]] + step[path[2]],), roof[path[0]] + roof[path[1]])
        expected[key] = expected.get(key, Fraction(0)) + weight
    assert semiflow.joint_distribution(two_valued_exact, 2) == expected


@pytest.mark.parametrize("n", [1, 2, 3])
def test_joint_distribution_marginal_is_the_step_distribution(two_valued_exact, n):
    base = two_valued_exact.base
    marginal = {}
    for (state, z, _), mass in semiflow.joint_distribution(two_valued_exact, n).items():
        marginal[(state, z)] = marginal.get((state, z), Fraction(0)) + mass
    steps = markov.step_distribution(base, markov.stationary_start(base), n).atoms()
    assert marginal == {(base.states[s], z): mass for (s, z), mass in steps.items()}


def test_unit_roof_reduces_to_the_base_walk(unit_split_exact, unit_roof_float):
    base = unit_split_exact.base
    assert unit_split_exact.mean_roof == 1
    law = semiflow.joint_distribution(unit_split_exact, 4)
    assert {h for _, _, h in law} == {4}

    u = markov.return_sequence(base, 12)
    assert semiflow.flow_return_sequence(unit_split_exact, 12).value == float(sum(u.values))

    params = semiflow.gaussian_parameters(unit_roof_float, 200)
    u30 = float(markov.return_sequence(unit_roof_float.base, 30).at(30))
    check = semiflow.llt_lattice_check(unit_roof_float, None, (0,), 30, params)
    assert check.measured == pytest.approx(math.sqrt(30) * u30, rel=1e-12)

    # h_n = n, so the window [t, t + 1) only sees n = t
    lll = semiflow.lll_window_sum(unit_roof_float, None, (0, 1), 20, 2.0, gaussian=params)
    assert [n for n, v in lll.terms if v > 0] == [20]
    assert lll.value == pytest.approx(math.sqrt(20) * float(markov.return_sequence(unit_roof_float.base, 20).at(20)),
                                      rel=1e-12)


def test_flow_return_is_a_float_on_the_exact_backend(two_valued_exact):
    ret = semiflow.flow_return_sequence(two_valued_exact, 20)
    assert type(ret.value) is float
    assert ret.value == pytest.approx(float(sum(markov.return_sequence(two_valued_exact.base, 20).values))
                                      * 1.125 ** -0.5, rel=1e-12)


@pytest.mark.parametrize("M", [2.0, 5.0, 10.0])
def test_spacing_residual_holds_on_every_window(two_valued_float, M):
    profile = semiflow.spacing_profile(two_valued_float, 200, M)
    assert profile.residual_passes
    assert profile.residual < 1.0


def test_raw_spacing_deviation_grows_with_the_window(two_valued_float):
    profile = semiflow.spacing_profile(two_valued_float, 200, 10.0)
    assert profile.window[0] == 37
    # leading term x_n / (2 varkappa) at n = 37
    assert profile.worst == pytest.approx(11.26, abs=0.01)
    assert not profile.passes
    assert profile.residual == pytest.approx(0.31, abs=0.01)
