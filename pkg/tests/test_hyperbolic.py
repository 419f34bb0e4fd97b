import math

import numpy as np
import pytest

from ergodic_lab.components import hyperbolic
from ergodic_lab.components.hyperbolic import FuchsianGroup, MobiusMap
from ergodic_lab.exception.custom_exception import (
    AccuracyError,
    CoverageError,
    DomainError,
    ResourceError,
    StructuralError,
)


def test_hyperbolic_distance():
    assert hyperbolic.hyp_dist(0j, 0.5) == pytest.approx(2 * math.atanh(0.5))
    assert hyperbolic.hyp_dist(0.3j, 0.3j) == 0.0
    with pytest.raises(DomainError):
        hyperbolic.hyp_dist(0j, 1.0)


def test_mobius_maps():
    with pytest.raises(StructuralError):
        MobiusMap(2 + 0j, 0j)
    z = 0.4 - 0.2j
    assert MobiusMap.translation(z)(0j) == pytest.approx(z)
    g = MobiusMap.translation(0.3 + 0.1j).compose(MobiusMap.rotation(1.0))
    assert g.compose(g.inverse()).distance_to(MobiusMap.identity()) < 1e-12
    assert hyperbolic.hyp_dist(g(0.1j), g(0.5)) == pytest.approx(hyperbolic.hyp_dist(0.1j, 0.5), abs=1e-12)


def test_generator_translation_lengths(schottky, octagon):
    for g in schottky.generators:
        assert g.translation_length() == pytest.approx(2 * math.acosh(2))
    for g in octagon.generators:
        assert g.translation_length() == pytest.approx(2 * math.acosh(1 + math.sqrt(2)))


def test_octagon_relator_uses_every_generator(octagon):
    assert sorted(octagon.relator) == list(range(8))
    assert hyperbolic.evaluate_word(octagon, octagon.relator).distance_to(MobiusMap.identity()) < 1e-9


def test_group_validation(schottky):
    A, B = schottky.generators[0], schottky.generators[2]
    with pytest.raises(StructuralError):
        FuchsianGroup("bad", (A, A.inverse()), (0, 1), ((1,), (-1,)))
    with pytest.raises(StructuralError):
        FuchsianGroup("bad", (A, A.inverse()), (1, 0), ((1,), (1,)))
    with pytest.raises(StructuralError):
        FuchsianGroup("bad", (A, B), (1, 0), ((1,), (-1,)))


def test_group_dict_round_trip(schottky):
    again = hyperbolic.group_from_dict(hyperbolic.group_to_dict(schottky))
    assert all(g.distance_to(h) < 1e-12 for g, h in zip(again.generators, schottky.generators))
    assert again.inverse == schottky.inverse


def test_free_group_growth(schottky):
    enum = hyperbolic.enumerate_group(schottky, 4)
    assert enum.level_counts == (1, 4, 12, 36, 108)
    assert len(enum.elements) == sum(enum.level_counts)
    assert all(e.length == len(e.word) for e in enum.elements)


def test_surface_group_growth(octagon):
    assert hyperbolic.enumerate_group(octagon, 2).level_counts == (1, 8, 56)


def test_enumeration_guard(schottky):
    with pytest.raises(DomainError):
        hyperbolic.enumerate_group(schottky, -1)
    with pytest.raises(ResourceError):
        hyperbolic.enumerate_group(schottky, hyperbolic.MAX_WORD_LENGTH + 1)


def test_deduplicate_keeps_first_occurrence(schottky):
    elements = hyperbolic.enumerate_group(schottky, 3).elements
    assert hyperbolic.deduplicate(elements) == elements
    assert hyperbolic.deduplicate(elements + elements[::-1]) == elements


def test_ball_geometry():
    w, eta = 0.3 + 0j, 0.5
    centre, radius = hyperbolic.ball_euclid(w, eta)
    for p in (centre + radius, centre - radius):
        assert hyperbolic.hyp_dist(w, p) == pytest.approx(eta, abs=1e-10)
    assert hyperbolic.hyperbolic_area(eta) == pytest.approx(4 * math.pi * math.sinh(eta / 2) ** 2)
    with pytest.raises(DomainError):
        hyperbolic.ball_euclid(w, 0.0)


def test_lambda_window_against_sampling():
    w = 0.6 * complex(math.cos(1.0), math.sin(1.0))
    exact = hyperbolic.lambda_window(w, 0.2)
    assert hyperbolic.lambda_by_sampling(w, 0.2, 200_000) == pytest.approx(exact, abs=1e-3)
    with pytest.raises(DomainError):
        hyperbolic.lambda_window(0.1 + 0j, 1.0)


def test_j_window_vanishes_off_the_annulus():
    w = math.tanh(2.0) + 0j
    assert hyperbolic.j_window(w, 0.3, 4.0) > 0
    assert hyperbolic.j_window(w, 0.3, 5.0) == 0.0
    assert hyperbolic.angle_windows(0.05 + 0j, 0.5, 0.1).lambda_len is None


def test_geometry_identities():
    checks = hyperbolic.geometry_checks(100, seed=1)
    assert all(c.passed for c in checks), [(c.name, c.max_error) for c in checks if not c.passed]


def test_angle_window_grid():
    assert hyperbolic.window_grid_check(10, 10, 3).passed


def test_schottky_fundamental_domain(schottky):
    check = hyperbolic.fundamental_domain_check(schottky, max_len=2, samples=500, seed=0)
    assert check.points > 0
    assert check.violations == 0


def test_word_metric_band(schottky):
    band = hyperbolic.word_metric_band(schottky, 4)
    assert 0 < band.low <= band.high <= 2 * math.acosh(2) + 1e-9


def test_certified_enumeration_reports_coverage(schottky):
    with pytest.raises(CoverageError) as info:
        hyperbolic.certified_enumeration(schottky, 50.0, cap=3)
    assert info.value.max_certifiable < 50.0


def test_orbital_sums(schottky):
    with pytest.raises(DomainError):
        hyperbolic.orbital_sum(schottky, 0j, 6.0, -0.1)
    narrow = hyperbolic.orbital_sum(schottky, 0j, 6.0, 1.0)
    wide = hyperbolic.orbital_sum(schottky, 0j, 6.0, 1.5)
    assert 0 < narrow <= wide
    assert hyperbolic.hopf_tsuji_sum(schottky, 0j, 2.0) == 1.0


def test_zero_lag_correlation_is_full_measure(schottky):
    # J jumps from 2 pi to 0 on the ball boundary
    value = hyperbolic.correlation_integral(schottky, 0j, 0.5, 0.0)
    assert value == pytest.approx(2 * math.pi * hyperbolic.hyperbolic_area(0.5), rel=1e-6)


@pytest.mark.parametrize("s", [0.5, 0.7, 0.9])
def test_circle_arc_matches_euclidean_window(s):
    w = 0.3 + 0.2j
    expected = hyperbolic.j_window(w, 0.3, s)
    assert hyperbolic.circle_arc(s, hyperbolic.hyp_dist(0j, w), 0.3) == pytest.approx(expected, abs=1e-9)
    assert hyperbolic.circle_arc(0.1, 0.0, 0.3) == 2 * math.pi
    assert hyperbolic.circle_arc(0.5, 0.0, 0.3) == 0.0


def test_radial_correlation_matches_ball_cubature(schottky):
    eps, s = 0.5, 0.6
    z, w = hyperbolic._ball_nodes(0j, eps, 256)
    cubature = float(np.dot(w, hyperbolic._j_len_array(hyperbolic._phi_inverse(z, 0j), eps, s)))
    assert cubature > 0
    assert hyperbolic.correlation_integral(schottky, 0j, eps, s) == pytest.approx(cubature, rel=1e-2)


def test_composed_walk_keeps_the_determinant_normalized():
    checks = {c.name: c for c in hyperbolic.geometry_checks(100, seed=1)}
    det = checks["determinant"]
    assert det.tolerance == 1e-10
    assert det.passed
    MobiusMap(1 + 0j, 1e-6 + 0j)
    with pytest.raises(StructuralError):
        MobiusMap(1 + 0j, 1e-4 + 0j)


def test_tensor_cubature_needs_two_agreeing_doublings():
    centre, radius = hyperbolic.ball_euclid(0.2j, 0.5)

    def step(z):
        return (np.abs(z - centre) < 0.37 * radius).astype(float)

    with pytest.raises(AccuracyError):
        hyperbolic._adaptive(step, 0.2j, 0.5, 1e-6)
    smooth = hyperbolic._adaptive(lambda z: np.ones(z.shape), 0.2j, 0.5, 1e-9)
    assert smooth == pytest.approx(hyperbolic.hyperbolic_area(0.5), rel=1e-9)


def test_cover_counting_domain(schottky):
    with pytest.raises(DomainError):
        hyperbolic.cover_counting(schottky, 3, [6.0], 1.0)
    counts = hyperbolic.cover_counting(schottky, 0, [6.0, 7.0], 1.0)
    assert counts.normalized.offset == 0
    assert all(v > 0 for v in counts.normalized.values)
