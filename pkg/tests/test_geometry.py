import math

import numpy as np
import pytest

from brownian_billiards.errors import DomainError
from brownian_billiards.geometry import (
    Scatterer,
    TorusTable,
    check_finite_horizon,
    circle_entry_time,
    dist_to_boundary,
    first_hit,
    first_hit_static,
    min_gap,
    reflect,
    rescale_to,
    torus_displacement,
    torus_distance,
    wrap,
)


@pytest.mark.parametrize(
    "a, b, expected",
    [
        ((0.0, 0.0), (0.5, 0.0), (0.5, 0.0)),
        ((0.0, 0.0), (-0.5, 0.0), (0.5, 0.0)),
        ((0.1, 0.9), (0.9, 0.1), (-0.2, 0.2)),
        ((0.25, 0.25), (3.25, -1.75), (0.0, 0.0)),
    ],
)
def test_torus_displacement_minimal_image(a, b, expected):
    """Components land in (-0.5, 0.5], exact half cells resolving to +0.5"""
    assert torus_displacement(a, b) == pytest.approx(expected, abs=1e-12)


def test_wrap_never_returns_one():
    assert wrap(-1e-18, 1.0) == (0.0, 0.0)
    assert wrap(2.25, -0.75) == pytest.approx((0.25, 0.25))


def test_torus_distance_symmetric():
    assert torus_distance((0.05, 0.5), (0.95, 0.5)) == pytest.approx(0.1)
    assert torus_distance((0.95, 0.5), (0.05, 0.5)) == pytest.approx(0.1)


def test_reflect_flips_normal_component():
    assert reflect(1.0, -1.0, 0.0, 1.0) == pytest.approx((1.0, 1.0))


def test_rescale_to_squared_length():
    x, y, factor = rescale_to(3.0, 4.0, 1.0)
    assert (x, y) == pytest.approx((0.6, 0.8))
    assert factor == pytest.approx(0.2)
    with pytest.raises(DomainError):
        rescale_to(0.0, 0.0, 1.0)


def test_default_table_measures(table):
    assert table.area == pytest.approx(0.444566, abs=1e-6)
    assert table.boundary_length == pytest.approx(3.51858, abs=1e-5)
    assert table.min_curvature == pytest.approx(1 / 0.38)


def test_overlapping_scatterers_rejected():
    with pytest.raises(DomainError, match="disjointness"):
        TorusTable((Scatterer((0.0, 0.0), 0.4), Scatterer((0.5, 0.5), 0.4)))


@pytest.mark.parametrize("radius", [0.5, 0.0, -0.1])
def test_bad_radius_rejected(radius):
    with pytest.raises(DomainError):
        Scatterer((0.0, 0.0), radius)


def test_circle_entry_time():
    assert circle_entry_time(-2.0, 0.0, 1.0, 0.0, 1.0) == pytest.approx(1.0)
    # grazing, departing, and starting inside all miss
    assert circle_entry_time(-2.0, 1.0, 1.0, 0.0, 1.0) == math.inf
    assert circle_entry_time(-2.0, 0.0, -1.0, 0.0, 1.0) == math.inf
    assert circle_entry_time(-0.5, 0.0, 1.0, 0.0, 1.0) == math.inf


def test_first_hit_static_left(table):
    hit = first_hit_static((0.5, 0.0), (-1.0, 0.0), table, 2.0)
    assert hit.t == pytest.approx(0.12)
    assert hit.index == 0
    assert hit.point == pytest.approx((0.38, 0.0))
    assert hit.normal == pytest.approx((1.0, 0.0))


def test_first_hit_static_up(table):
    hit = first_hit_static((0.5, 0.0), (0.0, 1.0), table, 2.0)
    assert hit.t == pytest.approx(0.32)
    assert hit.index == 1
    assert hit.normal == pytest.approx((0.0, -1.0))


def test_first_hit_static_respects_t_max(table):
    assert first_hit_static((0.5, 0.0), (-1.0, 0.0), table, 0.01) is None


def test_first_hit_static_unwrapped_origin(table):
    """A ray started in another cell sees the same table"""
    hit = first_hit_static((3.5, -2.0), (-1.0, 0.0), table, 2.0)
    assert hit.t == pytest.approx(0.12)
    assert hit.image == (3, -2)
    assert hit.point == pytest.approx((3.38, -2.0))


def test_first_hit_static_inside_scatterer(table):
    with pytest.raises(DomainError):
        first_hit_static((0.1, 0.1), (1.0, 0.0), table, 2.0)


@pytest.mark.parametrize("Q, expected", [((0.5, 0.0), 0.12), ((0.5, 0.25), 0.07), ((0.1, 0.0), -0.28)])
def test_dist_to_boundary(table, Q, expected):
    assert dist_to_boundary(Q, table) == pytest.approx(expected)


def test_min_gap(table):
    assert min_gap(table.circles) == pytest.approx(math.sqrt(0.5) - 0.56)


def test_default_table_has_finite_horizon(table):
    report = check_finite_horizon(table, n_directions=90, n_offsets=32)
    assert report.passed
    assert 0.0 < report.worst_free_path <= table.l_max


def test_open_corridor_detected():
    table = TorusTable((Scatterer((0.0, 0.0), 0.1),))
    report = check_finite_horizon(table, n_directions=8, n_offsets=8)
    assert not report.passed
    assert report.worst_free_path == math.inf
    assert report.offending_origin is not None


def test_empty_table_has_infinite_horizon():
    report = check_finite_horizon(TorusTable(()), n_directions=8, n_offsets=4)
    assert not report.passed
    assert report.worst_free_path == math.inf


@pytest.mark.parametrize("table_name", ["table", "second_table"])
def test_first_hit_lands_on_the_boundary_moving_inward(request, table_name, rng):
    table = request.getfixturevalue(table_name)
    hits = 0
    while hits < 500:
        origin = rng.random(2)
        if dist_to_boundary(origin, table) <= 0.0:
            continue
        theta = 2.0 * math.pi * rng.random()
        direction = (math.cos(theta), math.sin(theta))
        hit = first_hit(origin, direction, table.circle_array, table.l_max)
        assert hit is not None
        assert hit.t > 0.0
        cx, cy, rho = table.circles[hit.index]
        i, j = hit.image
        assert math.hypot(hit.point[0] - cx - i, hit.point[1] - cy - j) == pytest.approx(rho, abs=1e-12)
        assert np.dot(hit.normal, (hit.point[0] - cx - i, hit.point[1] - cy - j)) > 0.0
        assert np.dot(direction, hit.normal) < 0.0
        hits += 1
