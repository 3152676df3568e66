import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shapemapper import shapes as S
from shapemapper.shapes import Box, Capsule, Rotate, Sphere, Subtraction, Torus, Translate


def rand_points(n=1000, seed=0, scale=1.1):
    return np.random.default_rng(seed).uniform(-scale, scale, size=(n, 3))


def test_sphere_values():
    s = Sphere(0.5)
    assert S.sdf_eval(s, [0, 0, 0]) == pytest.approx(-0.5)
    assert S.sdf_eval(s, [1, 0, 0]) == pytest.approx(0.5)


def test_union_is_min():
    a, b = Sphere(0.3), Box(0.2, 0.2, 0.2)
    p = rand_points()
    np.testing.assert_array_equal(S.union(a, b).sdf(p), np.minimum(a.sdf(p), b.sdf(p)))


def test_csg_bounds_pointwise():
    parts = [Sphere(0.3), Translate((0.2, 0, 0), Box(0.2, 0.1, 0.3)), Torus(0.4, 0.1)]
    p = rand_points(seed=1)
    u = S.union(*parts).sdf(p)
    i = S.intersect(*parts).sdf(p)
    for c in parts:
        assert (u <= c.sdf(p)).all()
        assert (i >= c.sdf(p)).all()


def test_primitives_match_formulas():
    p = rand_points(seed=2)
    np.testing.assert_allclose(Sphere(0.4).sdf(p), np.sqrt((p**2).sum(1)) - 0.4, atol=1e-12)

    h = np.array([0.3, 0.2, 0.1])
    q = np.abs(p) - h
    box = np.sqrt((np.maximum(q, 0) ** 2).sum(1)) + np.minimum(q.max(1), 0)
    np.testing.assert_allclose(Box(*h).sdf(p), box, atol=1e-12)

    ring = np.sqrt(p[:, 0] ** 2 + p[:, 2] ** 2) - 0.5
    np.testing.assert_allclose(Torus(0.5, 0.1).sdf(p), np.sqrt(ring**2 + p[:, 1] ** 2) - 0.1, atol=1e-12)

    a, b = np.array([-0.3, 0.1, 0]), np.array([0.4, -0.2, 0.1])
    t = np.clip(((p - a) @ (b - a)) / ((b - a) @ (b - a)), 0, 1)
    cap = np.linalg.norm(p - a - t[:, None] * (b - a), axis=1) - 0.05
    np.testing.assert_allclose(Capsule(tuple(a), tuple(b), 0.05).sdf(p), cap, atol=1e-12)


def test_subtraction():
    s = Subtraction(Sphere(0.5), Sphere(0.25))
    assert S.sdf_eval(s, [0, 0, 0]) == pytest.approx(0.25)
    assert S.sdf_eval(s, [0.4, 0, 0]) < 0


def test_rotate_about_z_moves_box():
    long_x = Box(0.5, 0.1, 0.1)
    turned = Rotate("z", 90, long_x)
    assert S.sdf_eval(turned, [0, 0.45, 0]) < 0
    assert S.sdf_eval(turned, [0.45, 0, 0]) > 0


def test_torus_lies_in_xz_plane():
    t = Torus(0.5, 0.05)
    assert S.sdf_eval(t, [0.5, 0, 0]) == pytest.approx(-0.05)
    assert S.sdf_eval(t, [0, 0, 0.5]) == pytest.approx(-0.05)
    assert S.sdf_eval(t, [0, 0.5, 0]) > 0.4


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.8), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-180, 180))
def test_primitives_are_one_lipschitz(r, tx, ty, deg):
    shape = Translate((tx, ty, 0.0), Rotate("y", deg, S.union(Sphere(r), Box(r, r / 2, r / 3))))
    rng = np.random.default_rng(0)
    p = rng.uniform(-1, 1, size=(200, 3))
    q = p + rng.normal(scale=0.05, size=p.shape)
    lhs = np.abs(shape.sdf(p) - shape.sdf(q))
    assert (lhs <= np.linalg.norm(p - q, axis=1) + 1e-9).all()


def test_parse_roundtrip():
    text = "(subtract (union (sphere 0.5) (translate 0.1 -0.2 0 (rotate x 90 (torus 0.3 0.05)))) (capsule 0 0 0 0.5 0 0 0.1))"
    shape = S.parse_csg(text)
    assert S.parse_csg(shape.to_sexpr()) == shape
    p = rand_points(100)
    np.testing.assert_array_equal(S.parse_csg(shape.to_sexpr()).sdf(p), shape.sdf(p))


@pytest.mark.parametrize(
    "bad",
    ["(sphere)", "(blob 1)", "(rotate w 90 (sphere 1))", "(sphere 1) extra", "(union", "(translate 1 2 (sphere 1))"],
)
def test_parse_errors(bad):
    with pytest.raises(ValueError):
        S.parse_csg(bad)


def test_manifest_comments_and_duplicates():
    text = "# header\na (sphere 0.5)  # trailing\n\nb (box 0.1 0.2 0.3)\n"
    shapes = S.parse_manifest(text)
    assert [sid for sid, _ in shapes] == ["a", "b"]
    assert S.parse_manifest(S.format_manifest(shapes)) == shapes
    with pytest.raises(ValueError, match="duplicate"):
        S.parse_manifest("a (sphere 1)\na (sphere 2)\n")
    with pytest.raises(ValueError, match="line 1"):
        S.parse_manifest("lonely\n")


def test_benchmark_roster():
    roster = S.benchmark_shapes()
    assert len(roster) == 16
    assert len({sid for sid, _ in roster}) == 16
    assert sum(sid.startswith("car_") for sid, _ in roster) == 8
    # every shape lies inside the unit ball: the field is positive on a radius-0.95 shell
    shell = S.sample_on_sphere(4000, np.random.default_rng(0)) * 0.95
    for sid, shape in roster:
        assert (shape.sdf(shell) > 0).all(), sid


def test_sample_unit_sphere():
    p = S.sample_unit_sphere(100_000, seed=0)
    r = np.linalg.norm(p, axis=1)
    assert (r <= 1).all()
    assert 0.74 <= r.mean() <= 0.76
    np.testing.assert_array_equal(S.sample_unit_sphere(50, 3), S.sample_unit_sphere(50, 3))
    with pytest.raises(ValueError):
        S.sample_unit_sphere(0)


def test_near_surface_small_sigma_is_on_surface():
    s = S.sample_near_surface(Sphere(0.5), 2000, sigmas=(1e-6,), seed=0)
    assert np.abs(s.sdf).max() < 2e-3


def test_near_surface_sigma_spread():
    s = S.sample_near_surface(Sphere(0.5), 20_000, sigmas=(0.05,), seed=1)
    assert s.sdf.std() == pytest.approx(0.05, rel=0.05)


def test_near_surface_splits_budget():
    s = S.sample_near_surface(Sphere(0.5), 1001, seed=2)
    assert len(s) == 1001
    assert (np.abs(s.points) <= 1.1).all()


def test_empty_shape_errors():
    empty = Subtraction(Sphere(0.0), Sphere(0.0))
    with pytest.raises(ValueError, match="empty"):
        S.sample_near_surface(empty, 100, seed=0)


def test_make_dataset_counts_and_bounds():
    roster = S.benchmark_shapes()[:2]
    data = S.make_dataset(roster, 100, 100, seed=0)
    assert [len(d) for d in data] == [200, 200]
    assert [d.shape_id for d in data] == [sid for sid, _ in roster]
    for d in data:
        assert (np.abs(d.sdf) <= 2).all()
        assert (np.abs(d.points) <= 1.1).all()


def test_make_dataset_streams_differ_per_shape():
    ball = Sphere(0.5)
    a, b = S.make_dataset([("x", ball), ("y", ball)], 50, 50, seed=0)
    assert not np.array_equal(a.points, b.points)


def test_make_dataset_order_independent():
    roster = S.benchmark_shapes()[:3]
    fwd = S.make_dataset(roster, 50, 50, seed=4)
    rev = S.make_dataset(roster[::-1], 50, 50, seed=4)
    for a, b in zip(fwd, rev[::-1]):
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.sdf, b.sdf)


def test_sample_set_validation():
    with pytest.raises(ValueError):
        S.SdfSampleSet(np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(ValueError):
        S.SdfSampleSet(np.zeros((2, 3)), np.array([0.0, math.nan]))
