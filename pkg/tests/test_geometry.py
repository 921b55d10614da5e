import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avgdg import geometry as geo
from avgdg.mesh import build_structured_unit_square

TRI = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def test_lens_area_limits():
    r = 0.3
    assert geo.lens_area(r, 0.0) == pytest.approx(np.pi * r * r)
    assert geo.lens_area(r, 2 * r) == 0.0
    assert geo.lens_area(r, 5.0) == 0.0


@settings(max_examples=40)
@given(st.floats(0.01, 2.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_lens_area_monotone(r, a, b):
    lo, hi = sorted([a, b])
    assert geo.lens_area(r, 2 * r * lo) >= geo.lens_area(r, 2 * r * hi) - 1e-15


def test_lens_kernel_mass():
    # int over B(0, 2r) of lens(r, |z|) / (pi r^2)^2 = 1
    r = 0.2
    from avgdg.quadrature import smoothed_gauss

    x, w = smoothed_gauss(40)
    rho = 2 * r * x
    mass = np.sum(w * 2 * r * geo.lens_area(r, rho) * 2 * np.pi * rho) / (np.pi * r * r) ** 2
    assert mass == pytest.approx(1.0, abs=1e-10)


def test_segment_ball_intersection():
    seg = np.array([[0.0, 0.0], [1.0, 0.0]])
    t0, t1 = geo.segment_ball_intersection(seg, np.array([0.5, 0.3]), 0.5)
    assert (t0, t1) == pytest.approx((0.1, 0.9))
    assert geo.segment_ball_intersection(seg, np.array([0.5, 2.0]), 0.5) is None


@pytest.mark.parametrize("c, r", [((0.3, 0.25), 0.35), ((0.5, 0.5), 0.3), ((0.1, 0.1), 0.2)])
def test_clip_area_converges_at_second_order(c, r):
    areas = [geo.clip_ball_triangle(np.array(c), r, TRI, n).area() for n in (32, 64, 128, 256)]
    d = np.abs(np.diff(areas))
    assert np.all((d[:-1] / d[1:] > 3.5) & (d[:-1] / d[1:] < 4.5))
    exact = _exact_area(np.array(c), r, TRI)
    assert abs(areas[-1] - exact) < abs(areas[0] - exact) / 40


def _exact_area(c, r, tri):
    one = lambda y, owner: np.ones(len(y))
    return float(geo.polar_ball_triangle(c[None], r, tri[None], one)[0])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.02, 0.6))
def test_clip_area_bounds(x, y, r):
    area = geo.clip_ball_triangle(np.array([x, y]), r, TRI, 64).area()
    assert -1e-14 <= area <= min(0.5, np.pi * r * r) + 1e-12


def test_exact_disc_area_against_polygon():
    c, r = np.array([0.2, 0.3]), 0.4
    exact = _exact_area(c, r, TRI)
    poly = geo.clip_ball_triangle(c, r, TRI, 4096).area()
    assert exact == pytest.approx(poly, abs=1e-6)


@settings(max_examples=8, deadline=None)
@given(st.floats(0.3, 0.7), st.floats(0.3, 0.7), st.floats(0.05, 0.25))
def test_clip_additivity_over_mesh(x, y, r):
    mesh = build_structured_unit_square(2)
    c = np.array([x, y])
    n = 256
    total = sum(geo.clip_ball_triangle(c, r, mesh.triangle(e), n).area()
                for e in range(mesh.n_elements))
    assert total == pytest.approx(0.5 * n * r * r * np.sin(2 * np.pi / n), rel=1e-10)
    one = lambda p, owner: np.ones(len(p))
    exact = geo.polar_ball_triangle(np.repeat(c[None], mesh.n_elements, 0), r,
                                    mesh.triangles, one).sum()
    assert exact == pytest.approx(np.pi * r * r, rel=1e-6)


def test_integrate_polynomial_over_region():
    reg = geo.clip_ball_triangle(np.array([0.0, 0.0]), 5.0, TRI, 64)  # whole triangle
    val = geo.integrate_polynomial_over_region(reg, lambda p: p[:, 0] * p[:, 1], 2)
    assert val == pytest.approx(1.0 / 24.0, rel=1e-12)


def test_empty_region():
    reg = geo.clip_ball_triangle(np.array([5.0, 5.0]), 0.1, TRI)
    assert reg.is_empty and reg.area() == 0.0


def test_inside_arcs_cover_full_circle_for_interior_disc():
    owner, pts, th, wt = geo.inside_arc_quadrature(
        np.array([[0.25, 0.25]]), np.array([0.1]), TRI[None], 10)
    assert wt.sum() == pytest.approx(2 * np.pi, rel=1e-12)
    assert np.allclose(np.linalg.norm(pts - [0.25, 0.25], axis=1), 0.1)


def test_candidate_pairs_exact_reach():
    mesh = build_structured_unit_square(4)
    pts = np.array([[0.5, 0.5], [0.1, 0.9]])
    pi, ti = geo.candidate_pairs(pts, mesh.triangles, 0.05)
    d = geo.point_triangle_distance(pts[pi], mesh.triangles[ti])
    assert np.all(d < 0.05)
    assert set(ti[pi == 0]) == {e for e in range(mesh.n_elements)
                                if geo.point_triangle_distance(pts[:1], mesh.triangles[e:e + 1])[0] < 0.05}


@pytest.mark.parametrize("dist", [0.05, 0.2])
def test_breakpoint_rule_area_and_kinked_integrand(dist):
    mesh = build_structured_unit_square(2)
    segs = mesh.vertices[mesh.face_vertices]
    curves = geo.offset_curves(segs, mesh.vertices, dist)
    poly = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    pts, wts = geo.breakpoint_rule(poly, curves, 6)
    assert wts.sum() == pytest.approx(1.0, rel=1e-13)
    # |x - 0.5| has a kink on the vertical face x = 0.5 (a curve at distance 0)
    curves0 = geo.offset_curves(segs, mesh.vertices, 0.0) + curves
    pts, wts = geo.breakpoint_rule(poly, curves0, 6)
    assert wts @ np.abs(pts[:, 0] - 0.5) == pytest.approx(0.25, rel=1e-12)
