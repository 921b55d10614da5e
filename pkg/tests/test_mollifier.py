import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avgdg.dg_space import BrokenSpace, DgFunction, project, random_function
from avgdg.mesh import build_structured_unit_square
from avgdg.mollifier import (
    DECOMPOSITION_SIGN,
    Mollifier,
    average_at,
    average_values,
    double_convolved_grad_at,
    eta2_mass,
    eta2_value,
    eta_mass,
    face_convolution_at,
    grad_average_at,
    grad_average_values,
    gradient_decomposition_at,
    volume_average_grad_values,
)


def mollifier_with_radius(r, s=1.6):
    return Mollifier(r ** (1.0 / s), s)


def step_function():
    """Two-element mesh, k = 0, value 1 below the diagonal and 0 above."""
    mesh = build_structured_unit_square(1)
    space = BrokenSpace(mesh, 0)
    c = np.zeros(space.total_dofs)
    c[0] = np.sqrt(mesh.areas[0])  # orthonormal constant is 1 / sqrt(area)
    return DgFunction(space, c)


def fd_gradient(m, fn, x, delta=1e-4):
    e = np.eye(2) * delta
    pts = np.array([x + e[0], x - e[0], x + e[1], x - e[1]])
    v = average_values(m, fn, pts)
    return np.array([v[0] - v[1], v[2] - v[3]]) / (2 * delta)


def test_kernel_masses():
    m = Mollifier(0.3, 1.6)
    assert eta_mass(m) == pytest.approx(1.0, abs=1e-6)
    assert eta2_mass(m) == pytest.approx(1.0, abs=1e-6)


def test_eta2_values():
    m = Mollifier(0.5, 2.0)
    r = m.radius
    assert eta2_value(m, np.zeros(2)) == pytest.approx(1.0 / (np.pi * r * r))
    assert eta2_value(m, np.array([2 * r, 0.0])) == 0.0


def test_parameters_validated():
    with pytest.raises(ValueError):
        Mollifier(0.1, 1.0)
    with pytest.raises(ValueError):
        Mollifier(0.0, 1.6)


def test_sign_calibration_against_finite_differences():
    fn = step_function()
    m = mollifier_with_radius(0.1)
    for x in ([0.5, 0.45], [0.42, 0.47], [0.6, 0.57]):
        x = np.array(x)
        fd = fd_gradient(m, fn, x)
        res = {s: np.linalg.norm(gradient_decomposition_at(m, fn, x, sign=s) - fd)
               for s in (1.0, -1.0)}
        assert min(res, key=res.get) == DECOMPOSITION_SIGN
        assert res[DECOMPOSITION_SIGN] < 1e-4 * np.linalg.norm(fd)
        # the circle formula agrees with the calibrated decomposition
        assert np.allclose(grad_average_at(m, fn, x),
                           gradient_decomposition_at(m, fn, x), rtol=0, atol=1e-6)


def test_average_of_linear_reproduces_point_values():
    mesh = build_structured_unit_square(4)
    fn = project(lambda x, y: 2 * x - 3 * y + 1, BrokenSpace(mesh, 1))
    m = mollifier_with_radius(0.08)
    pts = np.array([[0.5, 0.5], [0.31, 0.62], [0.2, 0.77]])
    vals = average_values(m, fn, pts)
    assert np.allclose(vals, 2 * pts[:, 0] - 3 * pts[:, 1] + 1, atol=1e-8)
    grads = grad_average_values(m, fn, pts)
    assert np.allclose(grads, [2.0, -3.0], atol=1e-7)


def test_polygonal_route_close_to_exact_arcs():
    mesh = build_structured_unit_square(2)
    fn = random_function(BrokenSpace(mesh, 1), 1)
    m = mollifier_with_radius(0.2)
    x = np.array([0.45, 0.4])
    exact = average_at(m, fn, x)
    errs = [abs(average_at(m, fn, x, n_circ=n) - exact) for n in (64, 128)]
    assert errs[1] < errs[0] / 3
    assert errs[1] < 1e-3 * abs(exact) + 1e-3
    g = grad_average_at(m, fn, x)
    gp = grad_average_at(m, fn, x, n_circ=256)
    assert np.linalg.norm(g - gp) < 1e-3 * np.linalg.norm(g)


def test_average_of_constant_is_one_inside():
    mesh = build_structured_unit_square(4)
    fn = project(lambda x, y: np.ones_like(x), BrokenSpace(mesh, 0))
    m = mollifier_with_radius(0.1)
    pts = np.array([[0.5, 0.5], [0.11, 0.2], [0.33, 0.74]])
    assert np.allclose(average_values(m, fn, pts), 1.0, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 3), st.floats(0.0, 1.0), st.floats(1.0, 2.0))
def test_support_outside_extended_domain(side, t, factor):
    mesh = build_structured_unit_square(2)
    fn = random_function(BrokenSpace(mesh, 1), 0)
    m = mollifier_with_radius(0.1)
    base = [np.array([t, 0.0]), np.array([1.0, t]), np.array([t, 1.0]), np.array([0.0, t])][side]
    out = [np.array([0, -1.0]), np.array([1.0, 0]), np.array([0, 1.0]), np.array([-1.0, 0])][side]
    x = base + factor * m.radius * out
    assert average_at(m, fn, x) == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(grad_average_at(m, fn, x), 0.0, atol=1e-12)


def test_decomposition_without_jumps_in_reach():
    mesh = build_structured_unit_square(2)
    fn = random_function(BrokenSpace(mesh, 1), 4)
    m = mollifier_with_radius(0.02)
    x = mesh.centroids[3]
    assert all(np.all(face_convolution_at(m, fn, f, x) == 0) for f in range(mesh.n_faces))
    vol = volume_average_grad_values(m, fn, x[None])[0]
    assert np.allclose(gradient_decomposition_at(m, fn, x), vol)
    assert np.allclose(vol, fn.grad_eval(3, x), atol=1e-9)


def test_continuous_function_decomposition():
    mesh = build_structured_unit_square(4)
    fn = project(lambda x, y: x + 2 * y, BrokenSpace(mesh, 1))
    m = mollifier_with_radius(0.05)
    x = np.array([0.5, 0.52])  # interior faces in reach, boundary far away
    res = grad_average_at(m, fn, x) - gradient_decomposition_at(m, fn, x)
    assert np.linalg.norm(res) < 1e-8


def test_double_convolution_of_linear_and_constant():
    mesh = build_structured_unit_square(4)
    m = mollifier_with_radius(0.05)
    lin = project(lambda x, y: x + 2 * y, BrokenSpace(mesh, 1))
    assert np.allclose(double_convolved_grad_at(m, lin, np.array([0.5, 0.5])), [1, 2], atol=1e-8)
    const = project(lambda x, y: 3 + 0 * x, BrokenSpace(mesh, 1))
    assert np.allclose(double_convolved_grad_at(m, const, np.array([0.4, 0.6])), 0, atol=1e-9)
