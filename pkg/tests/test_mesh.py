import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avgdg.mesh import BOUNDARY, Mesh, MeshError, build_structured_unit_square, load_mesh, mesh_metrics


@pytest.mark.parametrize("n", [1, 2, 4, 8])
def test_structured_family(n):
    mesh = build_structured_unit_square(n)
    assert mesh.n_elements == 2 * n * n
    assert mesh.h_global == pytest.approx(np.sqrt(2.0) / n, rel=1e-15)
    assert mesh.areas.sum() == pytest.approx(1.0, abs=1e-12)
    assert int(mesh.is_boundary_face.sum()) == 4 * n


def test_shape_regularity_constant_across_n():
    vals = [build_structured_unit_square(n).shape_regularity for n in (1, 2, 4, 8)]
    assert np.allclose(vals, vals[0], rtol=1e-12)


def test_euler_and_face_counts():
    mesh = build_structured_unit_square(3)
    # V - E + F = 1 for a triangulated disc
    assert mesh.n_vertices - mesh.n_faces + mesh.n_elements == 1
    assert np.all(mesh.face_minus[mesh.is_boundary_face] == BOUNDARY)


def test_normals_point_out_of_plus_element():
    mesh = build_structured_unit_square(2)
    for f in range(mesh.n_faces):
        a, b = mesh.face_segment(f)
        mid = 0.5 * (a + b)
        c = mesh.centroids[mesh.face_plus[f]]
        assert (mid - c) @ mesh.face_normals[f] > 0
        assert np.linalg.norm(mesh.face_normals[f]) == pytest.approx(1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.randoms(use_true_random=False))
def test_face_set_independent_of_element_order(n, rnd):
    mesh = build_structured_unit_square(n)
    order = list(range(mesh.n_elements))
    rnd.shuffle(order)
    other = Mesh(mesh.vertices, mesh.elements[order])
    faces = {tuple(sorted(fv)) for fv in mesh.face_vertices}
    faces2 = {tuple(sorted(fv)) for fv in other.face_vertices}
    assert faces == faces2


def test_text_round_trip():
    mesh = build_structured_unit_square(2)
    again = load_mesh("# comment\n" + mesh.to_text())
    assert np.array_equal(again.vertices, mesh.vertices)
    assert mesh_metrics(again) == mesh_metrics(mesh)


def test_clockwise_elements_reoriented():
    text = "vertices 3\n0 0\n0 1\n1 0\nelements 1\n0 1 2\n"
    mesh = load_mesh(text)
    assert mesh.areas[0] == pytest.approx(0.5)


@pytest.mark.parametrize(
    "text, match",
    [
        ("vertices 2\n0 0\n1 0\nelements 1\n0 1 5\n", "out of range"),
        ("vertices x\n", "bad vertices count"),
        ("vertices 3\n0 0\n1 0\n0 1\nelements 1\n0 0 1\n", "repeated vertex"),
        ("vertices 3\n0 0\n1 0\n0 1\nelements 1\n0 1 2\nextra\n", "trailing"),
        ("vertices 3\n0 0\n1 0\n", "end of file"),
    ],
)
def test_load_mesh_errors(text, match):
    with pytest.raises(MeshError, match=match):
        load_mesh(text)


def test_structured_rejects_bad_n():
    with pytest.raises(ValueError):
        build_structured_unit_square(0)
