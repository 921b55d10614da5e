"""Conforming triangular meshes with full face topology."""

from dataclasses import dataclass

import numpy as np

BOUNDARY = -1


class MeshError(ValueError):
    """Raised for malformed mesh files and broken topology."""


@dataclass(frozen=True)
class Face:
    vertices: tuple
    plus_element: int
    minus_element: int  # BOUNDARY for boundary faces
    unit_normal: np.ndarray  # outward from plus_element
    diameter: float
    is_boundary: bool


def _signed_areas(vertices, elements):
    p = vertices[elements]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


class Mesh:
    """Immutable 2D simplicial mesh.

    Faces are ordered by their sorted vertex pair. For an interior face the
    plus element is the lower-numbered neighbour and the unit normal points
    out of it.
    """

    def __init__(self, vertices, elements):
        vertices = np.array(vertices, dtype=float)
        elements = np.array(elements, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be an (V, 2) array")
        if elements.ndim != 2 or elements.shape[1] != 3:
            raise MeshError("elements must be a (T, 3) array")
        if elements.size and (elements.min() < 0 or elements.max() >= len(vertices)):
            bad = int(np.nonzero((elements < 0) | (elements >= len(vertices)))[0][0])
            raise MeshError(f"element {bad} references a vertex out of range")
        area = _signed_areas(vertices, elements)
        if np.any(np.abs(area) <= 1e-14 * max(1.0, np.abs(area).max(initial=0.0))):
            bad = int(np.argmin(np.abs(area)))
            raise MeshError(f"element {bad} is degenerate (zero area)")
        flip = area < 0
        elements[flip] = elements[flip][:, [0, 2, 1]]

        self.vertices = vertices
        self.elements = elements
        self.vertices.setflags(write=False)
        self.elements.setflags(write=False)
        self._build_faces()
        self._build_metrics()

    def _build_faces(self):
        elems = self.elements
        nel = len(elems)
        local = np.array([[1, 2], [2, 0], [0, 1]])  # face i is opposite vertex i
        pairs = elems[:, local]  # (T, 3, 2)
        keys = np.sort(pairs, axis=2).reshape(-1, 2)
        owner = np.repeat(np.arange(nel), 3)
        slot = np.tile(np.arange(3), nel)
        uniq, inverse, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.ravel()
        if np.any(counts > 2):
            f = int(np.nonzero(counts > 2)[0][0])
            raise MeshError(
                f"face ({uniq[f, 0]}, {uniq[f, 1]}) is shared by {counts[f]} elements"
            )
        nf = len(uniq)
        plus = np.full(nf, -1, dtype=np.int64)
        minus = np.full(nf, BOUNDARY, dtype=np.int64)
        order = np.lexsort((owner, inverse))
        for idx in order:
            f = inverse[idx]
            if plus[f] < 0:
                plus[f] = owner[idx]
            else:
                minus[f] = owner[idx]
        elem_faces = inverse.reshape(nel, 3)

        a = self.vertices[uniq[:, 0]]
        b = self.vertices[uniq[:, 1]]
        t = b - a
        diam = np.hypot(t[:, 0], t[:, 1])
        normal = np.column_stack([t[:, 1], -t[:, 0]]) / diam[:, None]
        centroid = self.vertices[elems[plus]].mean(axis=1)
        mid = 0.5 * (a + b)
        wrong = np.einsum("ij,ij->i", normal, mid - centroid) < 0
        normal[wrong] *= -1.0

        self.face_vertices = uniq
        self.face_plus = plus
        self.face_minus = minus
        self.face_normals = normal
        self.face_diameters = diam
        self.element_faces = elem_faces
        self.is_boundary_face = minus == BOUNDARY
        for arr in (uniq, plus, minus, normal, diam, elem_faces, self.is_boundary_face):
            arr.setflags(write=False)

    def _build_metrics(self):
        p = self.vertices[self.elements]
        edge = np.stack(
            [p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1
        )
        lengths = np.linalg.norm(edge, axis=2)
        area = _signed_areas(self.vertices, self.elements)
        semi = 0.5 * lengths.sum(axis=1)
        inradius = area / semi
        circumradius = lengths.prod(axis=1) / (4.0 * area)
        self.areas = area
        self.centroids = p.mean(axis=1)
        self.element_diameters = lengths.max(axis=1)
        self.shape_ratios = circumradius / inradius
        self.h_global = float(self.face_diameters.max())
        self.shape_regularity = float(self.shape_ratios.max())

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_faces(self):
        return len(self.face_vertices)

    def face(self, i):
        i = int(i)
        return Face(
            vertices=tuple(int(v) for v in self.face_vertices[i]),
            plus_element=int(self.face_plus[i]),
            minus_element=int(self.face_minus[i]),
            unit_normal=self.face_normals[i].copy(),
            diameter=float(self.face_diameters[i]),
            is_boundary=bool(self.is_boundary_face[i]),
        )

    @property
    def faces(self):
        return [self.face(i) for i in range(self.n_faces)]

    def triangle(self, e):
        return self.vertices[self.elements[e]]

    @property
    def triangles(self):
        return self.vertices[self.elements]

    def face_segment(self, f):
        return self.vertices[self.face_vertices[f]]

    def boundary_faces(self):
        return np.nonzero(self.is_boundary_face)[0]

    def interior_faces(self):
        return np.nonzero(~self.is_boundary_face)[0]

    def element_neighbours(self, e):
        out = []
        for f in self.element_faces[e]:
            other = self.face_minus[f] if self.face_plus[f] == e else self.face_plus[f]
            if other != BOUNDARY:
                out.append(int(other))
        return out

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def to_text(self):
        lines = [f"vertices {self.n_vertices}"]
        lines += [f"{float(x)!r} {float(y)!r}" for x, y in self.vertices]
        lines.append(f"elements {self.n_elements}")
        lines += [f"{i} {j} {k}" for i, j, k in self.elements]
        return "\n".join(lines) + "\n"

    def __repr__(self):
        return (
            f"Mesh(vertices={self.n_vertices}, elements={self.n_elements}, "
            f"faces={self.n_faces}, h={self.h_global:.6g})"
        )


def build_structured_unit_square(n):
    """Unit square split into n x n cells, each cut along its rising diagonal."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    elements = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10 = v00 + 1
            v01 = v00 + n + 1
            v11 = v01 + 1
            elements.append((v00, v10, v11))
            elements.append((v00, v11, v01))
    return Mesh(vertices, elements)


def _parse_header(line, lineno, keyword):
    parts = line.split()
    if len(parts) != 2 or parts[0] != keyword:
        raise MeshError(f"line {lineno}: expected '{keyword} <count>', got {line!r}")
    try:
        count = int(parts[1])
    except ValueError:
        raise MeshError(f"line {lineno}: bad {keyword} count {parts[1]!r}") from None
    if count < 0:
        raise MeshError(f"line {lineno}: negative {keyword} count")
    return count


def load_mesh(text, quasi_uniform_factor=4.0):
    """Parse the plain-text mesh format and rebuild the face topology.

    Clockwise triangles are reoriented. Raises MeshError with a line number
    for syntax problems and with the offending face for topology problems.
    """
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        rows.append((lineno, line))
    it = iter(rows)

    def take(what):
        try:
            return next(it)
        except StopIteration:
            raise MeshError(f"unexpected end of file while reading {what}") from None

    lineno, line = take("vertex header")
    nv = _parse_header(line, lineno, "vertices")
    vertices = []
    for _ in range(nv):
        lineno, line = take("vertices")
        parts = line.split()
        if len(parts) != 2:
            raise MeshError(f"line {lineno}: expected 'x y', got {line!r}")
        try:
            vertices.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise MeshError(f"line {lineno}: bad coordinate in {line!r}") from None
    lineno, line = take("element header")
    nt = _parse_header(line, lineno, "elements")
    elements = []
    for _ in range(nt):
        lineno, line = take("elements")
        parts = line.split()
        if len(parts) != 3:
            raise MeshError(f"line {lineno}: expected 'i j k', got {line!r}")
        try:
            tri = tuple(int(p) for p in parts)
        except ValueError:
            raise MeshError(f"line {lineno}: bad vertex index in {line!r}") from None
        for v in tri:
            if v < 0 or v >= nv:
                raise MeshError(f"line {lineno}: vertex index {v} out of range [0, {nv})")
        if len(set(tri)) != 3:
            raise MeshError(f"line {lineno}: repeated vertex in element {line!r}")
        elements.append(tri)
    extra = next(it, None)
    if extra is not None:
        raise MeshError(f"line {extra[0]}: unexpected trailing content {extra[1]!r}")
    if nt == 0:
        raise MeshError("mesh has no elements")

    mesh = Mesh(vertices, elements)
    used = np.zeros(nv, dtype=bool)
    used[mesh.elements.ravel()] = True
    if not used.all():
        raise MeshError(f"vertex {int(np.nonzero(~used)[0][0])} is not used by any element")
    if mesh.face_diameters.min() * quasi_uniform_factor < mesh.h_global:
        f = int(np.argmin(mesh.face_diameters))
        raise MeshError(
            f"face {tuple(mesh.face_vertices[f])} has diameter "
            f"{mesh.face_diameters[f]:.3g}, below h/{quasi_uniform_factor:g} "
            f"(h = {mesh.h_global:.3g}); mesh is not quasi-uniform"
        )
    return mesh


def mesh_metrics(mesh):
    return {
        "h_global": mesh.h_global,
        "min_face_diameter": float(mesh.face_diameters.min()),
        "shape_regularity": mesh.shape_regularity,
        "n_vertices": mesh.n_vertices,
        "n_elements": mesh.n_elements,
        "n_faces": mesh.n_faces,
        "n_boundary_faces": int(mesh.is_boundary_face.sum()),
        "n_interior_faces": int((~mesh.is_boundary_face).sum()),
    }
