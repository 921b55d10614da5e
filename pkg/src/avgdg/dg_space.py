"""Broken polynomial spaces, traces, jumps and averages."""

import csv
import io

import numpy as np

from .mesh import BOUNDARY
from .quadrature import map_triangles_rule, triangle_rule


def monomial_exponents(k):
    """Exponent pairs (a, b) with a + b <= k, ordered by total degree."""
    return [(d - b, b) for d in range(k + 1) for b in range(d + 1)]


def n_local_dofs(k):
    return (k + 1) * (k + 2) // 2


class BrokenSpace:
    """Discontinuous piecewise polynomials with an L2-orthonormal basis.

    Each element carries its own basis: monomials in the scaled coordinates
    (x - centroid) / diameter, orthonormalised against exact quadrature.
    Elements of lower degree than the maximum are zero-padded so that all
    evaluation routines are vectorised over elements.
    """

    def __init__(self, mesh, degree=1, degrees=None):
        self.mesh = mesh
        if degrees is None:
            degrees = np.full(mesh.n_elements, int(degree), dtype=np.int64)
        degrees = np.asarray(degrees, dtype=np.int64)
        if degrees.shape != (mesh.n_elements,) or degrees.min() < 0:
            raise ValueError("degrees must be one non-negative integer per element")
        self.degrees = degrees
        self.degrees.setflags(write=False)
        self.kmax = int(degrees.max())
        self.exponents = np.array(monomial_exponents(self.kmax), dtype=np.int64)
        self.nmax = len(self.exponents)
        counts = (degrees + 1) * (degrees + 2) // 2
        self.dof_counts = counts
        self.dof_offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.total_dofs = int(counts.sum())
        self.centers = mesh.centroids
        self.scales = mesh.element_diameters
        self._build_basis()

    def _build_basis(self):
        mesh = self.mesh
        rule = triangle_rule(2 * self.kmax)
        pts, wts = map_triangles_rule(rule, mesh.triangles)
        nel = mesh.n_elements
        coeffs = np.zeros((nel, self.nmax, self.nmax))
        for e in range(nel):
            n = self.dof_counts[e]
            m = self._monomials(np.full(len(wts[e]), e), pts[e])[:, :n]
            gram = (m * wts[e][:, None]).T @ m
            L = np.linalg.cholesky(gram)
            coeffs[e, :n, :n] = np.linalg.inv(L)
        self.coeffs = coeffs  # basis_i = sum_j coeffs[e, i, j] * monomial_j

    def _powers(self, elems, points):
        xi = (points - self.centers[elems]) / self.scales[elems][:, None]
        k = self.kmax
        px = np.ones((len(xi), k + 1))
        py = np.ones((len(xi), k + 1))
        for j in range(1, k + 1):
            px[:, j] = px[:, j - 1] * xi[:, 0]
            py[:, j] = py[:, j - 1] * xi[:, 1]
        return px, py

    def _monomials(self, elems, points):
        px, py = self._powers(elems, points)
        ex = self.exponents
        return px[:, ex[:, 0]] * py[:, ex[:, 1]]

    def _monomial_grads(self, elems, points):
        px, py = self._powers(elems, points)
        ex = self.exponents
        a = ex[:, 0]
        b = ex[:, 1]
        dx = a * px[:, np.maximum(a - 1, 0)] * py[:, b]
        dy = b * px[:, a] * py[:, np.maximum(b - 1, 0)]
        inv = 1.0 / self.scales[elems][:, None]
        return np.stack([dx * inv, dy * inv], axis=-1)

    def basis_values(self, elems, points):
        """Basis values (N, nmax) for points (N, 2) paired with elements (N,)."""
        elems = np.asarray(elems, dtype=np.int64)
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        m = self._monomials(elems, points)
        return np.einsum("nij,nj->ni", self.coeffs[elems], m)

    def basis_gradients(self, elems, points):
        """Basis gradients (N, nmax, 2)."""
        elems = np.asarray(elems, dtype=np.int64)
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        g = self._monomial_grads(elems, points)
        return np.einsum("nij,njd->nid", self.coeffs[elems], g)

    def local_dofs(self, e):
        start = self.dof_offsets[e]
        return np.arange(start, start + self.dof_counts[e])

    def padded_dofs(self):
        """(T, nmax) global dof indices with -1 in padded slots."""
        idx = self.dof_offsets[:, None] + np.arange(self.nmax)[None, :]
        return np.where(np.arange(self.nmax)[None, :] < self.dof_counts[:, None], idx, -1)

    def padded_coefficients(self, coefficients):
        dofs = self.padded_dofs()
        out = np.where(dofs >= 0, np.asarray(coefficients)[np.maximum(dofs, 0)], 0.0)
        return out

    def describe(self):
        degs = np.unique(self.degrees)
        k = str(int(degs[0])) if len(degs) == 1 else "mixed"
        return {"elements": self.mesh.n_elements, "k": k, "dofs": self.total_dofs}


class DgFunction:
    def __init__(self, space, coefficients=None, provenance=""):
        self.space = space
        if coefficients is None:
            coefficients = np.zeros(space.total_dofs)
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (space.total_dofs,):
            raise ValueError(
                f"expected {space.total_dofs} coefficients, got {coefficients.shape}"
            )
        self.coefficients = coefficients
        self.provenance = provenance

    def _check_element(self, element):
        if not 0 <= element < self.space.mesh.n_elements:
            raise IndexError(f"element id {element} out of range")

    def values(self, elems, points):
        """Vectorised element-local values at points (N, 2) on elements (N,)."""
        elems = np.asarray(elems, dtype=np.int64)
        c = self.space.padded_coefficients(self.coefficients)[elems]
        return np.einsum("ni,ni->n", self.space.basis_values(elems, points), c)

    def gradients(self, elems, points):
        elems = np.asarray(elems, dtype=np.int64)
        c = self.space.padded_coefficients(self.coefficients)[elems]
        return np.einsum("nid,ni->nd", self.space.basis_gradients(elems, points), c)

    def eval(self, element, point):
        self._check_element(element)
        return float(self.values([element], np.asarray(point, dtype=float)[None])[0])

    def grad_eval(self, element, point):
        self._check_element(element)
        return self.gradients([element], np.asarray(point, dtype=float)[None])[0]

    def __add__(self, other):
        return DgFunction(self.space, self.coefficients + other.coefficients)

    def __sub__(self, other):
        return DgFunction(self.space, self.coefficients - other.coefficients)

    def __mul__(self, scalar):
        return DgFunction(self.space, self.coefficients * scalar)

    __rmul__ = __mul__

    def to_csv(self, n=None, k=None, seed=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        desc = self.space.describe()
        writer.writerow(
            [
                f"n={'' if n is None else n}",
                f"k={desc['k'] if k is None else k}",
                f"seed={'' if seed is None else seed}",
                f"provenance={self.provenance}",
                f"dofs={desc['dofs']}",
            ]
        )
        writer.writerow(["dof", "coefficient"])
        for i, c in enumerate(self.coefficients):
            writer.writerow([i, repr(float(c))])
        return buf.getvalue()

    @staticmethod
    def from_csv(space, text):
        body = "".join(line for line in text.splitlines(True) if not line.startswith("#"))
        rows = list(csv.reader(io.StringIO(body)))
        header = dict(cell.split("=", 1) for cell in rows[0])
        coeffs = np.array([float(r[1]) for r in rows[2:]])
        return DgFunction(space, coeffs, provenance=header.get("provenance", ""))


def _on_face(mesh, face, point, tol=1e-12):
    a, b = mesh.face_segment(face)
    t = b - a
    L2 = t @ t
    s = (point - a) @ t / L2
    dist = abs(t[0] * (point - a)[1] - t[1] * (point - a)[0]) / np.sqrt(L2)
    scale = max(1.0, np.sqrt(L2))
    if dist > tol * scale or s < -tol or s > 1 + tol:
        raise ValueError(f"point {tuple(point)} does not lie on face {face}")


def trace_pair(fn, face, point):
    """One-sided traces on a face.

    Returns (v_plus, v_minus, grad_plus, grad_minus); on boundary faces the
    minus entries are None.
    """
    mesh = fn.space.mesh
    point = np.asarray(point, dtype=float)
    _on_face(mesh, face, point)
    ep = int(mesh.face_plus[face])
    em = int(mesh.face_minus[face])
    vp = fn.eval(ep, point)
    gp = fn.grad_eval(ep, point)
    if em == BOUNDARY:
        return vp, None, gp, None
    return vp, fn.eval(em, point), gp, fn.grad_eval(em, point)


def jump(fn, face, point):
    """Vector jump nu_+ v_+ + nu_- v_-; on the boundary nu v."""
    vp, vm, _, _ = trace_pair(fn, face, point)
    nu = fn.space.mesh.face_normals[face]
    if vm is None:
        return nu * vp
    return nu * (vp - vm)


def average(fn, face, point):
    vp, vm, _, _ = trace_pair(fn, face, point)
    return vp if vm is None else 0.5 * (vp + vm)


def average_grad(fn, face, point):
    _, _, gp, gm = trace_pair(fn, face, point)
    return gp.copy() if gm is None else 0.5 * (gp + gm)


def project(analytic, space, extra_degree=6):
    """Element-wise L2 projection of a scalar field f(x, y) -> array.

    Exact for polynomials of degree <= k_j on each element.
    """
    mesh = space.mesh
    rule = triangle_rule(min(20, 2 * space.kmax + extra_degree))
    pts, wts = map_triangles_rule(rule, mesh.triangles)
    nel, q = wts.shape
    elems = np.repeat(np.arange(nel), q)
    flat = pts.reshape(-1, 2)
    fvals = np.asarray(analytic(flat[:, 0], flat[:, 1]), dtype=float)
    fvals = np.broadcast_to(fvals, (len(flat),)).reshape(nel, q)
    phi = space.basis_values(elems, flat).reshape(nel, q, space.nmax)
    local = np.einsum("eq,eqi->ei", fvals * wts, phi)
    dofs = space.padded_dofs()
    coeffs = np.zeros(space.total_dofs)
    mask = dofs >= 0
    coeffs[dofs[mask]] = local[mask]
    return DgFunction(space, coeffs, provenance="projection")


def random_function(space, seed):
    rng = np.random.default_rng(seed)
    return DgFunction(
        space, rng.uniform(-1.0, 1.0, space.total_dofs), provenance=f"random:{seed}"
    )
