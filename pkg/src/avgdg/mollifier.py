"""Local averaging with the normalised indicator of a ball.

eta(x) = 1 / (pi r^2) on B(0, r), r = h^s. Functions in a broken space are
extended by zero outside the mesh. All integrals over balls and circles are
computed with the exact-arc engine of `geometry`; the polygonal clip is
available through `n_circ` for comparison.
"""

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .quadrature import smoothed_gauss

# sign in  grad(eta * u_0) = eta * grad_h u + SIGN * sum_f eta * ([u] ds_f).
# Fixed by the finite-difference calibration in the test suite.
DECOMPOSITION_SIGN = -1.0


@dataclass(frozen=True)
class Mollifier:
    h: float
    s: float = 1.6

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.s > 1:
            raise ValueError("the averaging exponent s must exceed 1")

    @property
    def radius(self):
        return self.h**self.s

    @property
    def ball_measure(self):
        return np.pi * self.radius**2

    def eta(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(np.linalg.norm(z, axis=-1) <= self.radius, 1.0 / self.ball_measure, 0.0)

    def eta2_radial(self, rho):
        """(eta * eta) as a function of |z|."""
        return geo.lens_area(self.radius, rho) / self.ball_measure**2

    @classmethod
    def for_mesh(cls, mesh, s=1.6):
        return cls(mesh.h_global, s)


def eta2_value(m, z_offset):
    z = np.asarray(z_offset, dtype=float)
    return m.eta2_radial(np.linalg.norm(z, axis=-1))


# ------------------------------------------------------------ basis-level


def _pairs(space, points, reach):
    return geo.candidate_pairs(points, space.mesh.triangles, reach)


def basis_ball_integrals(space, points, radius, kernel=None, what="values",
                         nr=geo.RADIAL_POINTS, nt=geo.ARC_POINTS):
    """Integrals of basis functions (or gradients) against a radial kernel.

    For every point x and every element T within `radius` returns
    int_{B(x, radius) cap T} kernel(|x - y|) phi_i(y) dy. Output is
    (pi, ei, values) with values (P, nmax) or (P, nmax, 2) for gradients.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    pi, ei = _pairs(space, points, radius)
    tris = space.mesh.triangles
    nm = space.nmax
    shape = (len(pi), nm) if what == "values" else (len(pi), nm, 2)
    out = np.zeros(shape)
    for sl in geo.chunked(len(pi), 400):
        e = ei[sl]

        def f(y, owner, e=e):
            if what == "values":
                return space.basis_values(e[owner], y)
            return space.basis_gradients(e[owner], y).reshape(len(y), -1)

        val = geo.polar_ball_triangle(points[pi[sl]], radius, tris[e], f, kernel, nr, nt)
        out[sl] = val.reshape((len(e),) + shape[1:])
    return pi, ei, out


def basis_grad_average(space, m, points, nt=geo.ARC_POINTS):
    """grad(eta * phi_i)(x) by the boundary formula on the circle |y - x| = r.

    Returns (pi, ei, G) with G (P, nmax, 2).
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    r = m.radius
    pi, ei = _pairs(space, points, r)
    tris = space.mesh.triangles
    G = np.zeros((len(pi), space.nmax, 2))
    for sl in geo.chunked(len(pi), 20000):
        e = ei[sl]
        c = points[pi[sl]]
        owner, y, th, wt = geo.inside_arc_quadrature(c, np.full(len(e), r), tris[e], nt)
        phi = space.basis_values(e[owner], y)
        nu = np.column_stack([np.cos(th), np.sin(th)])
        contrib = (wt * r / m.ball_measure)[:, None, None] * phi[:, :, None] * nu[:, None, :]
        Gs = np.zeros((len(e), space.nmax, 2))
        np.add.at(Gs, owner, contrib)
        G[sl] = Gs
    return pi, ei, G


def _contract(space, fn, pi, ei, vals, npoints):
    c = space.padded_coefficients(fn.coefficients)[ei]
    if vals.ndim == 2:
        contrib = np.einsum("pi,pi->p", vals, c)
        return np.bincount(pi, weights=contrib, minlength=npoints)
    contrib = np.einsum("pid,pi->pd", vals, c)
    out = np.zeros((npoints, vals.shape[2]))
    np.add.at(out, pi, contrib)
    return out


# --------------------------------------------------------- function-level


def average_values(m, fn, points, n_circ=None):
    """(eta * u_0)(x) at many points."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    space = fn.space
    if n_circ is not None:
        return np.array([_average_polygonal(m, fn, x, n_circ) for x in points])
    pi, ei, vals = basis_ball_integrals(space, points, m.radius)
    return _contract(space, fn, pi, ei, vals, len(points)) / m.ball_measure


def _average_polygonal(m, fn, x, n_circ):
    mesh = fn.space.mesh
    total = 0.0
    for e in range(mesh.n_elements):
        reg = geo.clip_ball_triangle(x, m.radius, mesh.triangle(e), n_circ)
        if reg.is_empty:
            continue
        deg = int(fn.space.degrees[e])
        total += geo.integrate_polynomial_over_region(
            reg, lambda p, e=e: fn.values(np.full(len(p), e), p), max(deg, 1)
        )
    return total / m.ball_measure


def grad_average_values(m, fn, points, n_circ=None):
    """grad(eta * u_0)(x) = (1 / |B|) * circle integral of u_0 nu ds."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if n_circ is not None:
        return np.array([_grad_average_polygonal(m, fn, x, n_circ) for x in points])
    pi, ei, G = basis_grad_average(fn.space, m, points)
    return _contract(fn.space, fn, pi, ei, G, len(points))


def _grad_average_polygonal(m, fn, x, n_circ):
    """Boundary formula on the inscribed n_circ-gon.

    Each polygon side is split where it crosses mesh edges so that a 2-point
    Gauss rule is exact on every piece; the only error left is the
    polygonal approximation of the circle.
    """
    mesh = fn.space.mesh
    theta = np.linspace(0.0, geo.TWO_PI, n_circ + 1)
    P = np.asarray(x) + m.radius * np.column_stack([np.cos(theta), np.sin(theta)])
    faces = mesh.vertices[mesh.face_vertices]
    g = np.array([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)])
    total = np.zeros(2)
    for a, b in zip(P[:-1], P[1:]):
        t = b - a
        nu = np.array([t[1], -t[0]])  # outward for a counter-clockwise loop
        cuts = _segment_cuts(a, b, faces)
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            for gi in g:
                y = a + (lo + gi * (hi - lo)) * t
                total += 0.5 * (hi - lo) * nu * _zero_extended_value(fn, mesh, y)
    return total / m.ball_measure


def _segment_cuts(a, b, segs):
    r = b - a
    p = segs[:, 0]
    s = segs[:, 1] - p
    den = r[0] * s[:, 1] - r[1] * s[:, 0]
    ok = np.abs(den) > 1e-15
    den = np.where(ok, den, 1.0)
    qp = p - a
    t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / den
    u = (qp[:, 0] * r[1] - qp[:, 1] * r[0]) / den
    ok &= (t > 0) & (t < 1) & (u >= 0) & (u <= 1)
    return np.unique(np.concatenate([[0.0, 1.0], t[ok]]))


def _zero_extended_value(fn, mesh, y):
    tris = mesh.triangles
    inside = geo._inside(geo._orient(tris), np.broadcast_to(y, (len(tris), 2)))
    idx = np.nonzero(inside)[0]
    if len(idx) == 0:
        return 0.0
    return fn.eval(int(idx[0]), y)


def average_at(m, fn, x, n_circ=None):
    return float(average_values(m, fn, np.asarray(x, dtype=float)[None], n_circ)[0])


def grad_average_at(m, fn, x, n_circ=None):
    return grad_average_values(m, fn, np.asarray(x, dtype=float)[None], n_circ)[0]


def volume_average_grad_values(m, fn, points):
    """(eta * grad_h u)(x): the broken gradient averaged over the ball."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    pi, ei, vals = basis_ball_integrals(fn.space, points, m.radius, what="grads")
    return _contract(fn.space, fn, pi, ei, vals, len(points)) / m.ball_measure


def face_jump_values(fn, face, points):
    """Scalar jump v_+ - v_- (v_+ on the boundary) at points on the face."""
    mesh = fn.space.mesh
    plus = int(mesh.face_plus[face])
    minus = int(mesh.face_minus[face])
    vp = fn.values(np.full(len(points), plus), points)
    if minus < 0:
        return vp
    return vp - fn.values(np.full(len(points), minus), points)


def face_convolution_at(m, fn, face, x, npts=None):
    """(eta * ([v] ds_f))(x) = int_f eta(x - y) [v](y) ds(y) (a 2-vector)."""
    mesh = fn.space.mesh
    seg = mesh.face_segment(face)
    hit = geo.segment_ball_intersection(seg, x, m.radius)
    if hit is None or hit[1] <= hit[0]:
        return np.zeros(2)
    t0, t1 = hit
    npts = npts or fn.space.kmax + 3
    tq, wq = np.polynomial.legendre.leggauss(npts)
    t = t0 + (t1 - t0) * 0.5 * (tq + 1.0)
    pts = seg[0] + t[:, None] * (seg[1] - seg[0])
    length = mesh.face_diameters[face] * (t1 - t0) * 0.5
    jmp = face_jump_values(fn, face, pts)
    return mesh.face_normals[face] * float(wq @ jmp) * length / m.ball_measure


def gradient_decomposition_at(m, fn, x, sign=DECOMPOSITION_SIGN):
    """eta * grad_h u + sign * sum_f eta * ([u] ds_f), the jump-split gradient."""
    vol = volume_average_grad_values(m, fn, np.asarray(x, dtype=float)[None])[0]
    faces = np.arange(fn.space.mesh.n_faces)
    jumps = sum(face_convolution_at(m, fn, f, x) for f in faces)
    return vol + sign * jumps


def double_convolved_grad_values(m, fn, points):
    """(eta * eta * grad_h u)(x) via polar integration with the lens kernel."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    pi, ei, vals = basis_ball_integrals(
        fn.space, points, 2.0 * m.radius, kernel=m.eta2_radial, what="grads"
    )
    return _contract(fn.space, fn, pi, ei, vals, len(points))


def double_convolved_grad_at(m, fn, x):
    return double_convolved_grad_values(m, fn, np.asarray(x, dtype=float)[None])[0]


def eta2_mass(m, npts=40):
    """Numerical integral of eta * eta over B(0, 2r) in polar coordinates."""
    x, w = smoothed_gauss(npts)
    rho = 2.0 * m.radius * x
    return float(np.sum(w * 2.0 * m.radius * m.eta2_radial(rho) * 2.0 * np.pi * rho))


def eta_mass(m, npts=20):
    """Integral of eta over its support B(0, r) in polar coordinates."""
    x, w = smoothed_gauss(npts)
    return float(np.sum(w * m.radius * 2.0 * np.pi * m.radius * x) / m.ball_measure)
