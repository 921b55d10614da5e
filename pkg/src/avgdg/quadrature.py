"""Gauss-type quadrature on the unit segment and the reference triangle.

The triangle rules are conical (collapsed) products of a Gauss-Jacobi rule
and a Gauss-Legendre rule. They have positive weights and are exact for
every polynomial of total degree up to the requested degree.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 20


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (q, 1) on [0, 1] or (q, 2) on the reference triangle
    weights: np.ndarray
    exactness_degree: int


def _check_degree(degree):
    if degree < 0:
        raise ValueError(f"quadrature degree must be >= 0, got {degree}")
    if degree > MAX_DEGREE:
        raise ValueError(
            f"unsupported quadrature degree {degree} (maximum is {MAX_DEGREE})"
        )


@lru_cache(maxsize=None)
def gauss_legendre(npts):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _segment_rule(degree):
    npts = max(1, (degree + 2) // 2)
    x, w = gauss_legendre(npts)
    return QuadratureRule(x[:, None].copy(), w.copy(), degree)


def segment_rule(degree):
    """Gauss-Legendre rule on [0, 1] exact to the given polynomial degree."""
    _check_degree(degree)
    return _segment_rule(degree)


@lru_cache(maxsize=None)
def _triangle_rule(degree):
    npts = max(1, (degree + 2) // 2)
    # weight (1 - x) on [0, 1] absorbs the Jacobian of the collapse y = (1 - x) t
    xj, wj = roots_jacobi(npts, 1.0, 0.0)
    x = 0.5 * (xj + 1.0)
    wx = wj / 4.0
    t, wt = gauss_legendre(npts)
    X, T = np.meshgrid(x, t, indexing="ij")
    WX, WT = np.meshgrid(wx, wt, indexing="ij")
    pts = np.column_stack([X.ravel(), ((1.0 - X) * T).ravel()])
    return QuadratureRule(pts, (WX * WT).ravel(), degree)


def triangle_rule(degree):
    """Rule on the triangle {x, y >= 0, x + y <= 1} exact to total `degree`."""
    _check_degree(degree)
    return _triangle_rule(degree)


def map_triangle_rule(rule, tri):
    """Map a reference rule to a physical triangle.

    Returns points (q, 2) and weights (q,) for the triangle with vertex
    rows `tri` (3, 2). Works for any orientation.
    """
    tri = np.asarray(tri, dtype=float)
    a, b, c = tri
    jac = np.column_stack([b - a, c - a])
    det = abs(np.linalg.det(jac))
    pts = a + rule.points @ jac.T
    return pts, rule.weights * det


def map_triangles_rule(rule, tris):
    """Vectorised `map_triangle_rule` over a stack of triangles (T, 3, 2).

    Returns points (T, q, 2) and weights (T, q).
    """
    tris = np.asarray(tris, dtype=float)
    a = tris[:, 0]
    e1 = tris[:, 1] - a
    e2 = tris[:, 2] - a
    det = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    pts = (
        a[:, None, :]
        + rule.points[None, :, 0:1] * e1[:, None, :]
        + rule.points[None, :, 1:2] * e2[:, None, :]
    )
    return pts, rule.weights[None, :] * det[:, None]


def subdivide_reference(level):
    """Split the reference triangle uniformly into level**2 sub-triangles.

    Returns an array (level**2, 3, 2) of sub-triangle vertices.
    """
    m = level
    tris = []
    for i in range(m):
        for j in range(m - i):
            p0 = np.array([i, j]) / m
            p1 = np.array([i + 1, j]) / m
            p2 = np.array([i, j + 1]) / m
            tris.append([p0, p1, p2])
            if j < m - i - 1:
                p3 = np.array([i + 1, j + 1]) / m
                tris.append([p1, p3, p2])
    return np.array(tris, dtype=float)


@lru_cache(maxsize=None)
def composite_triangle_rule(degree, level):
    """Reference-triangle rule made of `level**2` mapped copies of a rule."""
    base = triangle_rule(degree)
    subs = subdivide_reference(level)
    pts, wts = map_triangles_rule(base, subs)
    return QuadratureRule(pts.reshape(-1, 2), wts.ravel(), degree)


def smoothed_gauss(npts):
    """Gauss-Legendre on [0, 1] composed with the cubic map 3t^2 - 2t^3.

    The map has vanishing derivative at both ends, which turns endpoint
    singularities of square-root type into smooth integrands. Returns
    nodes and weights on [0, 1] (weights include the map's Jacobian).
    """
    t, w = gauss_legendre(npts)
    x = t * t * (3.0 - 2.0 * t)
    return x, w * 6.0 * t * (1.0 - t)
