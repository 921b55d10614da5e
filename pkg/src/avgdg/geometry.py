"""Ball/triangle/segment geometry and the integration engine built on it.

Two families of tools live here:

* polygonal clipping of a ball against a triangle (an N-gon stands in for
  the circle; error O(N^-2)), kept for quick area estimates;
* exact-arc integration: circles are cut at their true intersections with
  triangle edges and integrated in the angle with Gauss rules, and ball
  integrals are done in polar coordinates with radial breakpoints at every
  distance where the arc topology changes. These are accurate to near
  machine precision for piecewise polynomial integrands.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .quadrature import gauss_legendre, smoothed_gauss, triangle_rule

TWO_PI = 2.0 * np.pi
DEFAULT_N_CIRC = 64

# quadrature sizes of the exact-arc engine
ARC_POINTS = 10
RADIAL_POINTS = 24


def lens_area(r, d):
    """Area of B(0, r) intersected with B(z, r), |z| = d (vectorised in d)."""
    r = float(r)
    d = np.asarray(d, dtype=float)
    dd = np.clip(d, 0.0, 2.0 * r)
    val = 2.0 * r * r * np.arccos(dd / (2.0 * r)) - 0.5 * dd * np.sqrt(
        np.maximum(4.0 * r * r - dd * dd, 0.0)
    )
    val = np.where(d >= 2.0 * r, 0.0, val)
    return float(val) if val.ndim == 0 else val


def segment_ball_intersection(segment, center, radius):
    """Parametric sub-interval (t0, t1) of the segment inside the closed ball.

    The segment is p(t) = a + t (b - a), t in [0, 1]. Returns None when the
    segment misses the ball; a tangent contact gives t0 == t1.
    """
    a, b = np.asarray(segment, dtype=float)
    c = np.asarray(center, dtype=float)
    d = b - a
    w = a - c
    A = d @ d
    B = 2.0 * (w @ d)
    C = w @ w - radius * radius
    disc = B * B - 4.0 * A * C
    if disc < 0.0:
        return None
    sq = np.sqrt(disc)
    t0 = (-B - sq) / (2.0 * A)
    t1 = (-B + sq) / (2.0 * A)
    lo, hi = max(t0, 0.0), min(t1, 1.0)
    if lo > hi:
        return None
    return lo, hi


def chords(seg_a, seg_b, centers, radius):
    """Vectorised chord parameters of segments against balls.

    All arguments broadcast: seg_a, seg_b, centers (..., 2); radius (...).
    Returns (t0, t1, hit) with t0 <= t1 clipped to [0, 1].
    """
    d = seg_b - seg_a
    w = seg_a - centers
    A = np.einsum("...i,...i->...", d, d)
    B = 2.0 * np.einsum("...i,...i->...", w, d)
    C = np.einsum("...i,...i->...", w, w) - radius * radius
    disc = B * B - 4.0 * A * C
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0 = np.maximum((-B - sq) / (2.0 * A), 0.0)
    t1 = np.minimum((-B + sq) / (2.0 * A), 1.0)
    hit = (disc >= 0.0) & (t0 <= t1)
    return np.where(hit, t0, 0.0), np.where(hit, t1, 0.0), hit


# ---------------------------------------------------------------- polygon clip


@dataclass
class ClippedRegion:
    polygon: np.ndarray  # (m, 2) counter-clockwise loop, empty if m < 3
    circle_segments: int

    @property
    def is_empty(self):
        return len(self.polygon) < 3

    def area(self):
        if self.is_empty:
            return 0.0
        x, y = self.polygon[:, 0], self.polygon[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _clip_halfplane(poly, a, b):
    """Keep the part of `poly` left of the directed line a -> b."""
    if len(poly) == 0:
        return poly
    e = b - a
    side = e[0] * (poly[:, 1] - a[1]) - e[1] * (poly[:, 0] - a[0])
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        sp_, sq = side[i], side[(i + 1) % n]
        if sp_ >= 0:
            out.append(p)
        if (sp_ >= 0) != (sq >= 0):
            t = sp_ / (sp_ - sq)
            out.append(p + t * (q - p))
    return np.array(out) if out else np.zeros((0, 2))


def clip_ball_triangle(center, radius, triangle, n_circ=DEFAULT_N_CIRC):
    """Sutherland-Hodgman clip of the inscribed n_circ-gon against a triangle.

    The area error is O(n_circ^-2).
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    c = np.asarray(center, dtype=float)
    tri = np.asarray(triangle, dtype=float)
    e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
    if e1[0] * e2[1] - e1[1] * e2[0] < 0:
        tri = tri[[0, 2, 1]]
    theta = np.linspace(0.0, TWO_PI, n_circ, endpoint=False)
    poly = c + radius * np.column_stack([np.cos(theta), np.sin(theta)])
    for i in range(3):
        poly = _clip_halfplane(poly, tri[i], tri[(i + 1) % 3])
        if len(poly) == 0:
            break
    return ClippedRegion(poly, n_circ)


def integrate_polynomial_over_region(region, poly, degree):
    """Integrate poly(points (N, 2)) -> (N,) over a clipped region.

    The polygon is fan-triangulated and each fan triangle uses a rule exact
    to `degree`.
    """
    if region.is_empty:
        return 0.0
    rule = triangle_rule(degree)
    P = region.polygon
    total = 0.0
    for i in range(1, len(P) - 1):
        a, b, c = P[0], P[i], P[i + 1]
        jac = np.column_stack([b - a, c - a])
        det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
        pts = a + rule.points @ jac.T
        total += float(np.sum(rule.weights * np.asarray(poly(pts)))) * abs(det)
    return total


# ------------------------------------------------------------ exact circles


def _orient(tris):
    e1 = tris[..., 1, :] - tris[..., 0, :]
    e2 = tris[..., 2, :] - tris[..., 0, :]
    cr = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
    return np.where((cr < 0)[..., None, None], tris[..., [0, 2, 1], :], tris)


def _inside(tris, pts):
    """Point-in-closed-triangle for counter-clockwise tris (..., 3, 2)."""
    ok = np.ones(pts.shape[:-1], dtype=bool)
    for i in range(3):
        a = tris[..., i, :]
        b = tris[..., (i + 1) % 3, :]
        e = b - a
        side = e[..., 0] * (pts[..., 1] - a[..., 1]) - e[..., 1] * (pts[..., 0] - a[..., 0])
        ok &= side >= 0.0
    return ok


def circle_triangle_arcs(centers, radii, tris):
    """Arcs of circles lying inside triangles.

    centers (P, 2), radii (P,), tris (P, 3, 2). Returns (start, end, inside)
    each of shape (P, 6): angle intervals partitioning the circle (padded
    with zero-length intervals) and a flag for those inside the triangle.
    """
    tris = _orient(np.asarray(tris, dtype=float))
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)
    P = len(centers)
    ang = np.full((P, 6), np.inf)
    for i in range(3):
        a = tris[:, i]
        b = tris[:, (i + 1) % 3]
        d = b - a
        w = a - centers
        A = np.einsum("pi,pi->p", d, d)
        B = 2.0 * np.einsum("pi,pi->p", w, d)
        C = np.einsum("pi,pi->p", w, w) - radii * radii
        disc = B * B - 4.0 * A * C
        sq = np.sqrt(np.maximum(disc, 0.0))
        for j, sgn in enumerate((-1.0, 1.0)):
            t = (-B + sgn * sq) / (2.0 * A)
            ok = (disc >= 0.0) & (t >= 0.0) & (t <= 1.0)
            p = a + t[:, None] * d - centers
            th = np.mod(np.arctan2(p[:, 1], p[:, 0]), TWO_PI)
            ang[:, 2 * i + j] = np.where(ok, th, np.inf)
    ang.sort(axis=1)
    m = np.isfinite(ang).sum(axis=1)
    ext = np.empty((P, 7))
    ext[:, :6] = ang
    rows = np.arange(P)
    first = np.where(m > 0, ang[:, 0], 0.0)
    ext[rows, np.minimum(m, 6)] = first + TWO_PI
    idx = np.arange(7)[None, :]
    last = ext[rows, np.minimum(m, 6)]
    ext = np.where(idx > m[:, None], last[:, None], ext)
    ext[:, 0] = np.where(m == 0, 0.0, ext[:, 0])
    start = ext[:, :6]
    end = ext[:, 1:]
    mid = 0.5 * (start + end)
    mp = centers[:, None, :] + radii[:, None, None] * np.stack(
        [np.cos(mid), np.sin(mid)], axis=-1
    )
    inside = _inside(tris[:, None], mp) & (end > start)
    return start, end, inside


def arc_quadrature(centers, radii, tris, npts=ARC_POINTS):
    """Gauss points on the arcs of circles inside triangles.

    Returns points (P, 6 * npts, 2), angles (P, 6 * npts) and angular
    weights (P, 6 * npts) (zero outside the triangle). Multiply by the
    radius for arc-length weights.
    """
    start, end, inside = circle_triangle_arcs(centers, radii, tris)
    x, w = gauss_legendre(npts)
    length = np.where(inside, end - start, 0.0)
    th = start[:, :, None] + length[:, :, None] * x[None, None, :]
    wt = length[:, :, None] * w[None, None, :]
    th = th.reshape(len(start), -1)
    wt = wt.reshape(len(start), -1)
    pts = np.asarray(centers)[:, None, :] + np.asarray(radii)[:, None, None] * np.stack(
        [np.cos(th), np.sin(th)], axis=-1
    )
    return pts, th, wt


def inside_arc_quadrature(centers, radii, tris, npts=ARC_POINTS):
    """Gauss points on the inside arcs only (no padded slots).

    Returns owner (Q,), points (Q, 2), angles (Q,) and angular weights (Q,),
    where owner indexes the input pairs.
    """
    start, end, inside = circle_triangle_arcs(centers, radii, tris)
    pa, sa = np.nonzero(inside)
    lo = start[pa, sa]
    length = end[pa, sa] - lo
    x, w = gauss_legendre(npts)
    th = (lo[:, None] + length[:, None] * x[None]).ravel()
    wt = (length[:, None] * w[None]).ravel()
    owner = np.repeat(pa, npts)
    rr = np.asarray(radii)[owner]
    pts = np.asarray(centers)[owner] + rr[:, None] * np.column_stack([np.cos(th), np.sin(th)])
    return owner, pts, th, wt


def _radial_breaks(centers, R, tris):
    """Sorted radial breakpoints (P, 8) in [0, R] for polar integration."""
    tris = np.asarray(tris, dtype=float)
    P = len(centers)
    br = np.zeros((P, 8))
    br[:, 0] = 0.0
    br[:, 1] = R
    for i in range(3):
        a = tris[:, i]
        b = tris[:, (i + 1) % 3]
        br[:, 2 + i] = np.linalg.norm(a - centers, axis=1)
        d = b - a
        t = np.einsum("pi,pi->p", centers - a, d) / np.einsum("pi,pi->p", d, d)
        foot = a + t[:, None] * d
        dist = np.linalg.norm(centers - foot, axis=1)
        br[:, 5 + i] = np.where((t > 0.0) & (t < 1.0), dist, 0.0)
    br = np.clip(br, 0.0, np.asarray(R)[:, None] if np.ndim(R) else R)
    br.sort(axis=1)
    return br


def polar_ball_triangle(centers, R, tris, func, kernel=None, nr=RADIAL_POINTS,
                        nt=ARC_POINTS):
    """Integrate func(y) * kernel(|y - c|) over B(c, R) intersected with T.

    centers (P, 2) paired with tris (P, 3, 2); R scalar or (P,). `func`
    maps points (M, 2) to values (M,) or (M, m) and receives `pair_index`
    (M,) telling which pair each point belongs to. `kernel` maps radii to
    weights (default 1). Returns (P,) or (P, m).
    """
    centers = np.asarray(centers, dtype=float)
    tris = np.asarray(tris, dtype=float)
    P = len(centers)
    Rv = np.broadcast_to(np.asarray(R, dtype=float), (P,))
    br = _radial_breaks(centers, Rv, tris)
    lo = br[:, :-1]
    hi = br[:, 1:]
    xs, ws = smoothed_gauss(nr)
    rho = lo[:, :, None] + (hi - lo)[:, :, None] * xs[None, None, :]  # (P, 7, nr)
    rw = (hi - lo)[:, :, None] * ws[None, None, :]
    rho = rho.reshape(P, -1)
    rw = rw.reshape(P, -1)
    live = rw > 0
    pidx, ridx = np.nonzero(live)
    r_flat = rho[pidx, ridx]
    pts, _, aw = arc_quadrature(centers[pidx], r_flat, tris[pidx], nt)
    weight = aw * (rw[pidx, ridx] * r_flat)[:, None]
    if kernel is not None:
        weight = weight * np.asarray(kernel(r_flat))[:, None]
    keep = weight != 0.0
    pts_k = pts[keep]
    w_k = weight[keep]
    owner = np.broadcast_to(pidx[:, None], keep.shape)[keep]
    vals = np.asarray(func(pts_k, owner), dtype=float)
    if vals.ndim == 1:
        return np.bincount(owner, weights=w_k * vals, minlength=P)
    out = np.zeros((P,) + vals.shape[1:])
    np.add.at(out, owner, w_k.reshape((-1,) + (1,) * (vals.ndim - 1)) * vals)
    return out


def candidate_pairs(points, tris, reach):
    """(point_index, triangle_index) pairs with dist(point, triangle) <= reach.

    Uses a k-d tree on the points and the triangle circumscribing radius as
    a conservative filter, then an exact distance test.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    tris = np.asarray(tris, dtype=float)
    if len(points) == 0 or len(tris) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    tree = cKDTree(points)
    cent = tris.mean(axis=1)
    rad = np.linalg.norm(tris - cent[:, None, :], axis=2).max(axis=1)
    lists = tree.query_ball_point(cent, rad + reach + 1e-12)
    ti = np.repeat(np.arange(len(tris)), [len(l) for l in lists])
    pi = np.fromiter((j for l in lists for j in l), dtype=np.int64, count=len(ti))
    d = point_triangle_distance(points[pi], tris[ti])
    keep = d <= reach
    return pi[keep], ti[keep]


def point_segment_distance(p, a, b):
    d = b - a
    t = np.einsum("...i,...i->...", p - a, d) / np.einsum("...i,...i->...", d, d)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * d), axis=-1)


def point_triangle_distance(p, tris):
    tris = _orient(np.asarray(tris, dtype=float))
    inside = _inside(tris, p)
    d = np.minimum.reduce(
        [point_segment_distance(p, tris[..., i, :], tris[..., (i + 1) % 3, :]) for i in range(3)]
    )
    return np.where(inside, 0.0, d)


def chunked(n, size):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


# ------------------------------------------------- breakpoint-aware 2D rules


@dataclass
class CurveSet:
    """Curves across which an integrand may lose smoothness.

    segments (S, 2, 2) and circles given by centres (C, 2) and radii (C,).
    """

    segments: np.ndarray
    centers: np.ndarray
    radii: np.ndarray

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 2, 2)), np.zeros((0, 2)), np.zeros(0))

    def __add__(self, other):
        return CurveSet(
            np.concatenate([self.segments, other.segments]),
            np.concatenate([self.centers, other.centers]),
            np.concatenate([self.radii, other.radii]),
        )

    def restrict(self, lo, hi):
        """Drop curves whose bounding boxes miss the box [lo, hi]."""
        s = self.segments
        ks = (s[:, :, 0].max(1) >= lo[0]) & (s[:, :, 0].min(1) <= hi[0]) & (
            s[:, :, 1].max(1) >= lo[1]) & (s[:, :, 1].min(1) <= hi[1])
        c, r = self.centers, self.radii
        kc = (c[:, 0] + r >= lo[0]) & (c[:, 0] - r <= hi[0]) & (
            c[:, 1] + r >= lo[1]) & (c[:, 1] - r <= hi[1])
        return CurveSet(s[ks], c[kc], r[kc])


def offset_curves(segments, vertices, dist):
    """Offsets at `dist` on both sides of each segment plus circles at vertices."""
    segments = np.asarray(segments, dtype=float).reshape(-1, 2, 2)
    t = segments[:, 1] - segments[:, 0]
    nrm = np.column_stack([-t[:, 1], t[:, 0]]) / np.linalg.norm(t, axis=1)[:, None]
    off = np.concatenate(
        [segments + dist * nrm[:, None, :], segments - dist * nrm[:, None, :]]
    )
    vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
    return CurveSet(off, vertices.copy(), np.full(len(vertices), float(dist)))


def _segment_segment_x(segs):
    """x coordinates of pairwise proper intersections of segments."""
    if len(segs) < 2:
        return np.zeros(0)
    i, j = np.triu_indices(len(segs), 1)
    p, r = segs[i, 0], segs[i, 1] - segs[i, 0]
    q, s = segs[j, 0], segs[j, 1] - segs[j, 0]
    den = r[:, 0] * s[:, 1] - r[:, 1] * s[:, 0]
    qp = q - p
    ok = np.abs(den) > 1e-14
    den = np.where(ok, den, 1.0)
    t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / den
    u = (qp[:, 0] * r[:, 1] - qp[:, 1] * r[:, 0]) / den
    ok &= (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    return (p[:, 0] + t * r[:, 0])[ok]


def _segment_circle_x(segs, centers, radii):
    if len(segs) == 0 or len(centers) == 0:
        return np.zeros(0)
    a = segs[:, None, 0, :]
    b = segs[:, None, 1, :]
    c = centers[None, :, :]
    R = radii[None, :]
    d = b - a
    w = a - c
    A = np.einsum("...i,...i->...", d, d)
    B = 2.0 * np.einsum("...i,...i->...", w, d)
    C = np.einsum("...i,...i->...", w, w) - R * R
    disc = B * B - 4 * A * C
    sq = np.sqrt(np.maximum(disc, 0.0))
    out = []
    for sg in (-1.0, 1.0):
        t = (-B + sg * sq) / (2 * A)
        ok = (disc >= 0) & (t >= 0) & (t <= 1)
        x = a[..., 0] + t * d[..., 0]
        out.append(np.broadcast_to(x, ok.shape)[ok])
    return np.concatenate(out)


def _circle_circle_x(centers, radii):
    if len(centers) < 2:
        return np.zeros(0)
    i, j = np.triu_indices(len(centers), 1)
    c0, c1 = centers[i], centers[j]
    r0, r1 = radii[i], radii[j]
    dv = c1 - c0
    d = np.linalg.norm(dv, axis=1)
    ok = (d > 1e-14) & (d <= r0 + r1) & (d >= np.abs(r0 - r1))
    d = np.where(ok, d, 1.0)
    a = (r0**2 - r1**2 + d**2) / (2 * d)
    hgt = np.sqrt(np.maximum(r0**2 - a**2, 0.0))
    mid = c0 + (a / d)[:, None] * dv
    perp = np.column_stack([-dv[:, 1], dv[:, 0]]) / d[:, None]
    x1 = mid[:, 0] + hgt * perp[:, 0]
    x2 = mid[:, 0] - hgt * perp[:, 0]
    return np.concatenate([x1[ok], x2[ok]])


def _polygon_x_breaks(poly, curves):
    """Outer breakpoints: polygon vertices, curve ends and extremes, crossings."""
    segs = curves.segments
    xs = [poly[:, 0], segs[:, :, 0].ravel(),
          curves.centers[:, 0] - curves.radii, curves.centers[:, 0] + curves.radii]
    edges = np.stack([poly, np.roll(poly, -1, axis=0)], axis=1)
    allsegs = np.concatenate([segs, edges])
    xs.append(_segment_segment_x(allsegs))
    xs.append(_segment_circle_x(allsegs, curves.centers, curves.radii))
    xs.append(_circle_circle_x(curves.centers, curves.radii))
    return np.concatenate(xs)


def _polygon_y_range(poly, x):
    """Vertical extent of a convex polygon at abscissae x (vectorised)."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    lo = np.full(len(x), np.inf)
    hi = np.full(len(x), -np.inf)
    for (ax, ay), (bx, by) in zip(a, b):
        if ax == bx:
            continue
        t = (x - ax) / (bx - ax)
        ok = (t >= -1e-12) & (t <= 1 + 1e-12)
        y = ay + np.clip(t, 0, 1) * (by - ay)
        lo = np.where(ok, np.minimum(lo, y), lo)
        hi = np.where(ok, np.maximum(hi, y), hi)
    return lo, hi


def _curve_y_crossings(curves, x):
    """(len(x), K) y values where curves cross the vertical lines (nan-padded)."""
    segs = curves.segments
    cols = []
    if len(segs):
        ax, ay = segs[:, 0, 0], segs[:, 0, 1]
        bx, by = segs[:, 1, 0], segs[:, 1, 1]
        dx = bx - ax
        safe = np.where(dx == 0, 1.0, dx)
        t = (x[:, None] - ax[None]) / safe[None]
        ok = (dx[None] != 0) & (t >= 0) & (t <= 1)
        cols.append(np.where(ok, ay[None] + t * (by - ay)[None], np.nan))
    if len(curves.centers):
        dxc = x[:, None] - curves.centers[None, :, 0]
        h2 = curves.radii[None] ** 2 - dxc**2
        ok = h2 >= 0
        hh = np.sqrt(np.maximum(h2, 0))
        cy = curves.centers[None, :, 1]
        cols.append(np.where(ok, cy + hh, np.nan))
        cols.append(np.where(ok, cy - hh, np.nan))
    if not cols:
        return np.zeros((len(x), 0))
    return np.concatenate(cols, axis=1)


def _merge_breaks(b, lo, hi, tol):
    b = np.unique(np.clip(np.concatenate([[lo, hi], b]), lo, hi))
    keep = np.concatenate([[True], np.diff(b) > tol])
    b = b[keep]
    b[-1] = hi
    return b


def breakpoint_rule(poly, curves, npts=8):
    """Tensor Gauss rule on a convex polygon that respects kink curves.

    The outer variable x is split at every abscissa where the arrangement of
    polygon edges and curves changes; for each outer node the inner variable
    y is split at the crossings of the curves. Both levels use the
    end-smoothed Gauss rule so that square-root behaviour at tangencies is
    integrated accurately. Returns points (M, 2) and weights (M,).
    """
    poly = np.asarray(poly, dtype=float)
    lo = poly.min(axis=0)
    hi = poly.max(axis=0)
    curves = curves.restrict(lo, hi)
    scale = float(np.max(hi - lo))
    xb = _merge_breaks(_polygon_x_breaks(poly, curves), lo[0], hi[0], 1e-13 * scale)
    xs, ws = smoothed_gauss(npts)
    xa = xb[:-1, None] + np.diff(xb)[:, None] * xs[None]
    xw = np.diff(xb)[:, None] * ws[None]
    xa, xw = xa.ravel(), xw.ravel()
    ylo, yhi = _polygon_y_range(poly, xa)
    cross = _curve_y_crossings(curves, xa)
    cross = np.where((cross > ylo[:, None]) & (cross < yhi[:, None]), cross, np.nan)
    ys = np.sort(np.concatenate([ylo[:, None], cross, yhi[:, None]], axis=1), axis=1)
    # nan sorts last; replace by yhi so the padded intervals have zero length
    ys = np.where(np.isnan(ys), yhi[:, None], ys)
    lo_y = ys[:, :-1]
    len_y = np.diff(ys, axis=1)
    py = lo_y[:, :, None] + len_y[:, :, None] * xs[None, None, :]
    pw = len_y[:, :, None] * ws[None, None, :] * xw[:, None, None]
    px = np.broadcast_to(xa[:, None, None], py.shape)
    keep = pw > 0
    return np.column_stack([px[keep], py[keep]]), pw[keep]
