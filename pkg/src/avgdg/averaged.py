"""The averaged form a_eta(u, v) = (grad(eta * u_0), grad(eta * v_0)) over Omega_h.

Two independent realisations:

* `assemble_a_eta_direct` integrates grad(eta * phi_i) . grad(eta * phi_j)
  over a box containing Omega_h. The gradients come from the circle
  formula and the outer integral uses a tensor rule split along every curve
  where the integrand has a kink (offsets of faces at distance r, circles
  of radius r around vertices).
* `assemble_a_eta_expanded` uses the jump-split gradient and kernel
  symmetry, which turns a_eta into
      (eta2 * grad_h u, grad_h v) - (eta2 * grad_h u, [v])_F
      - (eta2 * grad_h v, [u])_F + sum_{f, f'} int_f int_f' eta2 [u] . [v]
  with eta2 = eta * eta.

Both are expensive and meant as oracles on small meshes.
"""

import itertools

import numpy as np
import scipy.sparse as sp

from . import geometry as geo
from .forms import SymSparseMatrix
from .mollifier import DECOMPOSITION_SIGN, basis_grad_average
from .quadrature import smoothed_gauss

DEFAULT_MAX_ELEMENTS = 32
DEFAULT_MAX_DEGREE = 1
DEFAULT_MAX_WORK = 2.0e8


class OracleBudgetError(RuntimeError):
    """Raised when an oracle assembly would exceed its cost budget."""


def _check_budget(space, work, max_elements, max_degree, max_work, what):
    n_el = space.mesh.n_elements
    if n_el > max_elements or space.kmax > max_degree or work > max_work:
        raise OracleBudgetError(
            f"{what}: estimated work {work:.3g} basis evaluations "
            f"({n_el} elements, k = {space.kmax}); limits are {max_elements} "
            f"elements, k <= {max_degree}, work <= {max_work:.3g}"
        )


def _face_segments(mesh, faces=None):
    faces = np.arange(mesh.n_faces) if faces is None else faces
    return mesh.vertices[mesh.face_vertices[faces]]


def _mesh_curves(mesh, dist):
    return geo.offset_curves(_face_segments(mesh), mesh.vertices, dist)


def _box(mesh, pad):
    lo, hi = mesh.bounding_box()
    lo = lo - pad
    hi = hi + pad
    return np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])


def _pairs_per_point(mesh, r):
    area = mesh.areas.mean()
    perim = 3.0 * mesh.element_diameters.mean()
    return min(mesh.n_elements, 1.0 + (perim * r + np.pi * r * r) / area)


def direct_rule(space, m, npts):
    mesh = space.mesh
    r = m.radius
    return geo.breakpoint_rule(_box(mesh, r), _mesh_curves(mesh, r), npts)


def assemble_a_eta_direct(space, m, background_resolution=8, threads=1,
                          max_elements=DEFAULT_MAX_ELEMENTS,
                          max_degree=DEFAULT_MAX_DEGREE, max_work=DEFAULT_MAX_WORK,
                          return_asymmetry=False):
    """Oracle assembly of a_eta from its definition.

    `background_resolution` is the number of Gauss nodes per breakpoint
    interval in each direction (>= 4).
    """
    if background_resolution < 4:
        raise ValueError("background_resolution must be at least 4")
    mesh = space.mesh
    pts, wts = direct_rule(space, m, background_resolution)
    work = len(wts) * _pairs_per_point(mesh, m.radius) * 6 * geo.ARC_POINTS
    _check_budget(space, work, max_elements, max_degree, max_work, "direct a_eta")
    dofs = space.padded_dofs()
    n = space.total_dofs

    def chunk(idx):
        p = pts[idx]
        pi, ei, G = basis_grad_average(space, m, p)
        rows = np.repeat(pi, space.nmax)
        cols = dofs[ei].ravel()
        keep = cols >= 0
        out = sp.csr_matrix((n, n))
        W = sp.diags(wts[idx])
        for d in range(2):
            Gd = sp.csr_matrix(
                (G[:, :, d].ravel()[keep], (rows[keep], cols[keep])), shape=(len(idx), n)
            )
            out = out + Gd.T @ W @ Gd
        return out

    from .forms import _run_chunks

    size = 20000
    blocks = [np.arange(s.start, s.stop) for s in geo.chunked(len(wts), size)]
    parts = _run_chunks(lambda ids: [chunk(b) for b in (blocks[i] for i in ids)],
                        len(blocks), threads)
    A = sum(itertools.chain.from_iterable(parts), sp.csr_matrix((n, n)))
    A = sp.csr_matrix(A)
    asym = abs(A - A.T).max() if A.nnz else 0.0
    A = 0.5 * (A + A.T)
    out = SymSparseMatrix.from_full(A)
    out.asymmetry = float(asym)
    if return_asymmetry:
        return out, float(asym)
    return out


# ------------------------------------------------------------ expanded form


def _segment_curve_params(seg, curves):
    """Parameters t in (0, 1) where a segment crosses the given curves."""
    a, b = seg
    d = b - a
    ts = []
    if len(curves.segments):
        p = curves.segments[:, 0]
        s = curves.segments[:, 1] - p
        den = d[0] * s[:, 1] - d[1] * s[:, 0]
        ok = np.abs(den) > 1e-15
        den = np.where(ok, den, 1.0)
        qp = p - a
        t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / den
        u = (qp[:, 0] * d[1] - qp[:, 1] * d[0]) / den
        ok &= (u >= 0) & (u <= 1)
        ts.append(t[ok])
    if len(curves.centers):
        w = a[None] - curves.centers
        A = d @ d
        B = 2 * w @ d
        C = np.einsum("ij,ij->i", w, w) - curves.radii**2
        disc = B * B - 4 * A * C
        sq = np.sqrt(np.maximum(disc, 0))
        ok = disc >= 0
        ts += [((-B - sq) / (2 * A))[ok], ((-B + sq) / (2 * A))[ok]]
    t = np.concatenate(ts) if ts else np.zeros(0)
    return t[(t > 1e-14) & (t < 1 - 1e-14)]


def _segment_rule(seg, breaks, npts):
    """Points (q, 2), parameters and arc-length weights on a segment."""
    t = np.unique(np.concatenate([[0.0, 1.0], breaks]))
    xs, ws = smoothed_gauss(npts)
    tt = (t[:-1, None] + np.diff(t)[:, None] * xs[None]).ravel()
    wt = (np.diff(t)[:, None] * ws[None]).ravel()
    length = np.linalg.norm(seg[1] - seg[0])
    return seg[0] + tt[:, None] * (seg[1] - seg[0]), tt, wt * length


def _element_curves(mesh, e, dist):
    tri = mesh.triangle(e)
    edges = np.stack([tri, np.roll(tri, -1, axis=0)], axis=1)
    c = geo.offset_curves(edges, tri, dist)
    return c + geo.CurveSet(edges, np.zeros((0, 2)), np.zeros(0))


def _eta2_grad_integrals(space, m, points, e, nr, nt):
    """(P, nmax, 2): int_{T_e} eta2(x - y) grad phi_i(y) dy at points x."""
    tri = np.broadcast_to(space.mesh.triangle(e), (len(points), 3, 2))

    def f(y, owner):
        return space.basis_gradients(np.full(len(y), e), y).reshape(len(y), -1)

    val = geo.polar_ball_triangle(points, 2.0 * m.radius, tri, f, m.eta2_radial, nr, nt)
    return val.reshape(len(points), space.nmax, 2)


def _element_distance(mesh, a, b):
    ta, tb = mesh.triangle(a), mesh.triangle(b)
    d1 = geo.point_triangle_distance(ta, np.broadcast_to(tb, (3, 3, 2))).min()
    d2 = geo.point_triangle_distance(tb, np.broadcast_to(ta, (3, 3, 2))).min()
    # conforming triangles: the minimum distance is attained at a vertex unless
    # edges cross, which cannot happen here
    return min(d1, d2)


def _face_distance(mesh, f, g):
    sf, sg = mesh.face_segment(f), mesh.face_segment(g)
    d = [geo.point_segment_distance(p, sg[0], sg[1]) for p in sf]
    d += [geo.point_segment_distance(p, sf[0], sf[1]) for p in sg]
    return float(min(d))


def _expanded_work(space, m, npts, nr, nt):
    mesh = space.mesh
    pairs = mesh.n_elements * _pairs_per_point(mesh, 2 * m.radius)
    return pairs * 40 * npts * npts * 7 * nr * 6 * nt


def assemble_a_eta_expanded(space, m, npts=12, nr=geo.RADIAL_POINTS, nt=geo.ARC_POINTS,
                            max_elements=DEFAULT_MAX_ELEMENTS,
                            max_degree=DEFAULT_MAX_DEGREE, max_work=5.0e10,
                            terms=False):
    """Oracle assembly of a_eta through its expanded four-term form.

    With `terms=True` returns a dict of the dense term matrices
    (volume, cross, jump) alongside the assembled matrix.
    """
    mesh = space.mesh
    _check_budget(space, _expanded_work(space, m, npts, nr, nt), max_elements,
                  max_degree, max_work, "expanded a_eta")
    n = space.total_dofs
    dofs = space.padded_dofs()
    R2 = 2.0 * m.radius
    T1 = np.zeros((n, n))
    C = np.zeros((n, n))

    def scatter(M, a, b, block):
        da, db = dofs[a], dofs[b]
        ka, kb = da >= 0, db >= 0
        M[np.ix_(da[ka], db[kb])] += block[np.ix_(ka, kb)]

    near = [
        (a, b)
        for a in range(mesh.n_elements)
        for b in range(mesh.n_elements)
        if _element_distance(mesh, a, b) < R2
    ]
    # volume term: int_{T_a} grad phi^a(x) . (eta2 * grad phi^b)(x) dx
    for a, b in near:
        pts, wts = geo.breakpoint_rule(mesh.triangle(a), _element_curves(mesh, b, R2), npts)
        Wb = _eta2_grad_integrals(space, m, pts, b, nr, nt)
        ga = space.basis_gradients(np.full(len(pts), a), pts)
        scatter(T1, a, b, np.einsum("q,qid,qjd->ij", wts, ga, Wb))

    # cross term: - int_f (eta2 * grad phi^b) . [phi^a]
    for f in range(mesh.n_faces):
        seg = mesh.face_segment(f)
        nu = mesh.face_normals[f]
        sides = [(int(mesh.face_plus[f]), 1.0)]
        if mesh.face_minus[f] >= 0:
            sides.append((int(mesh.face_minus[f]), -1.0))
        for b in range(mesh.n_elements):
            dist = min(geo.point_triangle_distance(seg, np.broadcast_to(mesh.triangle(b), (2, 3, 2))))
            dseg = geo.point_segment_distance(mesh.triangle(b), seg[0], seg[1]).min()
            if min(dist, dseg) >= R2:
                continue
            brk = _segment_curve_params(seg, _element_curves(mesh, b, R2))
            pts, _, wts = _segment_rule(seg, brk, npts)
            Wb = _eta2_grad_integrals(space, m, pts, b, nr, nt)
            wn = np.einsum("qjd,d->qj", Wb, nu)
            for a, sgn in sides:
                phi = space.basis_values(np.full(len(pts), a), pts)
                scatter(C, a, b, DECOMPOSITION_SIGN * sgn * np.einsum("q,qi,qj->ij", wts, phi, wn))

    T4 = _jump_term(space, m, npts, scatter)

    A = T1 + C + C.T + T4
    asym = float(np.abs(A - A.T).max())
    A = 0.5 * (A + A.T)
    out = SymSparseMatrix.from_full(sp.csr_matrix(A))
    out.asymmetry = asym
    if terms:
        return out, {"volume": T1, "cross": C + C.T, "jump": T4}
    return out


def _jump_term(space, m, npts, scatter):
    """sum_{f, g} int_f int_g eta2(x - y) [phi](x) . [phi](y) as a dense matrix."""
    mesh = space.mesh
    T4 = np.zeros((space.total_dofs, space.total_dofs))
    for f in range(mesh.n_faces):
        for g in range(mesh.n_faces):
            if _face_distance(mesh, f, g) < 2.0 * m.radius:
                _face_pair(space, m, f, g, npts, T4, scatter)
    return T4


def assemble_jump_term(space, m, npts=12, max_elements=DEFAULT_MAX_ELEMENTS,
                       max_degree=DEFAULT_MAX_DEGREE):
    """Last term of the expanded form, (eta * [u] ds_F, eta * [v] ds_F), alone.

    Much cheaper than the full expanded assembly; returns a dense array.
    """
    _check_budget(space, 0.0, max_elements, max_degree, np.inf, "jump term")
    dofs = space.padded_dofs()

    def scatter(M, a, b, block):
        da, db = dofs[a], dofs[b]
        ka, kb = da >= 0, db >= 0
        M[np.ix_(da[ka], db[kb])] += block[np.ix_(ka, kb)]

    return _jump_term(space, m, npts, scatter)


def _face_pair(space, m, f, g, npts, T4, scatter):
    mesh = space.mesh
    R2 = 2.0 * m.radius
    sf, sg = mesh.face_segment(f), mesh.face_segment(g)
    curves = geo.offset_curves(sg[None], sg, R2) + geo.CurveSet(
        sg[None], np.zeros((0, 2)), np.zeros(0)
    )
    xs, xt, xw = _segment_rule(sf, _segment_curve_params(sf, curves), npts)
    dg = sg[1] - sg[0]
    Lg = np.linalg.norm(dg)
    same = f == g
    # inner rule on g for every outer node
    ys, yw = [], []
    for x, t in zip(xs, xt):
        hit = geo.segment_ball_intersection(sg, x, R2)
        if hit is None or hit[1] <= hit[0]:
            ys.append(np.zeros((0, 2)))
            yw.append(np.zeros(0))
            continue
        foot = np.clip((x - sg[0]) @ dg / (Lg * Lg), hit[0], hit[1])
        brk = [hit[0], hit[1], foot]
        if same:
            brk.append(t)
        b = np.unique(np.clip(brk, hit[0], hit[1]))
        gx, gw = smoothed_gauss(npts)
        tt = (b[:-1, None] + np.diff(b)[:, None] * gx[None]).ravel()
        ww = (np.diff(b)[:, None] * gw[None]).ravel() * Lg
        y = sg[0] + tt[:, None] * dg
        ys.append(y)
        yw.append(ww * m.eta2_radial(np.linalg.norm(y - x, axis=1)))
    cnt = np.array([len(w) for w in yw])
    if cnt.sum() == 0:
        return
    Y = np.concatenate(ys)
    WY = np.concatenate(yw)
    owner = np.repeat(np.arange(len(xs)), cnt)
    nuf, nug = mesh.face_normals[f], mesh.face_normals[g]
    dot = float(nuf @ nug)
    for a, sa in _sides(mesh, f):
        phia = space.basis_values(np.full(len(xs), a), xs)  # (q, nmax)
        for b, sb in _sides(mesh, g):
            phib = space.basis_values(np.full(len(Y), b), Y)  # (M, nmax)
            inner = np.zeros((len(xs), space.nmax))
            np.add.at(inner, owner, WY[:, None] * phib)
            block = dot * sa * sb * np.einsum("q,qi,qj->ij", xw, phia, inner)
            scatter(T4, a, b, block)


def _sides(mesh, f):
    out = [(int(mesh.face_plus[f]), 1.0)]
    if mesh.face_minus[f] >= 0:
        out.append((int(mesh.face_minus[f]), -1.0))
    return out


# -------------------------------------------------------------- load vector


def boundary_curves(mesh, dist):
    bf = mesh.boundary_faces()
    segs = _face_segments(mesh, bf)
    verts = np.unique(mesh.face_vertices[bf].ravel())
    return geo.offset_curves(segs, mesh.vertices[verts], dist)


def averaged_g(mesh, g, m, points, nr=12, nt=8):
    """(eta * g_0)(x) at points, g_0 the zero extension of g."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    pi, ei = geo.candidate_pairs(points, mesh.triangles, m.radius)

    def f(y, owner):
        return np.broadcast_to(np.asarray(g(y[:, 0], y[:, 1]), dtype=float), (len(y),))

    vals = np.zeros(len(pi))
    for sl in geo.chunked(len(pi), 400):
        vals[sl] = geo.polar_ball_triangle(points[pi[sl]], m.radius, mesh.triangles[ei[sl]], f,
                                           None, nr, nt)
    return np.bincount(pi, weights=vals, minlength=len(points)) / m.ball_measure


def averaged_rhs(space, g, m, npts=6):
    """(g_0, eta * phi_i) computed as (eta * g_0, phi_i) by kernel symmetry."""
    mesh = space.mesh
    curves = boundary_curves(mesh, m.radius)
    b = np.zeros(space.total_dofs)
    dofs = space.padded_dofs()
    for e in range(mesh.n_elements):
        pts, wts = geo.breakpoint_rule(mesh.triangle(e), curves, npts)
        eg = averaged_g(mesh, g, m, pts)
        phi = space.basis_values(np.full(len(pts), e), pts)
        local = phi.T @ (wts * eg)
        k = dofs[e] >= 0
        b[dofs[e][k]] += local[k]
    return b


def eta_g_minus_g_norm(mesh, g, m, npts=6):
    """||eta * g_0 - g_0|| over R^2 (g_0 is g extended by zero)."""
    r = m.radius
    curves = _mesh_curves(mesh, r) + boundary_curves(mesh, r)
    # inside Omega: element-wise rules resolving the boundary tube
    total = 0.0
    bc = boundary_curves(mesh, r)
    for e in range(mesh.n_elements):
        pts, wts = geo.breakpoint_rule(mesh.triangle(e), bc, npts)
        diff = averaged_g(mesh, g, m, pts) - g(pts[:, 0], pts[:, 1])
        total += float(wts @ diff**2)
    # outside Omega: g_0 = 0, only the average survives
    pts, wts = geo.breakpoint_rule(_box(mesh, r), curves, npts)
    outside = ~inside_mesh(mesh, pts)
    vals = averaged_g(mesh, g, m, pts[outside])
    total += float(wts[outside] @ vals**2)
    return np.sqrt(total)


def inside_mesh(mesh, points):
    """Mask of points lying in the closed union of the mesh elements."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    tris = geo._orient(mesh.triangles)
    inside = np.zeros(len(points), dtype=bool)
    for tri in tris:
        inside |= geo._inside(tri[None], points)
    return inside
