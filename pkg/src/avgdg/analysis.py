"""Error norms, convergence studies and the probe suite."""

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import geometry as geo
from .averaged import (
    assemble_a_eta_direct,
    assemble_jump_term,
    averaged_rhs,
    eta_g_minus_g_norm,
)
from .dg_space import BrokenSpace, DgFunction, monomial_exponents, project, random_function
from .forms import (
    OVERPENALTY_CONSTANTS,
    PenaltySpec,
    assemble_oipg,
    assemble_rhs,
    assemble_sipg,
    face_quadrature,
    overpenalty,
)
from .mesh import build_structured_unit_square
from .mollifier import (
    DECOMPOSITION_SIGN,
    Mollifier,
    basis_grad_average,
    double_convolved_grad_values,
    face_convolution_at,
    face_jump_values,
    grad_average_values,
    volume_average_grad_values,
)
from .quadrature import (
    composite_triangle_rule,
    gauss_legendre,
    map_triangle_rule,
    map_triangles_rule,
    triangle_rule,
)
from .solver import IndefiniteMatrixError, SolverError, cg_solve


# ------------------------------------------------------------------ problems


@dataclass(frozen=True)
class Problem:
    name: str
    u: object
    grad: object
    g: object


def _sin2_u(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def _sin2_grad(x, y):
    return np.stack(
        [np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
         np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)], axis=-1)


def _sin2_g(x, y):
    return 2.0 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)


def _bubble_u(x, y):
    return x * (1 - x) * y * (1 - y)


def _bubble_grad(x, y):
    return np.stack([(1 - 2 * x) * y * (1 - y), (1 - 2 * y) * x * (1 - x)], axis=-1)


def _bubble_g(x, y):
    return 2.0 * (x * (1 - x) + y * (1 - y))


def _zero(x, y):
    return np.zeros(np.broadcast(x, y).shape)


def _zero_grad(x, y):
    return np.zeros(np.broadcast(x, y).shape + (2,))


PROBLEMS = {
    "sin2": Problem("sin2", _sin2_u, _sin2_grad, _sin2_g),
    "bubble": Problem("bubble", _bubble_u, _bubble_grad, _bubble_g),
    "zero": Problem("zero", _zero, _zero_grad, _zero),
}


def get_problem(name):
    try:
        return PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


# --------------------------------------------------------------------- norms


def _element_rule(space, extra=0):
    deg = min(20, 2 * space.kmax + extra)
    return map_triangles_rule(triangle_rule(deg), space.mesh.triangles)


def broken_h1_seminorm(fn):
    pts, wts = _element_rule(fn.space)
    nel, q = wts.shape
    g = fn.gradients(np.repeat(np.arange(nel), q), pts.reshape(-1, 2))
    return float(np.sqrt(np.sum(wts.ravel() * np.sum(g * g, axis=1))))


def l2_norm(fn):
    pts, wts = _element_rule(fn.space)
    nel, q = wts.shape
    v = fn.values(np.repeat(np.arange(nel), q), pts.reshape(-1, 2))
    return float(np.sqrt(np.sum(wts.ravel() * v * v)))


def broken_h1_error(grad_exact, fn, degree=None):
    degree = min(20, 2 * fn.space.kmax + 8) if degree is None else degree
    pts, wts = map_triangles_rule(triangle_rule(degree), fn.space.mesh.triangles)
    nel, q = wts.shape
    flat = pts.reshape(-1, 2)
    d = grad_exact(flat[:, 0], flat[:, 1]) - fn.gradients(np.repeat(np.arange(nel), q), flat)
    return float(np.sqrt(np.sum(wts.ravel() * np.sum(d * d, axis=1))))


def l2_error(u_exact, fn, degree=None):
    degree = min(20, 2 * fn.space.kmax + 8) if degree is None else degree
    pts, wts = map_triangles_rule(triangle_rule(degree), fn.space.mesh.triangles)
    nel, q = wts.shape
    flat = pts.reshape(-1, 2)
    d = u_exact(flat[:, 0], flat[:, 1]) - fn.values(np.repeat(np.arange(nel), q), flat)
    return float(np.sqrt(np.sum(wts.ravel() * d * d)))


def averaged_error_rule(mesh, m, tube_refinement=4, degree=3):
    """Composite element rule whose cells resolve the averaging radius.

    Every element is split uniformly into L^2 cells with
    L = ceil(tube_refinement * diam / (2 r)), so that each tube of width 2r
    around a face is crossed by about `tube_refinement` cells.
    """
    r = m.radius
    diam = float(mesh.element_diameters.max())
    level = max(1, math.ceil(tube_refinement * diam / (2.0 * r)))
    rule = composite_triangle_rule(degree, level)
    pts, wts = map_triangles_rule(rule, mesh.triangles)
    return pts.reshape(-1, 2), wts.ravel(), level


def averaged_h1_error(u_exact_grad, fn, m, tube_refinement=4, degree=3, chunk=200000):
    """||grad u - grad(eta * u_h)|| over Omega."""
    pts, wts, _ = averaged_error_rule(fn.space.mesh, m, tube_refinement, degree)
    total = 0.0
    for sl in geo.chunked(len(wts), chunk):
        p = pts[sl]
        d = u_exact_grad(p[:, 0], p[:, 1]) - grad_average_values(m, fn, p)
        total += float(np.sum(wts[sl] * np.sum(d * d, axis=1)))
    return math.sqrt(total)


# ------------------------------------------------------------------- studies


def eoc(errors, hs):
    e = np.asarray(errors, dtype=float)
    h = np.asarray(hs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return list(np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:]))


@dataclass
class StudyReport:
    rows: list
    eoc: dict
    config: dict = field(default_factory=dict)
    failure: str = ""

    @property
    def metrics(self):
        skip = {"n", "h", "dofs"}
        return [k for k in self.rows[0] if k not in skip] if self.rows else []

    def to_csv(self, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        cols = ["row", "n", "h", "dofs"] + self.metrics
        w.writerow(cols)
        for r in self.rows:
            w.writerow(["data"] + [_fmt(r[c]) for c in cols[1:]])
        for i in range(len(self.rows) - 1):
            a, b = self.rows[i], self.rows[i + 1]
            w.writerow(
                [f"eoc", f"{a['n']}-{b['n']}", "", ""]
                + [_fmt(self.eoc[c][i]) for c in self.metrics]
            )
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float) or isinstance(v, np.floating):
        return repr(float(v))
    return str(v)


def solve_ip(space, problem, method="oipg", s=1.6, sigma0=10.0, tol=1e-10,
             max_iter=20000, threads=1):
    if method == "oipg":
        A = assemble_oipg(space, s, threads=threads)
    elif method == "sipg":
        A = assemble_sipg(space, PenaltySpec(kind="classical", sigma0=sigma0), threads=threads)
    else:
        raise ValueError(f"unknown method {method!r}")
    b = assemble_rhs(space, problem.g)
    x, report = cg_solve(A, b, tol, max_iter)
    return DgFunction(space, x, provenance=f"{method}"), report, A, b


def run_convergence_study(problem, method="oipg", s=1.6, k=1, mesh_sizes=(8, 16, 32),
                          sigma0=10.0, tol=1e-10, max_iter=20000, tube_refinement=4,
                          threads=1, averaged=True):
    if isinstance(problem, str):
        problem = get_problem(problem)
    if len(mesh_sizes) < 3:
        raise ValueError("a convergence study needs at least 3 meshes")
    rows = []
    failure = ""
    for n in mesh_sizes:
        mesh = build_structured_unit_square(n)
        space = BrokenSpace(mesh, k)
        try:
            uh, rep, _, _ = solve_ip(space, problem, method, s, sigma0, tol, max_iter, threads)
        except SolverError as exc:
            failure = f"n={n}: {exc}"
            break
        row = {
            "n": n,
            "h": mesh.h_global,
            "dofs": space.total_dofs,
            "broken_h1_error": broken_h1_error(problem.grad, uh),
            "l2_error": l2_error(problem.u, uh),
        }
        if averaged:
            m = Mollifier(mesh.h_global, s)
            row["averaged_h1_error"] = averaged_h1_error(problem.grad, uh, m, tube_refinement)
        row["iterations"] = rep.iterations
        row["condition_estimate"] = rep.condition_estimate
        rows.append(row)
    keys = [c for c in (rows[0] if rows else {}) if c not in ("n", "h", "dofs")]
    hs = [r["h"] for r in rows]
    rates = {c: eoc([r[c] for r in rows], hs) if len(rows) > 1 else [] for c in keys}
    cfg = {"problem": problem.name, "method": method, "s": s, "k": k,
           "mesh_sizes": list(mesh_sizes), "sigma0": sigma0}
    return StudyReport(rows, rates, cfg, failure)


# -------------------------------------------------------------------- probes


@dataclass
class ProbeResult:
    """Measured quantities of one probe.

    `rows` holds one dict per configuration (usually per mesh). `slope` is
    the least-squares slope of log(quantity) against log(h) and is only
    fitted when at least three refinements are present.
    """

    name: str
    rows: list
    quantity: str = ""
    slope: float = None
    threshold: float = None
    passed: bool = False
    detail: str = ""
    config: dict = field(default_factory=dict)

    def to_csv(self, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        cols = []
        for r in self.rows:
            cols += [c for c in r if c not in cols]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])
        return buf.getvalue()

    def summary_lines(self):
        lines = [f"probe={self.name}", f"passed={str(self.passed).lower()}"]
        if self.quantity:
            lines.append(f"quantity={self.quantity}")
        if self.slope is not None:
            lines.append(f"slope={self.slope!r}")
        if self.threshold is not None:
            lines.append(f"threshold={self.threshold!r}")
        if self.detail:
            lines.append(f"detail={self.detail}")
        return lines


def fit_slope(hs, values):
    """Least-squares slope of log(values) against log(hs)."""
    h = np.log(np.asarray(hs, dtype=float))
    v = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(h, v, 1)[0])


def _slope_if_enough(hs, values):
    return fit_slope(hs, values) if len(hs) >= 3 else None


# penalty constants -----------------------------------------------------------


def _ball_measure(radius, d):
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * radius**d


def penalty_integral(h, s, d):
    """(1 / |B_{h^s, d}|^2) int_{-h^s}^{h^s} |B_{sqrt(h^2s - r^2), d-1}|^2 dr.

    The squared measure of the (d-1)-ball cut from B(0, h^s) at height r,
    integrated numerically.
    """
    a = h**s
    val, _ = integrate.quad(
        lambda r: _ball_measure(math.sqrt(max(a * a - r * r, 0.0)), d - 1) ** 2,
        -a, a, epsabs=0.0, epsrel=1e-13, limit=200,
    )
    return val / _ball_measure(a, d) ** 2


def probe_penalty_constants(hs=(0.5, 0.25), ss=(1.6, 2.0), tol=1e-10):
    rows = []
    for d in (2, 3):
        for h in hs:
            for s in ss:
                num = penalty_integral(h, s, d)
                exact = OVERPENALTY_CONSTANTS[d] * h ** (-s)
                a = h**s
                mag, _ = integrate.quad(lambda r: (a * a - r * r) ** (d - 1), -a, a,
                                        epsabs=0.0, epsrel=1e-13)
                # int_{-a}^{a} (a^2 - r^2)^{d-1} dr = c_d a^{2d-1}, c_2 = 4/3, c_3 = 16/15
                c = {2: 4.0 / 3.0, 3: 16.0 / 15.0}[d]
                rows.append({
                    "d": d, "h": h, "s": s, "numeric": num, "closed_form": exact,
                    "relative_error": abs(num - exact) / exact,
                    "magnitude_ratio": mag / h ** (2 * s * d - s),
                    "magnitude_relative_error": abs(mag / (c * a ** (2 * d - 1)) - 1.0),
                })
    worst = max(max(r["relative_error"], r["magnitude_relative_error"]) for r in rows)
    return ProbeResult(
        "penalty_constants", rows, "relative_error", None, tol, worst <= tol,
        f"max relative error {worst:.3e}",
    )


# gradient decomposition --------------------------------------------------------


def admissible_points(mesh, m, count, seed=0, clearance=2.0, max_tries=200):
    """Random points x whose distance to every vertex and to the mesh
    boundary is at least clearance * r."""
    rng = np.random.default_rng(seed)
    lo, hi = mesh.bounding_box()
    r = m.radius
    bsegs = mesh.vertices[mesh.face_vertices[mesh.boundary_faces()]]
    from scipy.spatial import cKDTree

    tree = cKDTree(mesh.vertices)
    found = []
    for _ in range(max_tries):
        cand = rng.uniform(lo, hi, size=(4 * count, 2))
        cand = cand[geo_inside(mesh, cand)]
        dv, _ = tree.query(cand)
        ok = dv >= clearance * r
        if len(bsegs):
            db = np.min([geo.point_segment_distance(cand, a, b) for a, b in bsegs], axis=0)
            ok &= db >= clearance * r
        found.extend(cand[ok])
        if len(found) >= count:
            return np.array(found[:count])
    raise ValueError(
        f"only {len(found)} admissible points found; refine the mesh or lower the clearance"
    )


def geo_inside(mesh, points):
    from .averaged import inside_mesh

    return inside_mesh(mesh, points)


def gradient_decomposition_residuals(m, fn, points, sign=DECOMPOSITION_SIGN):
    """|grad(eta * u_0) - [eta * grad_h u + sign * sum_f eta * ([u] ds_f)]| per point."""
    mesh = fn.space.mesh
    lhs = grad_average_values(m, fn, points)
    vol = volume_average_grad_values(m, fn, points)
    segs = mesh.vertices[mesh.face_vertices]
    out = np.zeros(len(points))
    for i, x in enumerate(points):
        d = geo.point_segment_distance(x[None], segs[:, 0], segs[:, 1]).ravel()
        faces = np.nonzero(d < m.radius)[0]
        jumps = sum((face_convolution_at(m, fn, f, x) for f in faces), np.zeros(2))
        out[i] = np.linalg.norm(lhs[i] - vol[i] - sign * jumps)
    return out


def probe_gradient_decomposition(ns=(32, 64), k=1, s=1.6, samples=200, seed=0,
                                 tol=1e-6, clearance=2.0):
    rows = []
    for n in ns:
        mesh = build_structured_unit_square(n)
        space = BrokenSpace(mesh, k)
        m = Mollifier(mesh.h_global, s)
        fn = random_function(space, seed)
        pts = admissible_points(mesh, m, samples, seed, clearance)
        res = gradient_decomposition_residuals(m, fn, pts)
        scale = float(np.max(np.linalg.norm(grad_average_values(m, fn, pts), axis=1)))
        rows.append({"n": n, "h": mesh.h_global, "k": k, "samples": len(pts),
                     "max_residual": float(res.max()), "max_gradient": scale,
                     "relative_residual": float(res.max()) / scale})
    worst = max(r["relative_residual"] for r in rows)
    return ProbeResult(
        "gradient_decomposition", rows, "relative_residual", None, tol, worst <= tol,
        f"max residual relative to max |grad(eta * u)| {worst:.3e}, "
        f"sign {DECOMPOSITION_SIGN:+.0f}",
    )


# polynomial scaling constants ---------------------------------------------------


def _poly2d(coeffs, exps, X):
    """Values, gradients and Hessians of sum c_a X^a in reference coordinates."""
    x, y = X[:, 0], X[:, 1]
    v = np.zeros((coeffs.shape[0], len(X)))
    g = np.zeros(v.shape + (2,))
    H = np.zeros(v.shape + (2, 2))
    for j, (a, b) in enumerate(exps):
        c = coeffs[:, j : j + 1]
        v += c * x**a * y**b
        if a:
            g[..., 0] += c * a * x ** (a - 1) * y**b
        if b:
            g[..., 1] += c * b * x**a * y ** (b - 1)
        if a > 1:
            H[..., 0, 0] += c * a * (a - 1) * x ** (a - 2) * y**b
        if b > 1:
            H[..., 1, 1] += c * b * (b - 1) * x**a * y ** (b - 2)
        if a and b:
            H[..., 0, 1] += c * a * b * x ** (a - 1) * y ** (b - 1)
    H[..., 1, 0] = H[..., 0, 1]
    return v, g, H


def _disc_rule(nr=8, nt=24):
    t, w = gauss_legendre(nr)
    th = np.arange(nt) * 2 * np.pi / nt
    R, TH = np.meshgrid(t, th, indexing="ij")
    pts = np.column_stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()])
    wts = np.repeat(w * t, nt) * (2 * np.pi / nt)
    return pts, wts


def _disc_grid(nr=41, nt=128):
    r = np.linspace(0.0, 1.0, nr)
    th = np.arange(nt) * 2 * np.pi / nt
    R, TH = np.meshgrid(r, th, indexing="ij")
    return np.column_stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()])


def _abs_integrals_1d(coeffs):
    """int_0^1 |p(t)| dt for each row of power coefficients, split at roots."""
    x, w = gauss_legendre(8)
    out = np.zeros(len(coeffs))
    for i, c in enumerate(coeffs):
        roots = np.roots(c[::-1]) if np.any(c[1:]) else np.array([])
        real = roots[np.abs(roots.imag) < 1e-12].real
        br = np.unique(np.concatenate([[0.0, 1.0], real[(real > 0) & (real < 1)]]))
        for lo, hi in zip(br[:-1], br[1:]):
            t = lo + (hi - lo) * x
            out[i] += (hi - lo) * float(w @ np.abs(np.polynomial.polynomial.polyval(t, c)))
    return out


def prop1_constants(h, k, s=1.6, samples=100, seed=0):
    """Measured constants of the five scaling inequalities for one (h, k).

    Polynomials are sampled with random coefficients in coordinates scaled
    to the size of the set they live on. A constant is NaN when the left
    side vanishes identically (for example second derivatives for k < 2).
    """
    rng = np.random.default_rng(seed)
    exps = monomial_exponents(k)
    C = rng.standard_normal((samples, len(exps)))
    c1 = rng.standard_normal((samples, k + 1))
    d = 2
    out = {}

    # skala1 on B(0, h^s)
    rho = h**s
    q, qw = _disc_rule()
    v, _, _ = _poly2d(C, exps, q)
    l2 = np.sqrt((v**2) @ qw * rho**2)
    vmax = np.abs(_poly2d(C, exps, _disc_grid())[0]).max(axis=1)
    out["skala1"] = float(np.max(vmax / (h ** (-s * d / 2) * l2)))

    # face inequalities on f = [0, h]
    tt = np.linspace(0.0, 1.0, 401)
    pvals = np.polynomial.polynomial.polyval(tt, c1.T)
    l1 = _abs_integrals_1d(c1) * h
    out["maxuv_and_l1norm"] = float(np.max(np.abs(pvals).max(axis=1) / (h ** (1 - d) * l1)))
    if k >= 2:
        d2 = np.polynomial.polynomial.polyval(tt, np.polynomial.polynomial.polyder(c1.T, 2)) / h**2
        out["max_nabla2_l1norm"] = float(np.max(np.abs(d2).max(axis=1) / (h ** (-d - 1) * l1)))
    else:
        out["max_nabla2_l1norm"] = float("nan")

    # max_nabla_sq_2_norm on K = h * reference triangle
    rule = triangle_rule(2 * k + 2)
    v, _, _ = _poly2d(C, exps, rule.points)
    l2K = np.sqrt((v**2) @ rule.weights * h**2)
    if k >= 2:
        grid = composite_triangle_rule(1, 6).points
        H = _poly2d(C, exps, grid)[2] / h**2
        hmax = np.linalg.norm(H, axis=(2, 3)).max(axis=1)
        out["max_nabla_sq_2_norm"] = float(np.max(hmax / (h ** (-d / 2 - 2) * l2K)))
    else:
        out["max_nabla_sq_2_norm"] = float("nan")

    # skala2: u in P_k(B(0, h)), coordinates scaled by h
    if k >= 1:
        small = h ** (s - 1)  # h^s in units of h
        _, gs, _ = _poly2d(C, exps, small * q)
        grad_small = np.sqrt(np.sum(gs**2, axis=2) @ qw * small**2)  # scale-free
        v, gb, _ = _poly2d(C, exps, q)
        grad_big = np.sqrt(np.sum(gb**2, axis=2) @ qw)
        u_big = np.sqrt((v**2) @ qw)
        # physical norms: ||grad u||_B(rho) = (1/h) * rho_hat * ... the h factors cancel
        lhs = grad_small
        out["skala2_left"] = float(np.max(lhs / (h ** ((s - 1) * d / 2) * grad_big)))
        out["skala2_right"] = float(np.max(lhs / (h ** ((s - 1) * d / 2) * u_big)))
    else:
        out["skala2_left"] = out["skala2_right"] = float("nan")
    return out


PROP1_INEQUALITIES = ("skala1", "maxuv_and_l1norm", "max_nabla_sq_2_norm",
                      "max_nabla2_l1norm", "skala2_left", "skala2_right")


def probe_prop1_scaling(hs=(0.5, 0.25, 0.125), ks=(0, 1, 2), s=1.6, samples=100, seed=0,
                        factor=2.0):
    rows = []
    worst = 1.0
    for k in ks:
        per_h = [prop1_constants(h, k, s, samples, seed) for h in hs]
        for name in PROP1_INEQUALITIES:
            vals = np.array([c[name] for c in per_h])
            if np.all(np.isnan(vals)):
                spread = float("nan")
            else:
                spread = float(vals.max() / vals.min())
                worst = max(worst, spread)
            row = {"inequality": name, "k": k}
            row.update({f"h={h:g}": v for h, v in zip(hs, vals)})
            row["spread"] = spread
            rows.append(row)
    return ProbeResult(
        "prop1_scaling", rows, "spread", None, factor, worst <= factor,
        f"largest max/min of a measured constant across h: {worst:.4f}",
    )


# jump bounds through averaged gradients -----------------------------------------


def _face_abs_jump_integral(fn, face, pieces=16, npts=6):
    mesh = fn.space.mesh
    seg = mesh.face_segment(face)
    x, w = gauss_legendre(npts)
    t = ((np.arange(pieces)[:, None] + x[None]) / pieces).ravel()
    wt = np.tile(w, pieces) / pieces
    pts = seg[0] + t[:, None] * (seg[1] - seg[0])
    jmp = face_jump_values(fn, face, pts)
    return float(wt @ np.abs(jmp)) * mesh.face_diameters[face]


def _exact_abs_jump_integral(fn, face):
    """int_f |[v]| with the face polynomial split at its roots."""
    mesh = fn.space.mesh
    k = int(fn.space.kmax)
    seg = mesh.face_segment(face)
    t = 0.5 - 0.5 * np.cos(np.pi * (np.arange(k + 1) + 0.5) / (k + 1))
    pts = seg[0] + t[:, None] * (seg[1] - seg[0])
    c = np.polynomial.polynomial.polyfit(t, face_jump_values(fn, face, pts), k)
    return float(_abs_integrals_1d(c[None])[0]) * mesh.face_diameters[face]


class _PatchGradients:
    """grad(eta * v_P) on the elements of a two-element patch P.

    v_P is v restricted to the patch and extended by zero. The basis
    circle integrals are computed once per mesh and reused for every face.
    """

    def __init__(self, space, m, tube_refinement=4, degree=3):
        mesh = space.mesh
        self.space = space
        pts, wts, _ = averaged_error_rule(mesh, m, tube_refinement, degree)
        q = len(wts) // mesh.n_elements
        self.pts, self.wts = pts, wts
        self.owner = np.repeat(np.arange(mesh.n_elements), q)
        self.q = q
        pi, ei, G = basis_grad_average(space, m, pts)
        order = np.argsort(self.owner[pi], kind="stable")
        self.pi, self.ei, self.G = pi[order], ei[order], G[order]
        self.start = np.searchsorted(self.owner[self.pi], np.arange(mesh.n_elements + 1))

    def norms(self, fn, a, b):
        """(L1, L2) norms of grad(eta * v_P) over the patch {a, b}."""
        coeff = self.space.padded_coefficients(fn.coefficients)
        l1 = l2 = 0.0
        for e in (a, b):
            sl = slice(self.start[e], self.start[e + 1])
            pi, ei, G = self.pi[sl], self.ei[sl], self.G[sl]
            keep = (ei == a) | (ei == b)
            contrib = np.einsum("pid,pi->pd", G[keep], coeff[ei[keep]])
            grad = np.zeros((self.q, 2))
            np.add.at(grad, pi[keep] - e * self.q, contrib)
            w = self.wts[e * self.q:(e + 1) * self.q]
            mag = np.linalg.norm(grad, axis=1)
            l1 += float(w @ mag)
            l2 += float(w @ mag**2)
        return l1, math.sqrt(l2)


def prop2_face_ratios(fn, m, patches=None):
    """Per interior face: int_f |[v]| over the L1 and h^{d/2}-weighted L2
    norms of grad(eta * v_P) on the patch of the two neighbours."""
    space = fn.space
    mesh = space.mesh
    patches = patches or _PatchGradients(space, m)
    h = mesh.h_global
    out = []
    for f in mesh.interior_faces():
        a, b = int(mesh.face_plus[f]), int(mesh.face_minus[f])
        lhs = _exact_abs_jump_integral(fn, f)
        l1, l2 = patches.norms(fn, a, b)
        r1 = lhs / l1 if l1 > 0 else (0.0 if lhs == 0 else np.inf)
        r2 = lhs / (h * l2) if l2 > 0 else (0.0 if lhs == 0 else np.inf)
        out.append((int(f), r1, r2))
    return out


def probe_prop2_ratios(ns=(2, 4, 8), s=1.6, seed=0, factor=2.0):
    if s < 1.5:
        raise ValueError("the weighted jump estimate needs s >= 1.5")
    cases = [("random_k0", 0), ("random_k1", 1), ("smooth_k1", 1)]
    rows = []
    for n in ns:
        mesh = build_structured_unit_square(n)
        m = Mollifier(mesh.h_global, s)
        cache = {}
        for label, k in cases:
            if k not in cache:
                space = BrokenSpace(mesh, k)
                cache[k] = (space, _PatchGradients(space, m))
            space, patches = cache[k]
            if label.startswith("random"):
                fn = random_function(space, seed)
            else:
                fn = project(lambda x, y: np.sin(np.pi * x) * np.cos(2 * y) + x * y, space)
            r = prop2_face_ratios(fn, m, patches)
            rows.append({"case": label, "n": n, "h": mesh.h_global,
                         "max_l1_ratio": max(t[1] for t in r),
                         "max_l2_ratio": max(t[2] for t in r)})
    ok = True
    notes = []
    for label, _ in cases:
        sub = [r for r in rows if r["case"] == label]
        for key in ("max_l1_ratio", "max_l2_ratio"):
            vals = [r[key] for r in sub]
            good = all(np.isfinite(vals)) and max(vals) <= factor * vals[0]
            ok &= bool(good)
            notes.append(f"{label}/{key} max/first={max(vals) / vals[0]:.3f}")
    return ProbeResult("prop2_ratios", rows, "max_l1_ratio", None, factor, ok, "; ".join(notes))


# averaging error of the broken gradient ------------------------------------------


def probe_averaging_error(ns=(2, 4, 8), k=1, s=1.6, seed=0, factor=2.0, tube_refinement=2):
    """max_j ||grad_h u - eta * grad_h u||_{T_j} / ||grad_h u||_{patch_j},
    divided by h^{(s-1)/2}; the patch of T_j holds every element within
    distance h^s of T_j."""
    rows = []
    for n in ns:
        mesh = build_structured_unit_square(n)
        space = BrokenSpace(mesh, k)
        m = Mollifier(mesh.h_global, s)
        fn = random_function(space, seed)
        pts, wts, _ = averaged_error_rule(mesh, m, tube_refinement, 2 * k + 1)
        q = len(wts) // mesh.n_elements
        owner = np.repeat(np.arange(mesh.n_elements), q)
        diff = fn.gradients(owner, pts) - volume_average_grad_values(m, fn, pts)
        err = np.sqrt(np.bincount(owner, wts * np.sum(diff**2, axis=1), mesh.n_elements))
        pe, we = map_triangles_rule(triangle_rule(2 * k), mesh.triangles)
        ge = fn.gradients(np.repeat(np.arange(mesh.n_elements), we.shape[1]), pe.reshape(-1, 2))
        energy = np.sum((we.ravel() * np.sum(ge**2, axis=1)).reshape(mesh.n_elements, -1), axis=1)
        ratios = []
        for e in range(mesh.n_elements):
            near = [b for b in range(mesh.n_elements)
                    if b == e or _tri_distance(mesh, e, b) < m.radius]
            ratios.append(err[e] / math.sqrt(energy[near].sum()))
        worst = max(ratios)
        rows.append({"n": n, "h": mesh.h_global, "max_ratio": worst,
                     "scaled": worst / mesh.h_global ** ((s - 1) / 2)})
    scaled = [r["scaled"] for r in rows]
    spread = max(scaled) / min(scaled)
    return ProbeResult("averaging_error", rows, "max_ratio", _slope_if_enough(
        [r["h"] for r in rows], [r["max_ratio"] for r in rows]), factor, spread <= factor,
        f"spread of max_ratio / h^((s-1)/2): {spread:.3f}")


def _tri_distance(mesh, a, b):
    from .averaged import _element_distance

    return _element_distance(mesh, a, b)


# double convolution versus face average -------------------------------------------


def probe_lemma23(ns=(2, 4, 8), s=1.6, margin=0.3, pieces=4, npts=3):
    """Mean over interior faces of |eta2 * grad_h u - {grad_h u}| for a
    projected smooth u (k = 1)."""
    rows = []
    field_ = PROBLEMS["sin2"].u
    for n in ns:
        mesh = build_structured_unit_square(n)
        space = BrokenSpace(mesh, 1)
        m = Mollifier(mesh.h_global, s)
        fn = project(field_, space)
        faces = mesh.interior_faces()
        x, w = gauss_legendre(npts)
        t = ((np.arange(pieces)[:, None] + x[None]) / pieces).ravel()
        wt = np.tile(w, pieces) / pieces
        seg = mesh.vertices[mesh.face_vertices[faces]]
        pts = seg[:, None, 0] + t[None, :, None] * (seg[:, None, 1] - seg[:, None, 0])
        flat = pts.reshape(-1, 2)
        dc = double_convolved_grad_values(m, fn, flat).reshape(len(faces), -1, 2)
        qn = len(t)
        gp = fn.gradients(np.repeat(mesh.face_plus[faces], qn), flat)
        gm = fn.gradients(np.repeat(mesh.face_minus[faces], qn), flat)
        avg = 0.5 * (gp + gm).reshape(len(faces), -1, 2)
        err = np.linalg.norm(dc - avg, axis=2) @ wt * mesh.face_diameters[faces]
        rows.append({"n": n, "h": mesh.h_global,
                     "mean_face_difference": float(err.sum() / mesh.face_diameters[faces].sum())})
    slope = _slope_if_enough([r["h"] for r in rows], [r["mean_face_difference"] for r in rows])
    thr = s - 1 - margin
    return ProbeResult("lemma23", rows, "mean_face_difference", slope, thr,
                       slope is not None and slope >= thr, f"slope {slope}")


# a_eta against the overpenalised form ------------------------------------------

THEOREM_FIELDS = (
    lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y),
    lambda x, y: x * y * (1 - x) * (1 - y) * np.exp(x),
    lambda x, y: np.cos(np.pi * x) * y + x * x,
)


def normalized_form_differences(A_eta, A_ip, fields, floor=1e-12):
    """|a_eta(u, v) - a_IP(u, v)| / sqrt(a_eta(u, u) a_eta(v, v)) for all
    pairs u <= v; pairs whose denominator is below `floor` are dropped."""
    Ae = A_eta.full() if hasattr(A_eta, "full") else A_eta
    Ai = A_ip.full() if hasattr(A_ip, "full") else A_ip
    out = []
    for i in range(len(fields)):
        for j in range(i, len(fields)):
            u, v = fields[i], fields[j]
            den = math.sqrt(max(u @ (Ae @ u), 0.0) * max(v @ (Ae @ v), 0.0))
            if den < floor:
                continue
            out.append(abs(u @ (Ae @ v) - u @ (Ai @ v)) / den)
    return out


def probe_theorem1(ns=(1, 2, 4), k=1, s=1.6, background_resolution=6, margin=0.3,
                   threads=1, fields=THEOREM_FIELDS):
    if not 3 * s > 4:
        raise ValueError("the perturbation estimate needs 3s > d + 2")
    rows = []
    for n in ns:
        mesh = build_structured_unit_square(n)
        space = BrokenSpace(mesh, k)
        m = Mollifier(mesh.h_global, s)
        Ae = assemble_a_eta_direct(space, m, background_resolution, threads=threads,
                                   max_work=1e12)
        Ai = assemble_oipg(space, s, threads=threads)
        coeffs = [project(f, space).coefficients for f in fields]
        d = normalized_form_differences(Ae, Ai, coeffs)
        rows.append({"n": n, "h": mesh.h_global, "pairs": len(d),
                     "max_normalized_difference": max(d),
                     "mean_normalized_difference": float(np.mean(d))})
    hs = [r["h"] for r in rows]
    slope = _slope_if_enough(hs, [r["max_normalized_difference"] for r in rows])
    thr = s - 1 - margin
    return ProbeResult("theorem1", rows, "max_normalized_difference", slope, thr,
                       slope is not None and slope >= thr, f"slope {slope}")


def solve_small(A, b, tol=1e-12):
    """CG when it applies, otherwise a dense LU solve; returns (x, method)."""
    try:
        x, _ = cg_solve(A, b, tol=tol, max_iter=100000)
        return x, "cg"
    except SolverError:
        M = A.dense() if hasattr(A, "dense") else np.asarray(A)
        return np.linalg.solve(M, b), "dense"


def probe_theorem2(problem="sin2", ns=(1, 2), k=1, s=1.6, background_resolution=6,
                   bound=50.0, threads=1):
    if isinstance(problem, str):
        problem = get_problem(problem)
    rows = []
    for n in ns:
        mesh = build_structured_unit_square(n)
        space = BrokenSpace(mesh, k)
        m = Mollifier(mesh.h_global, s)
        Ae = assemble_a_eta_direct(space, m, background_resolution, threads=threads,
                                   max_work=1e12)
        Ai = assemble_oipg(space, s, threads=threads)
        b_avg = averaged_rhs(space, problem.g, m)
        b_ip = assemble_rhs(space, problem.g)
        uh, how_h = solve_small(Ae, b_avg)
        uip, how_ip = solve_small(Ai, b_ip)
        diff = uip - uh
        lhs = math.sqrt(max(Ae.quadratic_form(diff), 0.0))
        energy = math.sqrt(max(Ae.quadratic_form(uh), 0.0))
        data = eta_g_minus_g_norm(mesh, problem.g, m)
        term1 = mesh.h_global ** (s - 1) * energy
        term2 = float(mesh.element_diameters.max()) ** 2 * data
        rhs = term1 + term2
        rows.append({"n": n, "h": mesh.h_global, "lhs": lhs, "perturbation_term": term1,
                     "data_term": term2, "eta_g_minus_g": data,
                     "ratio": lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else np.inf),
                     "solver_eta": how_h, "solver_ip": how_ip})
    ratios = [r["ratio"] for r in rows]
    ok = all(r <= bound for r in ratios) and all(b <= a for a, b in zip(ratios, ratios[1:]))
    return ProbeResult("theorem2", rows, "ratio", None, bound, bool(ok),
                       "ratios " + ", ".join(f"{r:.4g}" for r in ratios))


# last term versus the overpenalty ---------------------------------------------------


def jump_products(fn_a, fn_b, degree=8):
    """sum_f int_f [u] . [v] over all faces (boundary faces included)."""
    mesh = fn_a.space.mesh
    faces = np.arange(mesh.n_faces)
    pts, wts = face_quadrature(mesh, faces, degree)
    return float(sum(wts[f] @ (face_jump_values(fn_a, f, pts[f]) * face_jump_values(fn_b, f, pts[f]))
                     for f in faces))


def probe_last_term(ns=(2, 4, 8), k=1, s=1.6, margin=0.3, npts=12):
    """Relative gap between (eta * [u] ds_F, eta * [u] ds_F) and
    sigma_{s,h} sum_f ([u], [u])_f for a field with a non-zero trace; a
    field vanishing on the boundary is recorded alongside."""
    fields = {"trace": THEOREM_FIELDS[2], "sin2": THEOREM_FIELDS[0]}
    rows = []
    for n in ns:
        mesh = build_structured_unit_square(n)
        space = BrokenSpace(mesh, k)
        m = Mollifier(mesh.h_global, s)
        T4 = assemble_jump_term(space, m, npts, max_elements=10**6)
        row = {"n": n, "h": mesh.h_global}
        for name, f in fields.items():
            fn = project(f, space)
            t4 = float(fn.coefficients @ T4 @ fn.coefficients)
            pen = overpenalty(mesh.h_global, s) * jump_products(fn, fn)
            row[f"{name}_jump_term"] = t4
            row[f"{name}_penalty"] = pen
            row[f"{name}_relative_gap"] = abs(t4 - pen) / abs(pen)
        rows.append(row)
    slope = _slope_if_enough([r["h"] for r in rows], [r["trace_relative_gap"] for r in rows])
    thr = s - 1 - margin
    return ProbeResult("last_term", rows, "trace_relative_gap", slope, thr,
                       slope is not None and slope >= thr, f"slope {slope}")


PROBES = {
    "penalty_constants": probe_penalty_constants,
    "gradient_decomposition": probe_gradient_decomposition,
    "prop1_scaling": probe_prop1_scaling,
    "prop2_ratios": probe_prop2_ratios,
    "averaging_error": probe_averaging_error,
    "lemma23": probe_lemma23,
    "theorem1": probe_theorem1,
    "theorem2": probe_theorem2,
    "last_term": probe_last_term,
}
