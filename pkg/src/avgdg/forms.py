"""Interior penalty forms and load vectors.

`assemble_sipg` realises the symmetric interior penalty form
    (grad_h u, grad_h v) - sum_f ({grad_h u}, [v])_f + ({grad_h v}, [u])_f
                         + sum_f sigma_f ([u], [v])_f
with boundary faces included (weak homogeneous Dirichlet condition).
`assemble_oipg` is the same form with the overpenalised coefficient
sigma = C_d h^-s, C_2 = 16 / (3 pi^2), C_3 = 3 / 5.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .quadrature import map_triangles_rule, segment_rule, triangle_rule

OVERPENALTY_CONSTANTS = {2: 16.0 / (3.0 * np.pi**2), 3: 3.0 / 5.0}


class CoercivityError(ValueError):
    pass


@dataclass(frozen=True)
class PenaltySpec:
    kind: str = "overpenalized"  # or "classical"
    sigma0: float = 10.0
    s: float = 1.6
    h_choice: str = "global"  # or "per_face"

    def __post_init__(self):
        if self.kind not in ("classical", "overpenalized"):
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.h_choice not in ("global", "per_face"):
            raise ValueError(f"unknown h_choice {self.h_choice!r}")
        if self.kind == "classical" and not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        if self.kind == "overpenalized" and not self.s > 1.5:
            raise CoercivityError(
                f"s = {self.s} violates the coercivity restriction s > 1.5 "
                "of the overpenalised form"
            )


def overpenalty(h, s, d=2):
    """sigma_{s,h} = C_d h^-s."""
    if d not in OVERPENALTY_CONSTANTS:
        raise ValueError(f"no overpenalty constant for d = {d}")
    return OVERPENALTY_CONSTANTS[d] * h ** (-s)


def penalty_coefficient(spec, face_diameter, h_global, d=2):
    """Scalar multiplier of ([u], [v])_f for one face."""
    if spec.kind == "classical":
        if d != 2:
            raise ValueError("classical per-face penalty needs a 2D face (no 3D meshes)")
        return spec.sigma0 / face_diameter
    h = h_global if spec.h_choice == "global" else face_diameter
    return overpenalty(h, spec.s, d)


class SymSparseMatrix:
    """Symmetric sparse matrix stored as its lower triangle (CSR).

    `full()` rebuilds L + strict(L)^T, which is symmetric bit for bit.
    `asymmetry` records max |A - A^T| of the raw assembled entries.
    """

    def __init__(self, lower, asymmetry=0.0):
        self.lower = sp.csr_matrix(sp.tril(lower))
        self.lower.sum_duplicates()
        self.asymmetry = float(asymmetry)
        self._full = None

    @classmethod
    def from_full(cls, A):
        A = sp.csr_matrix(A)
        diff = A - A.T
        asym = float(abs(diff).max()) if diff.nnz else 0.0
        return cls(sp.tril(A), asymmetry=asym)

    @property
    def dimension(self):
        return self.lower.shape[0]

    @property
    def shape(self):
        return self.lower.shape

    def full(self):
        if self._full is None:
            strict = sp.tril(self.lower, k=-1)
            self._full = sp.csr_matrix(self.lower + strict.T)
        return self._full

    def dense(self):
        return self.full().toarray()

    def __matmul__(self, x):
        return self.full() @ x

    def diagonal(self):
        return self.lower.diagonal()

    def quadratic_form(self, u, v=None):
        v = u if v is None else v
        return float(np.asarray(u) @ (self.full() @ np.asarray(v)))

    def to_coordinate_text(self):
        coo = self.full().tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [f"% dimension {self.dimension} nnz {coo.nnz}"]
        lines += [
            f"{int(coo.row[i])} {int(coo.col[i])} {float(coo.data[i])!r}" for i in order
        ]
        return "\n".join(lines) + "\n"


def _chunks(n, parts):
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [np.arange(bounds[i], bounds[i + 1]) for i in range(parts)]


def _run_chunks(fn, n, threads):
    chunks = _chunks(n, threads)
    if threads <= 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def _volume_blocks(space, elems, degree):
    rule = triangle_rule(degree)
    mesh = space.mesh
    pts, wts = map_triangles_rule(rule, mesh.triangles[elems])
    q = wts.shape[1]
    rep = np.repeat(elems, q)
    grads = space.basis_gradients(rep, pts.reshape(-1, 2)).reshape(
        len(elems), q, space.nmax, 2
    )
    return np.einsum("eq,eqid,eqjd->eij", wts, grads, grads)


def face_quadrature(mesh, faces, degree):
    """Points (F, q, 2) and weights (F, q) on the given faces."""
    rule = segment_rule(degree)
    seg = mesh.vertices[mesh.face_vertices[faces]]
    t = rule.points[:, 0]
    pts = seg[:, None, 0, :] + t[None, :, None] * (seg[:, None, 1, :] - seg[:, None, 0, :])
    wts = rule.weights[None, :] * mesh.face_diameters[faces][:, None]
    return pts, wts


def _face_blocks(space, faces, degree, sigma):
    """Local face matrices (F, 2, 2, nmax, nmax) for side pairs (X, Y)."""
    mesh = space.mesh
    pts, wts = face_quadrature(mesh, faces, degree)
    nf, q = wts.shape
    flat = pts.reshape(-1, 2)
    plus = mesh.face_plus[faces]
    minus = mesh.face_minus[faces]
    bnd = minus < 0
    nu = mesh.face_normals[faces]
    vals = np.zeros((2, nf, q, space.nmax))
    grads = np.zeros((2, nf, q, space.nmax, 2))
    vals[0] = space.basis_values(np.repeat(plus, q), flat).reshape(nf, q, -1)
    grads[0] = space.basis_gradients(np.repeat(plus, q), flat).reshape(nf, q, -1, 2)
    mi = np.repeat(np.where(bnd, plus, minus), q)
    vm = space.basis_values(mi, flat).reshape(nf, q, -1)
    gm = space.basis_gradients(mi, flat).reshape(nf, q, -1, 2)
    vals[1] = np.where(bnd[:, None, None], 0.0, vm)
    grads[1] = np.where(bnd[:, None, None, None], 0.0, gm)
    sign = np.array([1.0, -1.0])
    avg = np.where(bnd, 1.0, 0.5)
    dn = np.einsum("xfqid,fd->xfqi", grads, nu) * avg[None, :, None, None]
    # jump_i^X . avg_grad_j^Y = s_X phi_i^X (c_Y dphi_j^Y . nu)
    B = np.einsum("x,fq,xfqi,yfqj->fxyij", sign, wts, vals, dn)
    P = np.einsum("x,y,fq,xfqi,yfqj->fxyij", sign, sign, wts, vals, vals)
    return sigma[:, None, None, None, None] * P - B - B.transpose(0, 2, 1, 4, 3)


def _face_sigma(space, spec, faces, d=2):
    mesh = space.mesh
    return np.array(
        [penalty_coefficient(spec, mesh.face_diameters[f], mesh.h_global, d) for f in faces]
    )


def assemble_sipg(space, spec, threads=1, volume_degree=None, face_degree=None):
    k = space.kmax
    volume_degree = 2 * k + 2 if volume_degree is None else volume_degree
    face_degree = 2 * k + 4 if face_degree is None else face_degree
    mesh = space.mesh
    dofs = space.padded_dofs()
    n = space.total_dofs

    def volume(elems):
        K = _volume_blocks(space, elems, volume_degree)
        d = dofs[elems]
        r = np.broadcast_to(d[:, :, None], K.shape)
        c = np.broadcast_to(d[:, None, :], K.shape)
        return r.ravel(), c.ravel(), K.ravel()

    def faces_part(faces):
        sigma = _face_sigma(space, spec, faces)
        blocks = _face_blocks(space, faces, face_degree, sigma)
        plus = mesh.face_plus[faces]
        minus = np.where(mesh.face_minus[faces] < 0, plus, mesh.face_minus[faces])
        side = np.stack([dofs[plus], dofs[minus]], axis=1)  # (F, 2, nmax)
        r = np.broadcast_to(side[:, :, None, :, None], blocks.shape)
        c = np.broadcast_to(side[:, None, :, None, :], blocks.shape)
        return r.ravel(), c.ravel(), blocks.ravel()

    parts = _run_chunks(volume, mesh.n_elements, threads)
    parts += _run_chunks(faces_part, mesh.n_faces, threads)
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    keep = (rows >= 0) & (cols >= 0) & (vals != 0.0)
    A = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    return SymSparseMatrix.from_full(A)


def assemble_oipg(space, s, threads=1, h_choice="global"):
    spec = PenaltySpec(kind="overpenalized", s=s, h_choice=h_choice)
    return assemble_sipg(space, spec, threads=threads)


def assemble_rhs(space, g, mode="plain", mollifier=None, degree=None):
    """Load vector (g, phi_i), or (g_0, eta_h * phi_i) in averaged mode."""
    if mode == "averaged":
        if mollifier is None:
            raise ValueError("averaged load vector needs a mollifier")
        from .averaged import averaged_rhs

        return averaged_rhs(space, g, mollifier)
    if mode != "plain":
        raise ValueError(f"unknown load vector mode {mode!r}")
    mesh = space.mesh
    degree = min(20, space.kmax + 10) if degree is None else degree
    pts, wts = map_triangles_rule(triangle_rule(degree), mesh.triangles)
    nel, q = wts.shape
    flat = pts.reshape(-1, 2)
    gv = np.broadcast_to(np.asarray(g(flat[:, 0], flat[:, 1]), dtype=float), (len(flat),))
    phi = space.basis_values(np.repeat(np.arange(nel), q), flat).reshape(nel, q, -1)
    local = np.einsum("eq,eqi->ei", gv.reshape(nel, q) * wts, phi)
    b = np.zeros(space.total_dofs)
    dofs = space.padded_dofs()
    mask = dofs >= 0
    b[dofs[mask]] = local[mask]
    return b


def assemble_a_eta_direct(space, m, **kwargs):
    """Oracle assembly of the averaged form from its definition (see `averaged`)."""
    from .averaged import assemble_a_eta_direct as impl

    return impl(space, m, **kwargs)


def assemble_a_eta_expanded(space, m, **kwargs):
    """Oracle assembly of the averaged form through its expanded terms."""
    from .averaged import assemble_a_eta_expanded as impl

    return impl(space, m, **kwargs)
