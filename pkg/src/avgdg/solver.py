"""Jacobi-preconditioned conjugate gradients with a Lanczos condition estimate."""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

DENSE_LIMIT = 2000


@dataclass
class SolveReport:
    iterations: int
    final_relative_residual: float
    condition_estimate: float
    wall_time: float
    residual_history: list = field(default_factory=list, repr=False)


class SolverError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NonConvergenceError(SolverError):
    pass


class IndefiniteMatrixError(SolverError):
    def __init__(self, message, direction, curvature, report=None):
        super().__init__(message, report)
        self.direction = direction
        self.curvature = curvature


def _as_operator(A):
    if hasattr(A, "full"):
        return A.full()
    return sp.csr_matrix(A) if sp.issparse(A) else np.asarray(A, dtype=float)


def _lanczos_condition(alphas, betas):
    """Condition number of the preconditioned operator from CG coefficients.

    The Lanczos tridiagonal has diagonal 1/a_j + b_{j-1}/a_{j-1} and
    off-diagonal sqrt(b_j)/a_j.
    """
    m = len(alphas)
    if m == 0:
        return 1.0
    a = np.asarray(alphas)
    b = np.asarray(betas[: m - 1])
    diag = 1.0 / a
    diag[1:] += b / a[:-1]
    off = np.sqrt(np.abs(b)) / a[:-1]
    if m == 1:
        return 1.0
    ev = sla.eigh_tridiagonal(diag, off, eigvals_only=True)
    lo, hi = ev.min(), ev.max()
    return float(hi / lo) if lo > 0 else float("inf")


def cg_solve(A, b, tol=1e-10, max_iter=10000):
    """Solve A x = b for symmetric positive definite A.

    Returns (x, SolveReport). Raises NonConvergenceError carrying the
    residual history, or IndefiniteMatrixError naming the direction of
    non-positive curvature.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    start = time.perf_counter()
    M = _as_operator(A)
    b = np.asarray(b, dtype=float)
    n = len(b)
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, SolveReport(0, 0.0, 1.0, time.perf_counter() - start, [0.0])
    d = M.diagonal() if sp.issparse(M) else np.diag(M)
    if np.any(d <= 0):
        i = int(np.argmin(d))
        e = np.zeros(n)
        e[i] = 1.0
        raise IndefiniteMatrixError(
            f"non-positive diagonal entry {d[i]:.3g} at row {i}", e, float(d[i])
        )
    dinv = 1.0 / d
    r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = r @ z
    hist = [1.0]
    alphas, betas = [], []
    for it in range(1, max_iter + 1):
        Ap = M @ p
        curv = p @ Ap
        if curv <= 0:
            report = SolveReport(it - 1, hist[-1], float("nan"),
                                 time.perf_counter() - start, hist)
            raise IndefiniteMatrixError(
                f"negative curvature p.Ap = {curv:.3e} at iteration {it}: "
                "matrix is not positive definite",
                p / np.linalg.norm(p), float(curv / (p @ p)), report,
            )
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        rel = np.linalg.norm(r) / bnorm
        hist.append(float(rel))
        alphas.append(alpha)
        if rel <= tol:
            cond = _lanczos_condition(alphas, betas)
            return x, SolveReport(it, float(rel), cond, time.perf_counter() - start, hist)
        z = dinv * r
        rz_new = r @ z
        beta = rz_new / rz
        betas.append(beta)
        rz = rz_new
        p = z + beta * p
    report = SolveReport(max_iter, hist[-1], _lanczos_condition(alphas, betas),
                         time.perf_counter() - start, hist)
    raise NonConvergenceError(
        f"CG did not reach tol {tol:g} in {max_iter} iterations "
        f"(relative residual {hist[-1]:.3e})",
        report,
    )


def cholesky_spd_check(A, dense_limit=DENSE_LIMIT):
    """Dense Cholesky attempt: {'positive_definite', 'min_pivot'}.

    The smallest pivot is the smallest diagonal entry of the factor squared
    when the factorisation succeeds, otherwise the first non-positive pivot
    met by an LDL^T sweep.
    """
    M = _as_operator(A)
    n = M.shape[0]
    if n > dense_limit:
        raise ValueError(f"dimension {n} exceeds the dense limit {dense_limit}")
    D = M.toarray() if sp.issparse(M) else np.array(M, dtype=float)
    try:
        L = np.linalg.cholesky(D)
        return {"positive_definite": True, "min_pivot": float(np.min(np.diag(L)) ** 2)}
    except np.linalg.LinAlgError:
        pass
    _, dd, _ = sla.ldl(D)
    piv = np.diag(dd) if dd.ndim == 2 else dd
    bad = piv[piv <= 0]
    return {"positive_definite": False, "min_pivot": float(bad[0] if len(bad) else piv.min())}
