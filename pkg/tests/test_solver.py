import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avgdg.dg_space import BrokenSpace
from avgdg.forms import PenaltySpec, assemble_sipg
from avgdg.mesh import build_structured_unit_square
from avgdg.solver import (
    IndefiniteMatrixError,
    NonConvergenceError,
    cg_solve,
    cholesky_spd_check,
)


def random_spd(n, seed, spread=1e3):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(np.geomspace(1.0, spread, n)) @ Q.T


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10**6))
def test_cg_manufactured_solution(n, seed):
    A = random_spd(n, seed)
    x_star = np.random.default_rng(seed + 1).standard_normal(n)
    b = A @ x_star
    x, rep = cg_solve(A, b, tol=1e-12, max_iter=10 * n)
    e = x - x_star
    assert np.sqrt(e @ A @ e) <= 1e-10 * np.sqrt(x_star @ A @ x_star)
    assert rep.final_relative_residual <= 1e-12
    assert len(rep.residual_history) == rep.iterations + 1


def test_zero_rhs():
    x, rep = cg_solve(np.eye(3), np.zeros(3))
    assert rep.iterations == 0 and np.all(x == 0)


def test_indefinite_detected():
    A = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3 and -1
    with pytest.raises(IndefiniteMatrixError) as info:
        cg_solve(A, np.array([1.0, -1.0]))
    d = info.value.direction
    assert d @ A @ d < 0 and info.value.curvature < 0
    with pytest.raises(IndefiniteMatrixError, match="diagonal"):
        cg_solve(np.diag([1.0, -1.0]), np.ones(2))


def test_nonconvergence_carries_history():
    A = random_spd(50, 0, spread=1e6)
    with pytest.raises(NonConvergenceError) as info:
        cg_solve(A, np.ones(50), tol=1e-12, max_iter=3)
    assert len(info.value.report.residual_history) == 4


def test_bad_tolerance():
    with pytest.raises(ValueError):
        cg_solve(np.eye(2), np.ones(2), tol=0.0)


def test_condition_estimate_matches_dense():
    space = BrokenSpace(build_structured_unit_square(4), 1)
    A = assemble_sipg(space, PenaltySpec(kind="classical", sigma0=20.0))
    D = A.dense()
    _, rep = cg_solve(A, np.ones(len(D)), tol=1e-12, max_iter=5000)
    s = 1 / np.sqrt(np.diag(D))
    ev = np.linalg.eigvalsh(D * s[:, None] * s[None, :])
    assert rep.condition_estimate == pytest.approx(ev[-1] / ev[0], rel=0.05)


def test_cholesky_check():
    ok = cholesky_spd_check(random_spd(5, 1))
    assert ok["positive_definite"] and ok["min_pivot"] > 0
    bad = cholesky_spd_check(np.diag([1.0, -2.0, 3.0]))
    assert not bad["positive_definite"] and bad["min_pivot"] == -2.0
    with pytest.raises(ValueError):
        cholesky_spd_check(np.eye(4), dense_limit=3)
