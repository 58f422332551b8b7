"""Dense linear-algebra kernels for small symmetric systems.

Everything here is self-contained (no LAPACK): Cholesky factorization,
SPD and general solves, a cyclic-Jacobi symmetric eigensolver, the
generalized symmetric eigensolver obtained by Cholesky reduction, and a
damped Newton iteration.  Intended for matrices of order <= ~64.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np


class NotPositiveDefinite(Exception):
    """Cholesky factorization hit a non-positive pivot."""


class NoConvergence(Exception):
    """Iteration (Jacobi sweeps or Newton) failed to converge."""


class SingularMatrix(Exception):
    """Gaussian elimination hit a zero pivot column."""


class EigenPairs(NamedTuple):
    """Eigenvalues in ascending order with matching eigenvector columns.

    Vectors are orthonormal in the metric of the solve: the identity for
    :func:`sym_eig`, the second matrix for :func:`gen_eig`.
    """

    values: np.ndarray
    vectors: np.ndarray


def symmetrize(a):
    """Return 0.5*(A + A^T); entries (i,j) and (j,i) become bitwise equal."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def cholesky(a) -> np.ndarray:
    """Lower-triangular L with L L^T = A.

    Raises NotPositiveDefinite when a pivot drops below
    1e-14 * max(diag(A)).
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("cholesky expects a square matrix")
    lower = np.zeros((n, n))
    if n == 0:
        return lower
    tol = 1e-14 * max(np.max(np.diag(a)), 0.0)
    for i in range(n):
        for j in range(i + 1):
            acc = a[i, j] - lower[i, :j] @ lower[j, :j]
            if i == j:
                if not acc > tol:
                    raise NotPositiveDefinite(
                        f"pivot {acc:.3e} at index {i} (tolerance {tol:.3e})"
                    )
                lower[i, i] = math.sqrt(acc)
            else:
                lower[i, j] = acc / lower[j, j]
    return lower


def solve_lower(lower, b):
    """Solve L x = b for lower-triangular L; b may be a vector or matrix."""
    lower = np.asarray(lower, dtype=float)
    x = np.array(b, dtype=float, copy=True)
    n = lower.shape[0]
    for i in range(n):
        x[i] -= lower[i, :i] @ x[:i]
        x[i] /= lower[i, i]
    return x


def solve_lower_t(lower, b):
    """Solve L^T x = b for lower-triangular L."""
    lower = np.asarray(lower, dtype=float)
    x = np.array(b, dtype=float, copy=True)
    n = lower.shape[0]
    for i in range(n - 1, -1, -1):
        x[i] -= lower[i + 1:, i] @ x[i + 1:]
        x[i] /= lower[i, i]
    return x


def solve_spd(a, b):
    """Solve A x = b for symmetric positive definite A via Cholesky."""
    lower = cholesky(a)
    return solve_lower_t(lower, solve_lower(lower, b))


def solve_dense(a, b):
    """Solve A x = b by Gaussian elimination with partial pivoting.

    For the small, generally non-symmetric systems that appear inside
    Newton iterations.  Raises SingularMatrix on pivot breakdown.
    """
    a = np.array(a, dtype=float, copy=True)
    x = np.array(b, dtype=float, copy=True)
    n = a.shape[0]
    if n == 0:
        return x
    scale = np.max(np.abs(a))
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) <= 1e-300 + 1e-15 * scale:
            raise SingularMatrix(f"pivot {a[p, k]:.3e} in column {k}")
        if p != k:
            a[[k, p]] = a[[p, k]]
            x[[k, p]] = x[[p, k]]
        for i in range(k + 1, n):
            f = a[i, k] / a[k, k]
            if f != 0.0:
                a[i, k + 1:] -= f * a[k, k + 1:]
                x[i] -= f * x[k]
    for i in range(n - 1, -1, -1):
        x[i] -= a[i, i + 1:] @ x[i + 1:]
        x[i] /= a[i, i]
    return x


def sym_eig(a) -> EigenPairs:
    """All eigenpairs of a symmetric matrix by the cyclic Jacobi method.

    Returns values ascending with orthonormal vector columns.  Raises
    NoConvergence after 100 sweeps, which signals malformed (e.g.
    non-finite) input rather than a hard problem: for symmetric input
    Jacobi converges in a handful of sweeps.
    """
    a_in = symmetrize(a)
    n = a_in.shape[0]
    if not np.all(np.isfinite(a_in)):
        raise NoConvergence("matrix has non-finite entries")
    if n <= 1:
        return EigenPairs(np.diag(a_in).copy(), np.eye(n))
    norm = math.sqrt(float(np.sum(a_in * a_in)))
    if norm == 0.0:
        return EigenPairs(np.zeros(n), np.eye(n))
    # scalar rotations on nested lists: far less per-op overhead than
    # numpy slicing at the orders (<= ~16) this solver is meant for
    a = a_in.tolist()
    vec = np.eye(n).tolist()
    stop = 1e-15 * norm
    skip = 0.01 * stop / n
    for _ in range(100):
        # off-diagonal norm summed directly: forming it by subtraction
        # from the full norm drowns in rounding noise
        off2 = 0.0
        for p in range(n - 1):
            ap = a[p]
            for q in range(p + 1, n):
                off2 += ap[q] * ap[q]
        if math.sqrt(2.0 * off2) <= stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p][q]
                if abs(apq) <= skip:
                    continue
                tau = (a[q][q] - a[p][p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                app = a[p][p]
                aqq = a[q][q]
                a[p][p] = app - t * apq
                a[q][q] = aqq + t * apq
                a[p][q] = 0.0
                a[q][p] = 0.0
                for k in range(n):
                    if k != p and k != q:
                        akp = a[k][p]
                        akq = a[k][q]
                        a[k][p] = c * akp - s * akq
                        a[p][k] = a[k][p]
                        a[k][q] = s * akp + c * akq
                        a[q][k] = a[k][q]
                for row in vec:
                    vkp = row[p]
                    vkq = row[q]
                    row[p] = c * vkp - s * vkq
                    row[q] = s * vkp + c * vkq
    else:
        raise NoConvergence("Jacobi did not converge within 100 sweeps")
    values = np.array([a[i][i] for i in range(n)])
    order = np.argsort(values, kind="stable")
    return EigenPairs(values[order], np.array(vec)[:, order])


def gen_eig(a, b) -> EigenPairs:
    """Eigenpairs of A v = lambda B v for symmetric A and SPD B.

    Reduces with B = L L^T to the ordinary symmetric problem on
    L^-1 A L^-T; the returned vectors satisfy v_i^T B v_j = delta_ij.
    """
    a = np.asarray(a, dtype=float)
    lower = cholesky(b)
    reduced = solve_lower(lower, solve_lower(lower, a.T).T)
    values, z = sym_eig(reduced)
    return EigenPairs(values, solve_lower_t(lower, z))


def newton_solve(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    start,
    tol: float = 1e-12,
    max_iter: int = 20,
) -> np.ndarray:
    """Damped Newton iteration on a square nonlinear system.

    Takes full Newton steps, halving (at most 8 times) until the residual
    max-norm decreases.  Returns x with ||residual(x)||_inf <= tol, or
    raises NoConvergence after max_iter iterations, on a singular
    Jacobian, or when the line search stalls.
    """
    x = np.atleast_1d(np.array(start, dtype=float))
    r = np.atleast_1d(residual(x))
    rnorm = float(np.max(np.abs(r))) if r.size else 0.0
    if rnorm <= tol:
        return x
    for _ in range(max_iter):
        jac = np.atleast_2d(jacobian(x))
        try:
            step = solve_dense(jac, -r)
        except SingularMatrix as exc:
            raise NoConvergence(f"singular Jacobian: {exc}") from exc
        frac = 1.0
        best = None
        for _ in range(9):  # full step plus up to 8 halvings
            x_try = x + frac * step
            r_try = np.atleast_1d(residual(x_try))
            n_try = float(np.max(np.abs(r_try)))
            if n_try < rnorm:
                best = (x_try, r_try, n_try)
                break
            frac *= 0.5
        if best is None:
            raise NoConvergence(
                f"line search stalled at residual {rnorm:.3e} (tol {tol:.3e})"
            )
        x, r, rnorm = best
        if rnorm <= tol:
            return x
    raise NoConvergence(
        f"no convergence after {max_iter} iterations, residual {rnorm:.3e}"
    )
