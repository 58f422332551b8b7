"""Constraint-manifold geometry.

The momentum projector that removes constraint-normal momentum
components, the mass-metric position projection onto the manifold with
its exact Jacobian, and the map to consistent initial data for the
constrained effective dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import smallmat
from .model import OscillatorySystem, has_identity_mass

_FD_STEP = 1e-6  # step for differentiating M(x)^-1 G(x)^T lambda


class RankDeficient(Exception):
    """Constraint Jacobian lost full rank (G M^-1 G^T not SPD)."""


@dataclass
class ProjectionPair:
    """Complementary oblique projectors at a configuration.

    tangent removes the constraint-normal momentum component,
    normal = I - tangent keeps it; G M^-1 tangent = 0.
    """

    tangent: np.ndarray
    normal: np.ndarray


@dataclass
class ManifoldProjection:
    """Result of projecting a position onto the constraint manifold.

    position satisfies constraint(position) = 0; the multiplier lam
    realizes position = x + M(x)^-1 G(x)^T lam.  jacobian_t is the
    transpose of d(position)/dx when requested, None otherwise.
    """

    position: np.ndarray
    lam: np.ndarray
    jacobian_t: Optional[np.ndarray] = None


def _mass_inverse_apply(sys, x, rhs):
    """M(x)^-1 @ rhs, skipping the solve for identity mass."""
    if has_identity_mass(sys, x):
        return np.array(rhs, dtype=float, copy=True)
    try:
        return smallmat.solve_spd(sys.mass_matrix(x), rhs)
    except smallmat.NotPositiveDefinite as exc:
        raise RankDeficient(f"mass matrix not positive definite: {exc}") from exc


def momentum_projector(sys: OscillatorySystem, x) -> ProjectionPair:
    """Projector pair (I - G^T S^-1 G M^-1, G^T S^-1 G M^-1) with
    S = G M^-1 G^T, all evaluated at x."""
    x = np.asarray(x, dtype=float)
    n = sys.n
    if sys.m == 0:
        return ProjectionPair(np.eye(n), np.zeros((n, n)))
    jac = sys.constraint_jacobian(x)
    minv_gt = _mass_inverse_apply(sys, x, jac.T)  # n x m
    gram = jac @ minv_gt
    try:
        coeff = smallmat.solve_spd(gram, minv_gt.T)  # m x n, = S^-1 G M^-1
    except smallmat.NotPositiveDefinite as exc:
        raise RankDeficient(f"constraint Jacobian rank-deficient at x: {exc}") from exc
    normal = jac.T @ coeff
    return ProjectionPair(np.eye(n) - normal, normal)


def project_to_manifold(
    sys: OscillatorySystem, x, want_jacobian: bool = False
) -> ManifoldProjection:
    """Mass-metric projection of x onto the constraint manifold.

    Solves constraint(x + M(x)^-1 G(x)^T lam) = 0 for the m multipliers
    by Newton from lam = 0 (tolerance 1e-12, at most 20 iterations).
    With want_jacobian the exact implicit-function Jacobian transpose of
    the projection map is returned as well; on the manifold it equals
    the momentum projector exactly.
    """
    x = np.asarray(x, dtype=float)
    if sys.m == 0:
        jac_t = np.eye(sys.n) if want_jacobian else None
        return ManifoldProjection(x.copy(), np.zeros(0), jac_t)
    base_jac_t = sys.constraint_jacobian(x).T  # n x m, frozen at x
    minv_gt = _mass_inverse_apply(sys, x, base_jac_t)
    # fail fast on rank loss before iterating
    try:
        smallmat.cholesky(sys.constraint_jacobian(x) @ minv_gt)
    except smallmat.NotPositiveDefinite as exc:
        raise RankDeficient(f"constraint Jacobian rank-deficient at x: {exc}") from exc

    def residual(lam):
        return sys.constraint(x + minv_gt @ lam)

    def jacobian(lam):
        return sys.constraint_jacobian(x + minv_gt @ lam) @ minv_gt

    lam = smallmat.newton_solve(residual, jacobian, np.zeros(sys.m), tol=1e-12)
    position = x + minv_gt @ lam
    jac_t = None
    if want_jacobian:
        if not np.any(lam):
            # at lam = 0 the implicit Jacobian collapses to the projector
            jac_t = momentum_projector(sys, x).tangent
        else:
            jac_t = _projection_jacobian_t(sys, x, position, lam, minv_gt)
    return ManifoldProjection(position, lam, jac_t)


def _projection_jacobian_t(sys, x, position, lam, minv_gt):
    """Transpose of d(position)/dx by implicit differentiation.

    Differentiating position = x + M(x)^-1 G(x)^T lam(x) and
    constraint(position(x)) = 0 gives, with D the x-derivative of the
    map x -> M(x)^-1 G(x)^T lam at frozen lam (central differences) and
    B = I + D:

        d(position)/dx = B - M^-1 G(x)^T S~^-1 G(position) B,
        S~ = G(position) M(x)^-1 G(x)^T.
    """
    n = sys.n

    def frozen_map(z):
        return _mass_inverse_apply(sys, z, sys.constraint_jacobian(z).T @ lam)

    d = np.empty((n, n))
    for j in range(n):
        zp = x.copy()
        zm = x.copy()
        zp[j] += _FD_STEP
        zm[j] -= _FD_STEP
        d[:, j] = (frozen_map(zp) - frozen_map(zm)) / (2.0 * _FD_STEP)
    b = np.eye(n) + d
    jac_pos = sys.constraint_jacobian(position)
    gram = jac_pos @ minv_gt  # m x m, generally non-symmetric
    try:
        coeff = smallmat.solve_dense(gram, jac_pos @ b)
    except smallmat.SingularMatrix as exc:
        raise RankDeficient(f"projection Jacobian system singular: {exc}") from exc
    return (b - minv_gt @ coeff).T


def consistent_state(sys: OscillatorySystem, x0, y0):
    """Consistent initial data for the constrained effective system.

    Positions are projected onto the manifold in the mass metric, then
    the momentum projector at the projected position removes the
    constraint-normal momentum component.
    """
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    pos = project_to_manifold(sys, x0).position
    proj = momentum_projector(sys, pos)
    return pos, proj.tangent @ y0
