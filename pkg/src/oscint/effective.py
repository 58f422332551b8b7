"""Constrained effective dynamics with frequency-correction force.

In the stiff limit the dynamics lives on the constraint manifold and is
governed by the slow potential plus a correction potential
sum_k I_k * omega_k(X), where the omega_k are the square roots of the
nonzero generalized eigenvalues of the pencil (stiff Hessian, mass) and
the I_k are the fixed mode actions of the initial data.  A constrained
leapfrog (RATTLE-style, two multiplier stages) integrates this system
and serves as the reference for the macro methods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import smallmat
from .geometry import RankDeficient, consistent_state
from .integrators import Trajectory
from .model import OscillatorySystem, State, has_identity_mass

DEFAULT_FD_STEP = 1e-5
DEFAULT_GAP_FACTOR = 1e-6


class GapViolation(Exception):
    """Pencil spectrum no longer splits into null and fast parts."""


class MatchingAmbiguous(Exception):
    """Nearest-value matching of frequency branches is not injective."""


class FrequencySet(NamedTuple):
    """Fast frequencies (ascending) with mass-orthonormal mode vectors."""

    omegas: np.ndarray
    vectors: np.ndarray


@dataclass
class EffectiveState:
    """Constrained phase-space point with its frozen actions.

    x sits on the manifold, y is tangential (G M^-1 y = 0), multiplier
    holds the most recent constraint-force multiplier, actions stays
    constant for the whole run.
    """

    x: np.ndarray
    y: np.ndarray
    multiplier: np.ndarray
    actions: np.ndarray
    t: float = 0.0


def frequencies(
    sys: OscillatorySystem, x, gap_factor: float = DEFAULT_GAP_FACTOR
) -> FrequencySet:
    """Fast frequencies at a configuration on (or near) the manifold.

    Solves the generalized eigenproblem of (stiff Hessian, mass); the
    d = n - m smallest eigenvalues must be negligible against the
    (d+1)-st (factor gap_factor), otherwise the configuration left the
    validity region and GapViolation is raised.
    """
    x = np.asarray(x, dtype=float)
    m = sys.m
    if m == 0:
        return FrequencySet(np.zeros(0), np.zeros((sys.n, 0)))
    if has_identity_mass(sys, x):
        pairs = smallmat.sym_eig(sys.hess_stiff(x))
    else:
        pairs = smallmat.gen_eig(sys.hess_stiff(x), sys.mass_matrix(x))
    values = pairs.values
    d = sys.n - m
    fast = values[d:]
    if fast[0] <= 0.0:
        raise GapViolation(f"fast pencil eigenvalue not positive: {fast[0]:.3e}")
    null_size = float(np.max(np.abs(values[:d]))) if d > 0 else 0.0
    if null_size > gap_factor * fast[0]:
        raise GapViolation(
            f"null eigenvalues up to {null_size:.3e} vs fast eigenvalue "
            f"{fast[0]:.3e} (factor {gap_factor:.1e})"
        )
    return FrequencySet(np.sqrt(fast), pairs.vectors[:, d:])


def grad_frequencies(
    sys: OscillatorySystem, x, fd_step: float = DEFAULT_FD_STEP
) -> np.ndarray:
    """Row k holds the ambient-coordinate gradient of omega_k.

    Central differences of the frequency map.  Perturbed configurations
    sit O(fd_step) off the manifold, which inflates the null eigenvalues
    of the pencil by the same order, so the gap check is relaxed
    accordingly.  Frequency branches between the two one-sided
    evaluations are identified by nearest-value matching; an ambiguous
    matching aborts rather than mislabel branches.
    """
    x = np.asarray(x, dtype=float)
    m = sys.m
    n = sys.n
    gap_factor = max(DEFAULT_GAP_FACTOR, 1e2 * fd_step)
    grad = np.empty((m, n))
    for j in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[j] += fd_step
        xm[j] -= fd_step
        om_p = frequencies(sys, xp, gap_factor).omegas
        om_m = frequencies(sys, xm, gap_factor).omegas
        match = [int(np.argmin(np.abs(om_m - w))) for w in om_p]
        if len(set(match)) != m:
            raise MatchingAmbiguous(
                f"frequency branches not separable along coordinate {j}"
            )
        grad[:, j] = (om_p - om_m[match]) / (2.0 * fd_step)
    return grad


def correction_force(
    sys: OscillatorySystem, x, actions, fd_step: float = DEFAULT_FD_STEP
) -> np.ndarray:
    """Force -sum_k I_k grad omega_k(x) exerted by the fast modes."""
    actions = np.asarray(actions, dtype=float)
    if sys.m == 0 or not np.any(actions):
        return np.zeros(sys.n)
    return -(grad_frequencies(sys, x, fd_step).T @ actions)


def effective_energy(sys: OscillatorySystem, es: EffectiveState) -> float:
    """1/2 y^T M^-1 y + slow(x) + sum_k I_k omega_k(x)."""
    if has_identity_mass(sys, es.x):
        kinetic = 0.5 * float(es.y @ es.y)
    else:
        kinetic = 0.5 * float(es.y @ smallmat.solve_spd(sys.mass_matrix(es.x), es.y))
    om = frequencies(sys, es.x).omegas
    return kinetic + sys.slow_potential(es.x) + float(es.actions @ om)


def _applied_force(sys, x, actions, fd_step):
    return -sys.grad_slow(x) + correction_force(sys, x, actions, fd_step)


def _rattle_step_cached(sys, es, h, force0, fd_step):
    """One constrained leapfrog step; returns (next state, end force).

    Stage 1 solves the position constraint for the half-step multiplier
    by Newton, stage 2 enforces the tangency of the end momentum by one
    SPD solve.
    """
    if not sys.mass_is_constant:
        raise ValueError("constrained leapfrog requires a constant mass matrix")
    x0 = es.x
    y0 = es.y
    jac0_t = sys.constraint_jacobian(x0).T
    identity_mass = has_identity_mass(sys, x0)
    mass = None if identity_mass else sys.mass_matrix(x0)

    def minv(v):
        return v if identity_mass else smallmat.solve_spd(mass, v)

    if force0 is None:
        force0 = _applied_force(sys, x0, es.actions, fd_step)

    def position_of(lam):
        y_half = y0 + 0.5 * h * (force0 - jac0_t @ lam)
        return x0 + h * minv(y_half)

    def residual(lam):
        return sys.constraint(position_of(lam))

    def jacobian(lam):
        jac1 = sys.constraint_jacobian(position_of(lam))
        return -0.5 * h * h * (jac1 @ minv(jac0_t))

    lam = smallmat.newton_solve(residual, jacobian, np.zeros(sys.m), tol=1e-12)
    y_half = y0 + 0.5 * h * (force0 - jac0_t @ lam)
    x1 = x0 + h * minv(y_half)

    force1 = _applied_force(sys, x1, es.actions, fd_step)
    jac1 = sys.constraint_jacobian(x1)
    y_free = y_half + 0.5 * h * force1
    gram = jac1 @ minv(jac1.T)
    try:
        mu = smallmat.solve_spd(gram, jac1 @ minv(y_free)) * (2.0 / h)
    except smallmat.NotPositiveDefinite as exc:
        raise RankDeficient(f"velocity-stage system not SPD: {exc}") from exc
    y1 = y_free - 0.5 * h * (jac1.T @ mu)
    nxt = EffectiveState(x1, y1, lam, es.actions, es.t + h)
    return nxt, force1


def rattle_step(
    sys: OscillatorySystem, es: EffectiveState, h: float,
    fd_step: float = DEFAULT_FD_STEP,
) -> EffectiveState:
    """One step of the constrained leapfrog on the effective system."""
    nxt, _ = _rattle_step_cached(sys, es, h, None, fd_step)
    return nxt


def constraint_residuals(sys: OscillatorySystem, es: EffectiveState):
    """(position residual, momentum-tangency residual), both max-norm."""
    pos = float(np.max(np.abs(sys.constraint(es.x)))) if sys.m else 0.0
    if sys.m == 0:
        return pos, 0.0
    if has_identity_mass(sys, es.x):
        v = es.y
    else:
        v = smallmat.solve_spd(sys.mass_matrix(es.x), es.y)
    mom = float(np.max(np.abs(sys.constraint_jacobian(es.x) @ v)))
    return pos, mom


def effective_reference(
    sys: OscillatorySystem,
    x0,
    y0,
    h_ref: float,
    t_end: float,
    stride: int = 1,
    actions: Optional[np.ndarray] = None,
    fd_step: float = DEFAULT_FD_STEP,
    with_records: bool = True,
) -> Trajectory:
    """Reference trajectory of the constrained effective dynamics.

    Projects (x0, y0) to consistent data, fixes the actions from the
    raw initial state, then runs the constrained leapfrog to t_end.
    Sample records carry the effective energy and constraint residuals.
    """
    from .diagnostics import DiagnosticsRecord, compute_actions, resonance_monitor

    if actions is None:
        actions = compute_actions(sys, x0, y0)
    actions = np.asarray(actions, dtype=float)
    xc, yc = consistent_state(sys, x0, y0)
    es = EffectiveState(xc, yc, np.zeros(sys.m), actions, 0.0)

    def record(st):
        if not with_records:
            return None
        om = frequencies(sys, st.x).omegas
        gap, combo = resonance_monitor(om)
        pos_res, mom_res = constraint_residuals(sys, st)
        return DiagnosticsRecord(
            t=st.t,
            energy=effective_energy(sys, st),
            actions=st.actions.copy(),
            min_gap=gap,
            min_combo=combo,
            constraint_residual=max(pos_res, mom_res),
        )

    nsteps = 0 if t_end < h_ref else int(math.floor(t_end / h_ref + 0.5))
    traj = Trajectory(stride=stride)
    traj.samples.append((State(es.x.copy(), es.y.copy(), es.t), record(es)))
    force = None
    for k in range(1, nsteps + 1):
        es, force = _rattle_step_cached(sys, es, h_ref, force, fd_step)
        es.t = k * h_ref
        if k % stride == 0 or k == nsteps:
            traj.samples.append((State(es.x.copy(), es.y.copy(), es.t), record(es)))
    return traj
