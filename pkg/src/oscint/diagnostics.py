"""Observable quantities: mode actions, energies, frequency-separation
monitors, the normal-direction convexity constant, and the error metrics
used by the convergence experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np

from .effective import frequencies
from .geometry import momentum_projector, project_to_manifold
from .integrators import Trajectory
from .model import OscillatorySystem, State, hamiltonian, has_identity_mass


class TimeMismatch(Exception):
    """Trajectory sample times fall outside the reference time range."""


@dataclass
class DiagnosticsRecord:
    """Per-sample observables attached to trajectory states."""

    t: float
    energy: float
    actions: np.ndarray
    min_gap: float
    min_combo: float
    constraint_residual: float


@dataclass
class ErrorMetrics:
    """Max-norm errors against a reference, per sample time and overall."""

    max_err_x: float
    max_err_py: float
    times: np.ndarray
    err_x: np.ndarray
    err_py: np.ndarray


def _mode_split(sys, x, y):
    """(projected position, frequency set, actions) of a raw state.

    The position is projected onto the manifold; the offset from it,
    expressed in the mass-orthonormal pencil modes, carries the fast
    oscillation.  Each mode's action is its energy over its frequency:

        c_k = v_k^T M (x - X),  cdot_k = v_k^T y,
        I_k = (cdot_k^2 / 2 + (omega_k/eps)^2 c_k^2 / 2) / omega_k.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    pos = project_to_manifold(sys, x).position
    fset = frequencies(sys, pos)
    if sys.m == 0:
        return pos, fset, np.zeros(0)
    offset = x - pos
    if has_identity_mass(sys, pos):
        coords = fset.vectors.T @ offset
    else:
        coords = fset.vectors.T @ (sys.mass_matrix(pos) @ offset)
    velocities = fset.vectors.T @ y
    energies = 0.5 * velocities ** 2 + 0.5 * (fset.omegas / sys.epsilon) ** 2 * coords ** 2
    return pos, fset, energies / fset.omegas


def compute_actions(sys: OscillatorySystem, x, y) -> np.ndarray:
    """Adiabatic mode actions of a bounded-energy state near the manifold."""
    return _mode_split(sys, x, y)[2]


def resonance_monitor(omegas):
    """(min pairwise gap, min three-frequency combination).

    The combination scan runs over omega_j +/- omega_k +/- omega_l for
    all index triples and sign patterns, dropping only combinations that
    cancel identically by index/sign symmetry.  A single frequency has
    nothing to separate: both monitors are +inf for m <= 1.
    """
    om = [float(w) for w in np.asarray(omegas, dtype=float)]
    m = len(om)
    if m <= 1:
        return math.inf, math.inf
    min_gap = math.inf
    for j in range(m):
        for k in range(j + 1, m):
            min_gap = min(min_gap, abs(om[j] - om[k]))
    min_combo = math.inf
    for j in range(m):
        for k in range(m):
            for l in range(m):
                for s2 in (1, -1):
                    for s3 in (1, -1):
                        coeff = [0] * m
                        coeff[j] += 1
                        coeff[k] += s2
                        coeff[l] += s3
                        if not any(coeff):
                            continue  # structural zero by index/sign symmetry
                        value = om[j] + s2 * om[k] + s3 * om[l]
                        min_combo = min(min_combo, abs(value))
    return min_gap, min_combo


def convexity_check(sys: OscillatorySystem, x) -> float:
    """Smallest squared fast frequency: the best convexity constant of
    the stiff potential along constraint-normal directions."""
    om = frequencies(sys, x).omegas
    return float(om[0] ** 2)


def make_observer(sys: OscillatorySystem):
    """Observer producing a DiagnosticsRecord per sampled state."""

    def observer(system, state: State) -> DiagnosticsRecord:
        _, fset, actions = _mode_split(system, state.x, state.y)
        gap, combo = resonance_monitor(fset.omegas)
        if system.m:
            residual = float(np.max(np.abs(system.constraint(state.x))))
        else:
            residual = 0.0
        return DiagnosticsRecord(
            t=state.t,
            energy=hamiltonian(system, state),
            actions=actions,
            min_gap=gap,
            min_combo=combo,
            constraint_residual=residual,
        )

    return observer


def action_drift(records: List[DiagnosticsRecord]) -> float:
    """max over samples and modes of |I_k(t) - I_k(0)|."""
    base = records[0].actions
    drift = 0.0
    for rec in records:
        drift = max(drift, float(np.max(np.abs(rec.actions - base))) if base.size else 0.0)
    return drift


def _interp_rows(t_query, t_ref, rows_ref):
    """Row-wise linear interpolation of a (N, n) array in time."""
    out = np.empty((t_query.size, rows_ref.shape[1]))
    for j in range(rows_ref.shape[1]):
        out[:, j] = np.interp(t_query, t_ref, rows_ref[:, j])
    return out


def error_metrics(traj: Trajectory, ref: Trajectory, sys: OscillatorySystem) -> ErrorMetrics:
    """Max-norm position and projected-momentum errors against a
    reference trajectory.

    The reference is sampled much finer and interpolated linearly at the
    trajectory times.  Projected momenta compare P(x) y of each
    trajectory against the reference's own projected momenta, which for
    a constrained reference equals its momenta.
    """
    t_q = traj.times()
    t_r = ref.times()
    if t_q.size == 0 or t_r.size == 0:
        raise TimeMismatch("empty trajectory")
    tol = 1e-9 * max(1.0, float(t_r[-1]))
    if t_q[0] < t_r[0] - tol or t_q[-1] > t_r[-1] + tol:
        raise TimeMismatch(
            f"trajectory times [{t_q[0]:.6g}, {t_q[-1]:.6g}] outside reference "
            f"range [{t_r[0]:.6g}, {t_r[-1]:.6g}]"
        )
    x_ref = _interp_rows(t_q, t_r, ref.positions())
    y_ref = _interp_rows(t_q, t_r, ref.momenta())
    err_x = np.empty(t_q.size)
    err_py = np.empty(t_q.size)
    for i, (state, _) in enumerate(traj.samples):
        err_x[i] = float(np.max(np.abs(state.x - x_ref[i])))
        p_traj = momentum_projector(sys, state.x).tangent @ state.y
        p_ref = momentum_projector(sys, x_ref[i]).tangent @ y_ref[i]
        err_py[i] = float(np.max(np.abs(p_traj - p_ref)))
    return ErrorMetrics(
        max_err_x=float(np.max(err_x)),
        max_err_py=float(np.max(err_py)),
        times=t_q,
        err_x=err_x,
        err_py=err_py,
    )
