"""Time steppers for the stiff oscillatory system.

The micro level is a kick-drift-kick leapfrog; the fast-flow solver runs
it with the slow force switched off.  On the macro level three splitting
methods share the oscillate step and differ only in the kick force:

    impulse    kick with -grad slow(x)
    mollified  kick with -J(x)^T grad slow(p(x)), p the manifold
               projection of the position and J its exact Jacobian
    projected  kick with -P(x) grad slow(x), P the momentum projector
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import smallmat
from .geometry import momentum_projector, project_to_manifold
from .model import OscillatorySystem, State, has_identity_mass

METHOD_KINDS = ("impulse", "mollified", "projected")


class StabilityViolation(Exception):
    """Micro stepsize too large for the fastest oscillation."""


class IntegrationError(Exception):
    """A macro step failed; carries the partial trajectory."""

    def __init__(self, message, partial=None, time=None):
        super().__init__(message)
        self.partial = partial
        self.time = time


@dataclass
class MacroMethod:
    """Macro stepper selection: kind, stepsize h, and the micro divisor
    fixing the micro stepsize epsilon / micro_divisor."""

    kind: str
    h: float
    micro_divisor: int = 100

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}")
        if self.h <= 0.0:
            raise ValueError("macro stepsize must be positive")
        if self.micro_divisor < 1:
            raise ValueError("micro_divisor must be >= 1")


@dataclass
class Trajectory:
    """Time-ordered samples of (state, diagnostics record)."""

    samples: List[Tuple[State, object]] = field(default_factory=list)
    stride: int = 1

    def times(self):
        return np.array([s.t for s, _ in self.samples])

    def positions(self):
        return np.array([s.x for s, _ in self.samples])

    def momenta(self):
        return np.array([s.y for s, _ in self.samples])

    def records(self):
        return [rec for _, rec in self.samples]


def _require_constant_mass(sys):
    if not sys.mass_is_constant:
        raise ValueError(
            "explicit leapfrog integration requires a constant mass matrix"
        )


def _mass_apply_inverse(sys, x):
    """(is_identity, solver) for the constant mass matrix."""
    if has_identity_mass(sys, x):
        return True, None
    lower = smallmat.cholesky(sys.mass_matrix(x))
    return False, lambda v: smallmat.solve_lower_t(lower, smallmat.solve_lower(lower, v))


def _check_micro_stability(sys, x, h_micro):
    """Entry guard: h_micro * (fastest frequency) must stay below 2."""
    if sys.m == 0:
        return
    if has_identity_mass(sys, x):
        values = smallmat.sym_eig(sys.hess_stiff(x)).values
    else:
        values = smallmat.gen_eig(sys.hess_stiff(x), sys.mass_matrix(x)).values
    omega_max = math.sqrt(max(float(values[-1]), 0.0))
    if h_micro * omega_max / sys.epsilon >= 2.0:
        raise StabilityViolation(
            f"h_micro={h_micro:.3e} exceeds stability limit "
            f"{2.0 * sys.epsilon / omega_max:.3e} for omega_max/eps="
            f"{omega_max / sys.epsilon:.3e}"
        )


def stormer_verlet(
    sys: OscillatorySystem,
    state: State,
    h_micro: float,
    nsteps: int,
    include_slow: bool = True,
) -> State:
    """Kick-drift-kick leapfrog over nsteps equal micro steps.

    Integrates xdot = M^-1 y, ydot = -[include_slow] grad slow
    - grad stiff / epsilon^2.  One stiff-force evaluation per step.
    """
    _require_constant_mass(sys)
    _check_micro_stability(sys, state.x, h_micro)
    identity_mass, minv = _mass_apply_inverse(sys, state.x)
    inv_eps2 = 1.0 / sys.epsilon ** 2
    grad_stiff = sys.grad_stiff
    grad_slow = sys.grad_slow
    x = state.x.copy()
    y = state.y.copy()
    half = 0.5 * h_micro

    if include_slow:
        force = -(grad_slow(x) + inv_eps2 * grad_stiff(x))
    else:
        force = (-inv_eps2) * grad_stiff(x)
    for _ in range(nsteps):
        y = y + half * force
        x = x + h_micro * (y if identity_mass else minv(y))
        if include_slow:
            force = -(grad_slow(x) + inv_eps2 * grad_stiff(x))
        else:
            force = (-inv_eps2) * grad_stiff(x)
        y = y + half * force
    return State(x, y, state.t + nsteps * h_micro)


def fast_flow(
    sys: OscillatorySystem, state: State, h: float, micro_divisor: int
) -> State:
    """Oscillate step: advance the system with the slow potential
    switched off over time h, in equal micro steps of at most
    epsilon / micro_divisor."""
    h_micro = sys.epsilon / micro_divisor
    nsteps = max(1, math.ceil(h / h_micro))
    return stormer_verlet(sys, state, h / nsteps, nsteps, include_slow=False)


def _kick_force_impulse(sys, x):
    return sys.grad_slow(x)


def _kick_force_mollified(sys, x):
    moll = project_to_manifold(sys, x, want_jacobian=True)
    return moll.jacobian_t @ sys.grad_slow(moll.position)


def _kick_force_projected(sys, x):
    return momentum_projector(sys, x).tangent @ sys.grad_slow(x)


_KICK_FORCES = {
    "impulse": _kick_force_impulse,
    "mollified": _kick_force_mollified,
    "projected": _kick_force_projected,
}


def _splitting_step(sys, state, method, kick_force):
    half = 0.5 * method.h
    y = state.y - half * kick_force(sys, state.x)
    mid = fast_flow(sys, State(state.x, y, state.t), method.h, method.micro_divisor)
    y_end = mid.y - half * kick_force(sys, mid.x)
    return State(mid.x, y_end, mid.t)


def impulse_step(sys: OscillatorySystem, state: State, method: MacroMethod) -> State:
    """Plain splitting step: slow kick, fast flow, slow kick."""
    if method.kind != "impulse":
        raise ValueError(f"method kind is {method.kind!r}, not 'impulse'")
    return _splitting_step(sys, state, method, _kick_force_impulse)


def mollified_impulse_step(
    sys: OscillatorySystem, state: State, method: MacroMethod
) -> State:
    """Splitting step whose kicks use the slow force pulled back through
    the manifold projection of the position."""
    if method.kind != "mollified":
        raise ValueError(f"method kind is {method.kind!r}, not 'mollified'")
    return _splitting_step(sys, state, method, _kick_force_mollified)


def projected_impulse_step(
    sys: OscillatorySystem, state: State, method: MacroMethod
) -> State:
    """Splitting step whose kicks project the slow force onto the
    constraint-tangential momentum directions."""
    if method.kind != "projected":
        raise ValueError(f"method kind is {method.kind!r}, not 'projected'")
    return _splitting_step(sys, state, method, _kick_force_projected)


def step_function(kind: str) -> Callable:
    return {
        "impulse": impulse_step,
        "mollified": mollified_impulse_step,
        "projected": projected_impulse_step,
    }[kind]


def integrate(
    sys: OscillatorySystem,
    state0: State,
    method: MacroMethod,
    t_end: float,
    observer: Optional[Callable[[OscillatorySystem, State], object]] = None,
    stride: int = 1,
) -> Trajectory:
    """Run the selected macro method from state0 up to t_end.

    Samples every `stride`-th macro step (plus the initial and final
    states).  A failing step aborts with an IntegrationError carrying
    the partial trajectory and the failure time.
    """
    if t_end <= 0.0:
        raise ValueError("t_end must be positive")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    step = step_function(method.kind)
    nsteps = 0 if t_end < method.h else int(math.floor(t_end / method.h + 0.5))
    traj = Trajectory(stride=stride)
    state = State(state0.x.copy(), state0.y.copy(), state0.t)
    traj.samples.append((state, observer(sys, state) if observer else None))
    t0 = state0.t
    for k in range(1, nsteps + 1):
        try:
            state = step(sys, state, method)
        except Exception as exc:
            raise IntegrationError(
                f"{method.kind} step failed at t={state.t:.6g}: {exc}",
                partial=traj,
                time=state.t,
            ) from exc
        state.t = t0 + k * method.h  # multiplicative clock, no accumulation
        if k % stride == 0 or k == nsteps:
            traj.samples.append((state, observer(sys, state) if observer else None))
    return traj


def integrate_micro(
    sys: OscillatorySystem,
    state0: State,
    h_micro: float,
    nsteps: int,
    sample_stride: int,
    observer: Optional[Callable[[OscillatorySystem, State], object]] = None,
    include_slow: bool = True,
) -> Trajectory:
    """Plain leapfrog run of the full system, sampled every
    sample_stride micro steps.  Used for fine reference integrations of
    the oscillatory dynamics itself."""
    traj = Trajectory(stride=sample_stride)
    state = State(state0.x.copy(), state0.y.copy(), state0.t)
    traj.samples.append((state, observer(sys, state) if observer else None))
    t0 = state0.t
    done = 0
    while done < nsteps:
        chunk = min(sample_stride, nsteps - done)
        state = stormer_verlet(sys, state, h_micro, chunk, include_slow=include_slow)
        done += chunk
        state.t = t0 + done * h_micro
        traj.samples.append((state, observer(sys, state) if observer else None))
    return traj
