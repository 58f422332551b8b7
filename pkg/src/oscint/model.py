"""Oscillatory mechanical systems with a stiff constraining potential.

A system bundles a mass matrix M(x), a smooth slow potential, a stiff
potential (scaled internally by 1/epsilon^2) whose zero set is the
constraint manifold, and the constraint function with its Jacobian:

    H(x, y) = 1/2 y^T M(x)^-1 y + slow(x) + stiff(x) / epsilon^2

Shipped models are planar chains of stiff springs under gravity; the
two-bob chain is also available as an independently coded class for
cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import smallmat


class DomainError(Exception):
    """State left the model's admissible region (a spring collapsed)."""


@dataclass
class State:
    """Phase-space point: positions x, momenta y, time t."""

    x: np.ndarray
    y: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)

    def copy(self) -> "State":
        return State(self.x.copy(), self.y.copy(), self.t)


class OscillatorySystem:
    """Contract every integrator and diagnostic consumes.

    Attributes:
        n: configuration dimension.
        m: number of constraints (= number of fast frequencies).
        epsilon: stiffness parameter in (0, 1).
        mass_is_constant: True when M(x) does not depend on x; the
            shipped explicit integrators require it.

    Subclasses provide mass_matrix, slow_potential, grad_slow,
    stiff_potential, grad_stiff, hess_stiff, constraint and
    constraint_jacobian.  All evaluators must be pure.
    """

    n: int
    m: int
    epsilon: float
    mass_is_constant: bool

    def mass_matrix(self, x) -> np.ndarray:
        raise NotImplementedError

    def slow_potential(self, x) -> float:
        raise NotImplementedError

    def grad_slow(self, x) -> np.ndarray:
        raise NotImplementedError

    def stiff_potential(self, x) -> float:
        raise NotImplementedError

    def grad_stiff(self, x) -> np.ndarray:
        raise NotImplementedError

    def hess_stiff(self, x) -> np.ndarray:
        raise NotImplementedError

    def constraint(self, x) -> np.ndarray:
        raise NotImplementedError

    def constraint_jacobian(self, x) -> np.ndarray:
        raise NotImplementedError


_MIN_SPRING_LENGTH = 1e-8


@dataclass
class StiffSpringDoublePendulum(OscillatorySystem):
    """Two bobs in the plane, each tied by a stiff spring, under gravity.

    Positions are x = (bob1_x, bob1_y, bob2_x, bob2_y); the first spring
    anchors bob 1 to the origin, the second connects the bobs.  Unit
    masses, unit gravitational constant:

        slow(x)  = x[1] + x[3]
        stiff(x) = 1/2 a1^2 (|x1| - l1)^2 + 1/2 a2^2 (|x2 - x1| - l2)^2

    Spring constants of the full problem are (a_i / epsilon)^2; the
    constraint vector carries the raw elongations so that the rows of its
    Jacobian are geometrically normalized.
    """

    epsilon: float
    alpha1: float = 1.0
    alpha2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    n: int = field(init=False, default=4)
    m: int = field(init=False, default=2)
    mass_is_constant: bool = field(init=False, default=True)

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if min(self.alpha1, self.alpha2, self.l1, self.l2) <= 0.0:
            raise ValueError("spring parameters must be positive")

    def _lengths(self, x):
        r1 = math.hypot(x[0], x[1])
        d0 = x[2] - x[0]
        d1 = x[3] - x[1]
        r2 = math.hypot(d0, d1)
        if r1 < _MIN_SPRING_LENGTH or r2 < _MIN_SPRING_LENGTH:
            raise DomainError(f"spring length collapsed: |x1|={r1:.3e}, |x2-x1|={r2:.3e}")
        return r1, d0, d1, r2

    def mass_matrix(self, x):
        return np.eye(4)

    def slow_potential(self, x):
        return x[1] + x[3]

    def grad_slow(self, x):
        return np.array([0.0, 1.0, 0.0, 1.0])

    def stiff_potential(self, x):
        r1, _, _, r2 = self._lengths(x)
        return 0.5 * (self.alpha1 * (r1 - self.l1)) ** 2 + 0.5 * (
            self.alpha2 * (r2 - self.l2)
        ) ** 2

    def grad_stiff(self, x):
        r1, d0, d1, r2 = self._lengths(x)
        c1 = self.alpha1 ** 2 * (r1 - self.l1) / r1
        c2 = self.alpha2 ** 2 * (r2 - self.l2) / r2
        g = np.empty(4)
        g[0] = c1 * x[0] - c2 * d0
        g[1] = c1 * x[1] - c2 * d1
        g[2] = c2 * d0
        g[3] = c2 * d1
        return g

    def hess_stiff(self, x):
        r1, d0, d1, r2 = self._lengths(x)
        u1 = np.array([x[0], x[1]]) / r1
        u2 = np.array([d0, d1]) / r2
        # per-spring blocks a^2 (u u^T + (r - l)/r (I - u u^T))
        b1 = self.alpha1 ** 2 * (
            np.outer(u1, u1) + (r1 - self.l1) / r1 * (np.eye(2) - np.outer(u1, u1))
        )
        b2 = self.alpha2 ** 2 * (
            np.outer(u2, u2) + (r2 - self.l2) / r2 * (np.eye(2) - np.outer(u2, u2))
        )
        h = np.zeros((4, 4))
        h[:2, :2] = b1 + b2
        h[:2, 2:] = -b2
        h[2:, :2] = -b2
        h[2:, 2:] = b2
        return h

    def constraint(self, x):
        r1, _, _, r2 = self._lengths(x)
        return np.array([r1 - self.l1, r2 - self.l2])

    def constraint_jacobian(self, x):
        r1, d0, d1, r2 = self._lengths(x)
        jac = np.zeros((2, 4))
        jac[0, 0] = x[0] / r1
        jac[0, 1] = x[1] / r1
        jac[1, 0] = -d0 / r2
        jac[1, 1] = -d1 / r2
        jac[1, 2] = d0 / r2
        jac[1, 3] = d1 / r2
        return jac


@dataclass
class StiffSpringChain(OscillatorySystem):
    """Chain of N bobs joined by stiff springs, first spring anchored at
    the origin, gravity acting on every bob.

    Generalizes the two-bob model; evaluators are written over the spring
    list with the same per-spring arithmetic so the N=2 chain reproduces
    the double pendulum bit for bit.
    """

    epsilon: float
    alphas: np.ndarray
    lengths: np.ndarray
    n: int = field(init=False)
    m: int = field(init=False)
    mass_is_constant: bool = field(init=False, default=True)

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        self.lengths = np.asarray(self.lengths, dtype=float)
        if self.alphas.ndim != 1 or self.alphas.shape != self.lengths.shape:
            raise ValueError("alphas and lengths must be 1-D and equally long")
        if self.alphas.size < 1:
            raise ValueError("chain needs at least one spring")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if min(self.alphas.min(), self.lengths.min()) <= 0.0:
            raise ValueError("spring parameters must be positive")
        self.m = self.alphas.size
        self.n = 2 * self.m

    def _segments(self, x):
        """Per spring: (dx, dy, length), measured from the previous bob."""
        segs = []
        px, py = 0.0, 0.0
        for k in range(self.m):
            d0 = x[2 * k] - px
            d1 = x[2 * k + 1] - py
            r = math.hypot(d0, d1)
            if r < _MIN_SPRING_LENGTH:
                raise DomainError(f"spring {k} length collapsed: {r:.3e}")
            segs.append((d0, d1, r))
            px, py = x[2 * k], x[2 * k + 1]
        return segs

    def mass_matrix(self, x):
        return np.eye(self.n)

    def slow_potential(self, x):
        total = x[1]
        for k in range(1, self.m):
            total = total + x[2 * k + 1]
        return total

    def grad_slow(self, x):
        g = np.zeros(self.n)
        g[1::2] = 1.0
        return g

    def stiff_potential(self, x):
        segs = self._segments(x)
        total = 0.0
        for k, (_, _, r) in enumerate(segs):
            total = total + 0.5 * (self.alphas[k] * (r - self.lengths[k])) ** 2
        return total

    def grad_stiff(self, x):
        segs = self._segments(x)
        coef = [
            self.alphas[k] ** 2 * (segs[k][2] - self.lengths[k]) / segs[k][2]
            for k in range(self.m)
        ]
        g = np.empty(self.n)
        for k, (d0, d1, _) in enumerate(segs):
            if k + 1 < self.m:
                e0, e1, _ = segs[k + 1]
                g[2 * k] = coef[k] * d0 - coef[k + 1] * e0
                g[2 * k + 1] = coef[k] * d1 - coef[k + 1] * e1
            else:
                g[2 * k] = coef[k] * d0
                g[2 * k + 1] = coef[k] * d1
        return g

    def hess_stiff(self, x):
        segs = self._segments(x)
        h = np.zeros((self.n, self.n))
        for k, (d0, d1, r) in enumerate(segs):
            u = np.array([d0, d1]) / r
            blk = self.alphas[k] ** 2 * (
                np.outer(u, u)
                + (r - self.lengths[k]) / r * (np.eye(2) - np.outer(u, u))
            )
            i = 2 * k
            h[i:i + 2, i:i + 2] += blk
            if k > 0:
                j = 2 * (k - 1)
                h[j:j + 2, j:j + 2] += blk
                h[j:j + 2, i:i + 2] -= blk
                h[i:i + 2, j:j + 2] -= blk
        return h

    def constraint(self, x):
        segs = self._segments(x)
        return np.array([segs[k][2] - self.lengths[k] for k in range(self.m)])

    def constraint_jacobian(self, x):
        segs = self._segments(x)
        jac = np.zeros((self.m, self.n))
        for k, (d0, d1, r) in enumerate(segs):
            jac[k, 2 * k] = d0 / r
            jac[k, 2 * k + 1] = d1 / r
            if k > 0:
                jac[k, 2 * (k - 1)] = -d0 / r
                jac[k, 2 * k - 1] = -d1 / r
        return jac


def make_double_pendulum(epsilon, alpha1=1.0, alpha2=1.0, l1=1.0, l2=1.0):
    """Stiff spring double pendulum with unit gravity."""
    return StiffSpringDoublePendulum(epsilon, alpha1, alpha2, l1, l2)


def make_spring_chain(n_springs, epsilon, alphas, lengths):
    """Chain of n_springs stiff springs hanging from the origin."""
    alphas = np.asarray(alphas, dtype=float)
    lengths = np.asarray(lengths, dtype=float)
    if alphas.shape != (n_springs,) or lengths.shape != (n_springs,):
        raise ValueError("alphas and lengths must have length n_springs")
    return StiffSpringChain(epsilon, alphas, lengths)


def benchmark_initial_state(epsilon) -> State:
    """Standard experiment start for the double pendulum.

    Both springs at right angles, the first at rest length, the second
    stretched by O(epsilon); momenta zero.  The energy stays bounded as
    epsilon decreases.
    """
    s = math.sqrt(0.5)
    return State(
        x=np.array([s, -s, math.sqrt(2.0), 5.0 * epsilon]),
        y=np.zeros(4),
        t=0.0,
    )


def has_identity_mass(sys: OscillatorySystem, x) -> bool:
    """True when M(x) is the identity; memoized for constant-mass systems."""
    cached = getattr(sys, "_identity_mass", None)
    if cached is not None and sys.mass_is_constant:
        return cached
    result = _is_identity(sys.mass_matrix(x))
    if sys.mass_is_constant:
        sys._identity_mass = result
    return result


def hamiltonian(sys: OscillatorySystem, state: State) -> float:
    """Total energy 1/2 y^T M^-1 y + slow(x) + stiff(x)/epsilon^2."""
    if has_identity_mass(sys, state.x):
        kinetic = 0.5 * float(state.y @ state.y)
    else:
        kinetic = 0.5 * float(state.y @ smallmat.solve_spd(sys.mass_matrix(state.x), state.y))
    return (
        kinetic
        + sys.slow_potential(state.x)
        + sys.stiff_potential(state.x) / sys.epsilon ** 2
    )


def rhs_full(sys: OscillatorySystem, state: State):
    """Right-hand side (xdot, ydot) of the full equations of motion.

    Requires a constant mass matrix: the kinetic-energy gradient term
    that appears for position-dependent M(x) is not available from the
    evaluator contract.
    """
    if not sys.mass_is_constant:
        raise NotImplementedError(
            "rhs_full supports constant mass matrices only"
        )
    if has_identity_mass(sys, state.x):
        xdot = state.y.copy()
    else:
        xdot = smallmat.solve_spd(sys.mass_matrix(state.x), state.y)
    ydot = -sys.grad_slow(state.x) - sys.grad_stiff(state.x) / sys.epsilon ** 2
    return xdot, ydot


def _is_identity(mass: np.ndarray) -> bool:
    return np.array_equal(mass, np.eye(mass.shape[0]))
