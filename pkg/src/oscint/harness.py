"""Experiment runner: convergence sweeps, action-drift studies, single
simulations, and a self-check suite.  JSON config in, CSV out.

CSV files use a fixed header, 17-significant-digit floats and LF line
endings so that identical configs reproduce byte-identical outputs.
Wall times are collected per run for reporting but never written to the
CSV (they would break reproducibility).
"""

from __future__ import annotations

import json
import math
import sys as _sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import diagnostics, effective, geometry, integrators, model, smallmat
from .integrators import MacroMethod, Trajectory, integrate
from .model import State

DEFAULT_STEPSIZES = [2.0 ** -k for k in range(2, 10)]


class ConfigError(Exception):
    """Malformed or inconsistent experiment configuration."""


@dataclass
class SweepConfig:
    """Complete description of one experiment.

    model_params may carry "x0"/"y0" lists overriding the model's
    benchmark initial state.
    """

    model: str = "double_pendulum"
    model_params: dict = field(default_factory=dict)
    epsilon: float = 1e-3
    methods: List[str] = field(default_factory=lambda: list(integrators.METHOD_KINDS))
    stepsizes: List[float] = field(default_factory=lambda: list(DEFAULT_STEPSIZES))
    t_end: float = 10.0
    micro_divisor: int = 100
    h_ref: float = 1e-3
    out: str = "result.csv"
    stride: int = 1
    workers: int = 1

    def validate(self):
        if self.model not in ("double_pendulum", "spring_chain"):
            raise ConfigError(f"unknown model {self.model!r}")
        if not self.methods:
            raise ConfigError("methods list is empty")
        for kind in self.methods:
            if kind not in integrators.METHOD_KINDS:
                raise ConfigError(f"unknown method {kind!r}")
        if not self.stepsizes:
            raise ConfigError("stepsizes list is empty")
        if any(h <= 0.0 for h in self.stepsizes):
            raise ConfigError("stepsizes must be positive")
        if any(a <= b for a, b in zip(self.stepsizes, self.stepsizes[1:])):
            raise ConfigError("stepsizes must be strictly descending")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.t_end <= 0.0:
            raise ConfigError("t_end must be positive")
        if self.micro_divisor < 1:
            raise ConfigError("micro_divisor must be >= 1")
        if self.h_ref <= 0.0:
            raise ConfigError("h_ref must be positive")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        build_system(self)  # fail fast on bad model parameters
        return self


def load_config(path) -> SweepConfig:
    """Read a JSON config file; unknown keys are rejected."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> SweepConfig:
    known = set(SweepConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = SweepConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def build_system(cfg: SweepConfig):
    params = {k: v for k, v in cfg.model_params.items() if k not in ("x0", "y0")}
    try:
        if cfg.model == "double_pendulum":
            return model.make_double_pendulum(cfg.epsilon, **params)
        n_springs = int(params.pop("N"))
        return model.make_spring_chain(n_springs, cfg.epsilon, **params)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot build model {cfg.model!r}: {exc}") from exc


def initial_state(cfg: SweepConfig, sys) -> State:
    x0 = cfg.model_params.get("x0")
    y0 = cfg.model_params.get("y0")
    if x0 is None and cfg.model == "double_pendulum":
        base = model.benchmark_initial_state(cfg.epsilon)
        x0 = base.x
    elif x0 is None:
        raise ConfigError("spring_chain config requires model_params.x0")
    x0 = np.asarray(x0, dtype=float)
    y0 = np.zeros(sys.n) if y0 is None else np.asarray(y0, dtype=float)
    if x0.shape != (sys.n,) or y0.shape != (sys.n,):
        raise ConfigError(f"initial state must have dimension {sys.n}")
    return State(x0, y0, 0.0)


@dataclass
class SweepRow:
    method: str
    h: float
    max_err_x: float
    max_err_py: float
    max_action_drift: float
    wall_time: float
    status: str = "ok"


@dataclass
class SweepResult:
    rows: List[SweepRow]
    reference_guard: Optional[float] = None  # max ref change under h_ref halving


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def write_rows_csv(path, rows: Sequence[SweepRow]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("method,h,max_err_x,max_err_Py,max_action_drift,status\n")
        for r in rows:
            fh.write(
                f"{r.method},{_fmt(r.h)},{_fmt(r.max_err_x)},{_fmt(r.max_err_py)},"
                f"{_fmt(r.max_action_drift)},{r.status}\n"
            )


def _trajectory_from_arrays(times, xs, ys) -> Trajectory:
    traj = Trajectory()
    for t, x, y in zip(times, xs, ys):
        traj.samples.append((State(np.array(x), np.array(y), float(t)), None))
    return traj


def _run_one(payload):
    """One (method, h) run against a precomputed reference.

    Module-level so process pools can pickle it; rebuilds the model and
    returns a plain tuple.
    """
    (cfg_dict, kind, h, ref_times, ref_x, ref_y) = payload
    cfg = config_from_dict(cfg_dict)
    sys = build_system(cfg)
    s0 = initial_state(cfg, sys)
    method = MacroMethod(kind, h, cfg.micro_divisor)
    observer = diagnostics.make_observer(sys)
    start = time.perf_counter()
    try:
        traj = integrate(sys, s0, method, cfg.t_end, observer=observer, stride=cfg.stride)
        drift = diagnostics.action_drift(traj.records())
        if ref_times is None:
            err_x = math.nan
            err_py = math.nan
        else:
            ref = _trajectory_from_arrays(ref_times, ref_x, ref_y)
            metrics = diagnostics.error_metrics(traj, ref, sys)
            err_x = metrics.max_err_x
            err_py = metrics.max_err_py
        status = "ok"
    except Exception as exc:  # failed runs become tagged rows, the sweep goes on
        err_x = math.nan
        err_py = math.nan
        drift = math.nan
        status = type(exc).__name__
    wall = time.perf_counter() - start
    return (kind, h, err_x, err_py, drift, wall, status)


def _config_payload(cfg: SweepConfig) -> dict:
    return {
        "model": cfg.model,
        "model_params": cfg.model_params,
        "epsilon": cfg.epsilon,
        "methods": cfg.methods,
        "stepsizes": cfg.stepsizes,
        "t_end": cfg.t_end,
        "micro_divisor": cfg.micro_divisor,
        "h_ref": cfg.h_ref,
        "out": cfg.out,
        "stride": cfg.stride,
        "workers": 1,
    }


def _run_jobs(cfg, payloads):
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_run_one, payloads))
    return [_run_one(p) for p in payloads]


def run_convergence_sweep(cfg: SweepConfig) -> SweepResult:
    """Every configured method at every stepsize against one reference.

    Also integrates the reference at h_ref/2 and records the resulting
    change as the reference guard; rows are written to cfg.out ordered
    as configured regardless of worker scheduling.
    """
    cfg.validate()
    sys = build_system(cfg)
    s0 = initial_state(cfg, sys)
    ref = effective.effective_reference(
        sys, s0.x, s0.y, cfg.h_ref, cfg.t_end, with_records=False
    )
    ref2 = effective.effective_reference(
        sys, s0.x, s0.y, 0.5 * cfg.h_ref, cfg.t_end, with_records=False
    )
    guard = diagnostics.error_metrics(ref, ref2, sys).max_err_x
    ref_times = ref.times()
    ref_xs = ref.positions()
    ref_ys = ref.momenta()
    cfg_dict = _config_payload(cfg)
    payloads = [
        (cfg_dict, kind, h, ref_times, ref_xs, ref_ys)
        for kind in cfg.methods
        for h in cfg.stepsizes
    ]
    rows = [SweepRow(*out) for out in _run_jobs(cfg, payloads)]
    write_rows_csv(cfg.out, rows)
    return SweepResult(rows=rows, reference_guard=guard)


def run_action_study(cfg: SweepConfig) -> SweepResult:
    """Action time series per method at a single stepsize.

    The series goes to cfg.out; summary rows (with the maximal drift per
    method) go to cfg.out with a .summary.csv suffix.
    """
    cfg.validate()
    if len(cfg.stepsizes) != 1:
        raise ConfigError("action study expects exactly one stepsize")
    sys = build_system(cfg)
    s0 = initial_state(cfg, sys)
    h = cfg.stepsizes[0]
    observer = diagnostics.make_observer(sys)
    rows = []
    series = []
    for kind in cfg.methods:
        method = MacroMethod(kind, h, cfg.micro_divisor)
        start = time.perf_counter()
        try:
            traj = integrate(sys, s0, method, cfg.t_end, observer=observer, stride=cfg.stride)
            drift = diagnostics.action_drift(traj.records())
            series.append((kind, traj.records()))
            status = "ok"
        except Exception as exc:
            drift = math.nan
            status = type(exc).__name__
        wall = time.perf_counter() - start
        rows.append(SweepRow(kind, h, math.nan, math.nan, drift, wall, status))
    with open(cfg.out, "w", encoding="utf-8", newline="\n") as fh:
        labels = ",".join(f"I{k}" for k in range(sys.m))
        fh.write(f"method,h,t,{labels}\n")
        for kind, records in series:
            for rec in records:
                acts = ",".join(_fmt(v) for v in rec.actions)
                fh.write(f"{kind},{_fmt(h)},{_fmt(rec.t)},{acts}\n")
    write_rows_csv(_summary_path(cfg.out), rows)
    return SweepResult(rows=rows)


def _summary_path(out: str) -> str:
    stem, dot, _ = out.rpartition(".")
    return (stem if dot else out) + ".summary.csv"


def run_single(cfg: SweepConfig) -> str:
    """One method, one stepsize, full diagnostics series to cfg.out."""
    cfg.validate()
    if len(cfg.methods) != 1 or len(cfg.stepsizes) != 1:
        raise ConfigError("single run expects exactly one method and one stepsize")
    sys = build_system(cfg)
    s0 = initial_state(cfg, sys)
    method = MacroMethod(cfg.methods[0], cfg.stepsizes[0], cfg.micro_divisor)
    observer = diagnostics.make_observer(sys)
    traj = integrate(sys, s0, method, cfg.t_end, observer=observer, stride=cfg.stride)
    header = (
        ["t"]
        + [f"x{i}" for i in range(sys.n)]
        + [f"y{i}" for i in range(sys.n)]
        + ["energy"]
        + [f"I{k}" for k in range(sys.m)]
        + ["min_gap", "min_combo", "constraint_residual"]
    )
    with open(cfg.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for state, rec in traj.samples:
            vals = (
                [state.t]
                + list(state.x)
                + list(state.y)
                + [rec.energy]
                + list(rec.actions)
                + [rec.min_gap, rec.min_combo, rec.constraint_residual]
            )
            fh.write(",".join(_fmt(v) for v in vals) + "\n")
    return cfg.out


# ---------------------------------------------------------------------------
# self-check suite


@dataclass
class CheckResult:
    name: str
    measured: float
    bound: tuple  # ("le", tol) or ("window", lo, hi)
    passed: bool

    def describe(self) -> str:
        if self.bound[0] == "le":
            detail = f"measured={self.measured:.6e} tolerance={self.bound[1]:.6e}"
        else:
            detail = (
                f"measured={self.measured:.6e} "
                f"window=[{self.bound[1]:.3g}, {self.bound[2]:.3g}]"
            )
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {detail}"


def random_bounded_energy_states(sys, count, seed, elongation=1.0, momentum=1.0):
    """Spring-chain states with O(eps)-stretched springs and O(1) momenta.

    Bob k sits at distance l_k + elongation*eps*u from bob k-1 along a
    random direction, u uniform in [-1, 1]; scaling `elongation` by the
    same factor as eps reuses the identical draws at another stiffness.
    """
    rng = np.random.default_rng(seed)
    states = []
    for _ in range(count):
        angles = rng.uniform(-math.pi, math.pi, sys.m)
        stretch = rng.uniform(-1.0, 1.0, sys.m)
        x = np.empty(sys.n)
        px, py = 0.0, 0.0
        lengths = getattr(sys, "lengths", None)
        for k in range(sys.m):
            if lengths is not None:
                rest = lengths[k]
            else:
                rest = sys.l1 if k == 0 else sys.l2
            r = rest + elongation * sys.epsilon * stretch[k]
            px += r * math.sin(angles[k])
            py += -r * math.cos(angles[k])
            x[2 * k] = px
            x[2 * k + 1] = py
        y = momentum * rng.uniform(-1.0, 1.0, sys.n)
        states.append(State(x, y, 0.0))
    return states


def _check_kernels():
    rng = np.random.default_rng(202401)
    worst_chol = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 17))
        b = rng.standard_normal((n, n))
        a = b @ b.T + 0.1 * np.eye(n)
        lower = smallmat.cholesky(a)
        err = np.max(np.abs(lower @ lower.T - a)) / np.max(np.abs(a))
        worst_chol = max(worst_chol, float(err))

    worst_eig = 0.0
    for _ in range(100):
        m = smallmat.symmetrize(rng.standard_normal((2, 2)))
        half_tr = 0.5 * (m[0, 0] + m[1, 1])
        rad = math.sqrt((0.5 * (m[0, 0] - m[1, 1])) ** 2 + m[0, 1] ** 2)
        exact = np.array([half_tr - rad, half_tr + rad])
        got = smallmat.sym_eig(m).values
        worst_eig = max(worst_eig, float(np.max(np.abs(got - exact))))

    worst_orth = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 9))
        a = smallmat.symmetrize(rng.standard_normal((n, n)))
        c = rng.standard_normal((n, n))
        b = c @ c.T + 0.5 * np.eye(n)
        vec = smallmat.gen_eig(a, b).vectors
        worst_orth = max(worst_orth, float(np.max(np.abs(vec.T @ b @ vec - np.eye(n)))))
    return worst_chol, worst_eig, worst_orth


def _check_frequency_pair():
    sys = model.make_double_pendulum(1e-2)
    s = math.sqrt(0.5)
    x = np.array([s, -s, math.sqrt(2.0), 0.0])  # springs at right angles
    om = effective.frequencies(sys, x).omegas
    return float(np.max(np.abs(om - np.array([1.0, math.sqrt(2.0)]))))


def _check_geometry(eps=1e-2, count=50):
    sys = model.make_double_pendulum(eps)
    states = random_bounded_energy_states(sys, count, seed=77)
    worst_idem = worst_ann = worst_moll = 0.0
    for st in states:
        proj = geometry.momentum_projector(sys, st.x)
        p = proj.tangent
        worst_idem = max(worst_idem, float(np.max(np.abs(p @ p - p))))
        jac = sys.constraint_jacobian(st.x)
        worst_ann = max(worst_ann, float(np.max(np.abs(jac @ p))))
        moll = geometry.project_to_manifold(sys, st.x)
        worst_moll = max(worst_moll, float(np.max(np.abs(sys.constraint(moll.position)))))
    return worst_idem, worst_ann, worst_moll


def _mollifier_jacobian_gap(eps, count=50):
    sys = model.make_double_pendulum(eps)
    states = random_bounded_energy_states(sys, count, seed=78)
    worst = 0.0
    for st in states:
        moll = geometry.project_to_manifold(sys, st.x, want_jacobian=True)
        p = geometry.momentum_projector(sys, st.x).tangent
        worst = max(worst, float(np.max(np.abs(moll.jacobian_t - p))))
    return worst


def _check_reversibility(kind, eps=1e-2, h=0.01, nsteps=100):
    sys = model.make_double_pendulum(eps)
    s0 = model.benchmark_initial_state(eps)
    method = MacroMethod(kind, h)
    step = integrators.step_function(kind)
    state = s0.copy()
    for _ in range(nsteps):
        state = step(sys, state, method)
    state = State(state.x, -state.y, 0.0)
    for _ in range(nsteps):
        state = step(sys, state, method)
    return float(
        max(np.max(np.abs(state.x - s0.x)), np.max(np.abs(-state.y - s0.y)))
    )


def _check_reference_guard(eps=1e-2, t_end=2.0, h_ref=1e-3):
    sys = model.make_double_pendulum(eps)
    s0 = model.benchmark_initial_state(eps)
    ref = effective.effective_reference(sys, s0.x, s0.y, h_ref, t_end, with_records=False)
    ref2 = effective.effective_reference(
        sys, s0.x, s0.y, 0.5 * h_ref, t_end, with_records=False
    )
    return diagnostics.error_metrics(ref, ref2, sys).max_err_x


def run_check(cfg: Optional[SweepConfig] = None, inject_fault: Optional[str] = None):
    """Desk-scale validation suite.  Returns (results, all_passed)."""
    results: List[CheckResult] = []

    def add_le(name, measured, tol):
        if inject_fault == name:
            tol = 0.0
        results.append(CheckResult(name, measured, ("le", tol), measured <= tol))

    def add_window(name, measured, lo, hi):
        if inject_fault == name:
            lo, hi = 0.0, 0.0
        results.append(
            CheckResult(name, measured, ("window", lo, hi), lo <= measured <= hi)
        )

    chol, eig2, orth = _check_kernels()
    add_le("cholesky_reconstruction", chol, 1e-12)
    add_le("sym_eig_2x2_closed_form", eig2, 1e-12)
    add_le("gen_eig_orthonormality", orth, 1e-10)
    add_le("frequency_pair", _check_frequency_pair(), 1e-10)

    idem, ann, moll = _check_geometry()
    add_le("projector_idempotent", idem, 1e-10)
    add_le("projector_annihilates", ann, 1e-10)
    add_le("projection_onto_manifold", moll, 1e-10)

    gap_coarse = _mollifier_jacobian_gap(1e-2)
    gap_fine = _mollifier_jacobian_gap(5e-3)
    add_window("mollifier_jacobian_scaling", gap_coarse / gap_fine, 1.5, 3.0)

    add_le("reversibility_projected", _check_reversibility("projected"), 1e-8)
    add_le("reversibility_mollified", _check_reversibility("mollified"), 1e-8)

    # proxy bound: 1% of the epsilon-level floor the macro methods reach
    add_le("reference_convergence", _check_reference_guard(), 1e-4)

    return results, all(r.passed for r in results)


def print_check_report(results, stream=None):
    stream = stream or _sys.stdout
    for res in results:
        print(res.describe(), file=stream)
    failed = [r for r in results if not r.passed]
    print(
        f"{len(results) - len(failed)}/{len(results)} checks passed",
        file=stream,
    )
