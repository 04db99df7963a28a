"""Projected stochastic gradient iteration with a priori mesh refinement.

Each iteration refines the mesh until ``h_max`` meets the schedule bound,
draws one field realization, solves state and adjoint equations on the
current mesh, takes a projected gradient step and, in the averaging
regimes, folds the iterate into a running weighted average.

Examples
--------
>>> rule = StronglyConvex(theta=6.0, nu=299.0)
>>> step_size(rule, 1)
0.02
>>> round(mesh_bound(MeshSchedule(c=2.0), VariableAveraging(1.0, 1.0, 1.0), 1), 12)
2.0
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from . import fem
from .mesh import TriMesh, prolong_p0, uniform_mesh
from .randfield import FieldSpec, sample_realization
from .spaces import P0Function

__all__ = [
    "StronglyConvex", "ConstantAveraging", "VariableAveraging", "StepRule", "is_averaging",
    "MeshSchedule", "derive_nu", "step_size", "mesh_bound", "compute_M_bound", "project_box",
    "RunningAverage", "PsgState", "PsgConfig", "RunRecord", "psg_step", "run_psg",
    "POINCARE_CONSTANT", "NU_MARGIN",
]

POINCARE_CONSTANT = math.sqrt(2.0) / math.pi  # diam(unit square) / pi
NU_MARGIN = 0.5


@dataclass(frozen=True)
class StronglyConvex:
    """t_n = theta / (n + nu)."""
    theta: float
    nu: float

    def __post_init__(self):
        if self.theta <= 0 or self.nu < 0:
            raise ValueError("need theta > 0 and nu >= 0")


@dataclass(frozen=True)
class ConstantAveraging:
    """t = D_ad / sqrt(M N) for every n."""
    d_ad: float
    M: float
    N: int

    def __post_init__(self):
        if self.d_ad <= 0 or self.M <= 0 or self.N < 1:
            raise ValueError("need D_ad > 0, M > 0 and N >= 1")


@dataclass(frozen=True)
class VariableAveraging:
    """t_n = theta D_ad / sqrt(M n)."""
    theta: float
    d_ad: float
    M: float

    def __post_init__(self):
        if self.theta <= 0 or self.d_ad <= 0 or self.M <= 0:
            raise ValueError("need theta > 0, D_ad > 0 and M > 0")


StepRule = Union[StronglyConvex, ConstantAveraging, VariableAveraging]


def is_averaging(rule: StepRule) -> bool:
    return isinstance(rule, (ConstantAveraging, VariableAveraging))


@dataclass(frozen=True)
class MeshSchedule:
    """h_n bound constant ``c`` and exponent ``p = min(2s, t, 1)``.

    ``refine=False`` keeps the initial mesh for the whole run; ``max_level``
    caps refinement so long runs stay affordable (rows report ``capped``).
    """
    c: float
    p: float = 1.0
    refine: bool = True
    initial_level: int = 0
    max_level: Optional[int] = None

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("schedule constant c must be positive")
        if not 0 < self.p <= 1:
            raise ValueError("schedule exponent p must lie in (0, 1]")
        if self.max_level is not None and self.max_level < self.initial_level:
            raise ValueError("max_level below initial_level")


def derive_nu(theta: float, K: float, mu: float, margin: float = NU_MARGIN) -> float:
    """Smallest admissible shift 2 theta K / (2 mu theta - 1) - 1, plus ``margin``."""
    denom = 2.0 * mu * theta - 1.0
    if denom <= 0:
        raise ValueError(f"need 2 mu theta > 1, got {2 * mu * theta!r}")
    return 2.0 * theta * K / denom - 1.0 + margin


def step_size(rule: StepRule, n: int) -> float:
    if n < 1:
        raise ValueError("iteration index starts at 1")
    if isinstance(rule, StronglyConvex):
        return rule.theta / (n + rule.nu)
    if isinstance(rule, ConstantAveraging):
        return rule.d_ad / math.sqrt(rule.M * rule.N)
    if isinstance(rule, VariableAveraging):
        return rule.theta * rule.d_ad / math.sqrt(rule.M * n)
    raise TypeError(f"unknown step rule {rule!r}")


def mesh_bound(schedule: MeshSchedule, rule: StepRule, n: int) -> float:
    if n < 1:
        raise ValueError("iteration index starts at 1")
    if isinstance(rule, StronglyConvex):
        base = schedule.c / (n + rule.nu)
    else:
        base = schedule.c / (math.sqrt(n) + math.sqrt(n - 1))
    return base ** (1.0 / schedule.p)


def compute_M_bound(a_min: float, y_d_norm: float = math.sqrt(2.5),
                    e_d_norm: float = math.sqrt(1.0 + 9.0 * math.pi**4),
                    u_norm: float = 1.0) -> float:
    """Second-moment bound [C(|y_d| + C(|u| + |e_d|))]^2 with C = C_p^2 / a_min.

    Defaults are the data of the convex test problem with |u| <= 1.
    """
    if a_min <= 0:
        raise ValueError("a_min must be positive")
    C = POINCARE_CONSTANT**2 / a_min
    return (C * (y_d_norm + C * (u_norm + e_d_norm))) ** 2


def project_box(u: P0Function, u_a: float, u_b: float) -> P0Function:
    """Cellwise clamp, the exact L2 projection onto constant bounds."""
    if not u_a < u_b:
        raise ValueError("need u_a < u_b")
    return P0Function(u.mesh, np.clip(u.values, u_a, u_b))


class RunningAverage:
    """Weighted mean sum w_n u_n / sum w_n, kept on the finest mesh seen so far."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self._sum = np.zeros(mesh.n_triangles)
        self.weight = 0.0
        self.count = 0

    def add(self, u: P0Function, w: float) -> None:
        if u.mesh is not self.mesh:
            self.prolong(u.mesh)
        self._sum = self._sum + w * u.values
        self.weight += w
        self.count += 1

    def prolong(self, mesh: TriMesh) -> None:
        if mesh is self.mesh:
            return
        self._sum = prolong_p0(P0Function(self.mesh, self._sum), mesh).values.copy()
        self.mesh = mesh

    def value(self) -> P0Function:
        if self.weight <= 0:
            raise ValueError("empty average")
        return P0Function(self.mesh, self._sum / self.weight)


@dataclass
class PsgState:
    u: P0Function
    n: int
    rng: np.random.Generator
    average: Optional[RunningAverage] = None

    @property
    def mesh(self) -> TriMesh:
        return self.u.mesh


GradientFn = Callable[[fem.TrackingProblem, P0Function, object, fem.Solver], P0Function]


def _default_gradient(problem, u, realization, solver):
    return fem.sample_gradient(problem, u, realization, solver).gradient


@dataclass
class PsgConfig:
    """Everything one PSG run needs.

    ``alpha`` sets the averaging window start i = ceil(alpha N).  ``snapshots``
    lists step counts after which the iterate is stored.
    """
    problem: fem.TrackingProblem
    field_spec: FieldSpec
    rule: StepRule
    schedule: MeshSchedule
    n_steps: int
    seed: int = 0
    alpha: float = 0.5
    solver: fem.Solver = field(default_factory=fem.Solver)
    snapshots: tuple = ()
    gradient_fn: GradientFn = _default_gradient

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")

    @property
    def window_start(self) -> int:
        return max(1, math.ceil(self.alpha * self.n_steps))

    def echo(self) -> dict:
        out = {"problem": self.problem.name, "lam": self.problem.lam,
               "field": type(self.field_spec).__name__, "rule": type(self.rule).__name__,
               "n_steps": self.n_steps, "seed": self.seed, "alpha": self.alpha,
               "solver": self.solver.method, "solver_tol": self.solver.tol}
        out.update({f"rule_{k}": v for k, v in vars(self.rule).items()})
        out.update({f"schedule_{k}": v for k, v in vars(self.schedule).items()})
        return out


@dataclass
class RunRecord:
    rows: list
    final: P0Function
    averaged: Optional[P0Function]
    config: dict
    snapshots: dict = field(default_factory=dict)

    ROW_FIELDS = ("n", "t_n", "h_n", "h_bound", "level", "n_triangles", "refined", "capped", "wall_s")


def _refine_for(state: PsgState, config: PsgConfig, n: int):
    """Refine uniformly until h_max <= bound(n) or the level cap is hit."""
    sched = config.schedule
    bound = mesh_bound(sched, config.rule, n)
    mesh = state.mesh
    refined = capped = False
    if sched.refine:
        while mesh.h_max > bound:
            if sched.max_level is not None and mesh.level >= sched.max_level:
                capped = True
                break
            mesh = uniform_mesh(mesh.level + 1)
            refined = True
    if refined:
        state = replace(state, u=prolong_p0(state.u, mesh))
        if state.average is not None:
            state.average.prolong(mesh)
    return state, bound, refined, capped


def psg_step(state: PsgState, config: PsgConfig):
    """One iteration from ``u^n`` to ``u^{n+1}``; returns ``(new_state, row)``."""
    t0 = time.perf_counter()
    n = state.n
    state, bound, refined, capped = _refine_for(state, config, n)
    t_n = step_size(config.rule, n)
    if state.average is not None and n >= config.window_start:
        state.average.add(state.u, t_n)
    realization = sample_realization(config.field_spec, state.rng)
    g = config.gradient_fn(config.problem, state.u, realization, config.solver)
    u_next = project_box(state.u - t_n * g, config.problem.u_a, config.problem.u_b)
    mesh = state.mesh
    row = {"n": n, "t_n": t_n, "h_n": mesh.h_max, "h_bound": bound, "level": mesh.level,
           "n_triangles": mesh.n_triangles, "refined": int(refined), "capped": int(capped),
           "wall_s": time.perf_counter() - t0}
    return replace(state, u=u_next, n=n + 1), row


def initial_state(config: PsgConfig, u0: Optional[P0Function] = None) -> PsgState:
    mesh = uniform_mesh(config.schedule.initial_level)
    u = P0Function.zeros(mesh) if u0 is None else prolong_p0(u0, mesh)
    avg = RunningAverage(mesh) if is_averaging(config.rule) else None
    return PsgState(u=u, n=1, rng=np.random.default_rng(config.seed), average=avg)


def run_psg(config: PsgConfig, u0: Optional[P0Function] = None,
            progress: Optional[Callable[[dict], None]] = None) -> RunRecord:
    """Run ``config.n_steps`` iterations starting from ``u0`` (default zero)."""
    state = initial_state(config, u0)
    rows, snaps = [], {}
    wanted = set(config.snapshots)
    for _ in range(config.n_steps):
        state, row = psg_step(state, config)
        rows.append(row)
        if row["n"] in wanted:
            snaps[row["n"]] = state.u
        if progress is not None:
            progress(row)
    averaged = state.average.value() if state.average is not None else None
    return RunRecord(rows=rows, final=state.u, averaged=averaged, config=config.echo(), snapshots=snaps)
