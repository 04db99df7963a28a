"""P1 finite elements for -div(a grad y) = f with homogeneous Dirichlet data.

Controls are piecewise constant (:class:`~pde_sgd.spaces.P0Function`),
states and adjoints piecewise linear (:class:`~pde_sgd.spaces.P1Function`).
The coefficient is interpolated elementwise at the centroids, so every
element integral of the stiffness matrix is exact.  Integrands containing
analytic functions use a fixed symmetric 7-point rule of degree 5.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import TriMesh
from .spaces import P0Function, P1Function

__all__ = [
    "FemError", "SolverError", "Solver", "SparseSystem", "TrackingProblem",
    "QUAD_BARY", "QUAD_WEIGHTS", "quadrature_points",
    "interpolate_coefficient", "assemble_stiffness", "load_from_p0", "load_from_function",
    "conjugate_gradient", "solve_spd", "solve_state", "solve_adjoint",
    "l2_project_p1_to_p0", "objective_sample", "sample_gradient", "l2_error",
    "strongly_convex_problem", "convex_problem",
]


class FemError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


# degree-5 rule (Radon / Strang-Fix), barycentric points and weights summing to 1
_s15 = math.sqrt(15.0)
_a1, _a2 = (6 - _s15) / 21, (6 + _s15) / 21
_w1, _w2 = (155 - _s15) / 1200, (155 + _s15) / 1200
QUAD_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [1 - 2 * _a1, _a1, _a1], [_a1, 1 - 2 * _a1, _a1], [_a1, _a1, 1 - 2 * _a1],
    [1 - 2 * _a2, _a2, _a2], [_a2, 1 - 2 * _a2, _a2], [_a2, _a2, 1 - 2 * _a2],
])
QUAD_WEIGHTS = np.array([9 / 40, _w1, _w1, _w1, _w2, _w2, _w2])


class _MeshData:
    """Per-mesh assembly structures, built once and reused for every coefficient."""

    def __init__(self, mesh: TriMesh):
        tri = mesh.triangles
        self.interior = mesh.interior_vertices
        n = self.interior.size
        dof = np.full(mesh.n_vertices, -1, dtype=np.int64)
        dof[self.interior] = np.arange(n)
        self.dof = dof
        G = mesh.gradients
        rows, cols, cells, base = [], [], [], []
        for a in range(3):
            for b in range(3):
                r, c = dof[tri[:, a]], dof[tri[:, b]]
                keep = (r >= 0) & (c >= 0)
                rows.append(r[keep])
                cols.append(c[keep])
                cells.append(np.flatnonzero(keep))
                base.append((mesh.areas * np.einsum("ij,ij->i", G[:, a], G[:, b]))[keep])
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        self.cells = np.concatenate(cells)
        self.base = np.concatenate(base)
        keys = rows * max(n, 1) + cols
        uniq, inv = np.unique(keys, return_inverse=True)
        self.scatter = inv.reshape(-1)
        self.nnz = uniq.size
        self.indices = (uniq % max(n, 1)).astype(np.int32)
        urows = uniq // max(n, 1)
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(urows, minlength=n))]).astype(np.int32)
        self.n = n
        self.quad_points = np.einsum("qk,tkd->tqd", QUAD_BARY, mesh.corners)


_MESH_DATA: "weakref.WeakKeyDictionary[TriMesh, _MeshData]" = weakref.WeakKeyDictionary()


def _data(mesh: TriMesh) -> _MeshData:
    d = _MESH_DATA.get(mesh)
    if d is None:
        d = _MESH_DATA[mesh] = _MeshData(mesh)
    return d


def quadrature_points(mesh: TriMesh) -> np.ndarray:
    """(nt, 7, 2) physical quadrature points."""
    return _data(mesh).quad_points


def _eval_on_quad(mesh: TriMesh, f: Callable) -> np.ndarray:
    pts = quadrature_points(mesh)
    vals = np.asarray(f(pts.reshape(-1, 2)), dtype=float).reshape(pts.shape[:2])
    if not np.all(np.isfinite(vals)):
        raise FemError("non-finite function value at a quadrature point")
    return vals


def integrate(mesh: TriMesh, f: Callable) -> float:
    """Integral of an analytic function over D with the 7-point rule."""
    return float(np.dot(mesh.areas, _eval_on_quad(mesh, f) @ QUAD_WEIGHTS))


# -- coefficient and assembly -------------------------------------------------

def interpolate_coefficient(field, mesh: TriMesh) -> P0Function:
    """Elementwise-constant interpolant a(centroid(T)).

    ``field`` is a :class:`~pde_sgd.randfield.FieldRealization`, any callable
    mapping (n, 2) points to values, or a number.
    """
    spec = getattr(field, "spec", None)
    if spec is not None:
        vals = spec.link(spec.a0 + spec.basis_on(mesh) @ field.xi)
    elif callable(field):
        vals = np.asarray(field(mesh.centroids), dtype=float)
    else:
        vals = np.full(mesh.n_triangles, float(field))
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
        raise FemError("coefficient must be finite and positive")
    return P0Function(mesh, vals)


def assemble_stiffness(mesh: TriMesh, a_h: P0Function) -> sp.csr_matrix:
    """Stiffness matrix on the interior vertices, sum_T a_T |T| grad phi_i . grad phi_j."""
    if a_h.mesh is not mesh:
        raise FemError("coefficient lives on a different mesh")
    if np.any(a_h.values <= 0):
        raise FemError("coefficient must be positive")
    d = _data(mesh)
    data = np.bincount(d.scatter, weights=a_h.values[d.cells] * d.base, minlength=d.nnz)
    return sp.csr_matrix((data, d.indices, d.indptr), shape=(d.n, d.n))


def _scatter_vertices(mesh: TriMesh, local: np.ndarray) -> np.ndarray:
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)


def load_from_p0(mesh: TriMesh, u_h: P0Function, full: bool = False) -> np.ndarray:
    """(u_h, phi_i) exactly: each triangle gives u_T |T| / 3 to its vertices."""
    if u_h.mesh is not mesh:
        raise FemError("control lives on a different mesh")
    per = np.repeat((u_h.values * mesh.areas / 3.0)[:, None], 3, axis=1)
    vec = _scatter_vertices(mesh, per)
    return vec if full else vec[mesh.interior_vertices]


def load_from_function(mesh: TriMesh, f: Callable, full: bool = False) -> np.ndarray:
    """(f, phi_i) with the 7-point rule on every triangle."""
    vals = _eval_on_quad(mesh, f)
    local = (vals * QUAD_WEIGHTS) @ QUAD_BARY * mesh.areas[:, None]
    vec = _scatter_vertices(mesh, local)
    return vec if full else vec[mesh.interior_vertices]


def mass_times(mesh: TriMesh, y: np.ndarray, full: bool = False) -> np.ndarray:
    """(y_h, phi_i) for a P1 nodal vector, exact."""
    v = y[mesh.triangles]
    local = (v + v.sum(axis=1, keepdims=True)) * (mesh.areas / 12.0)[:, None]
    vec = _scatter_vertices(mesh, local)
    return vec if full else vec[mesh.interior_vertices]


# -- linear solves ------------------------------------------------------------

@dataclass(frozen=True)
class Solver:
    """Linear solver choice: Jacobi-preconditioned CG (default) or sparse LU."""
    method: str = "cg"
    tol: float = 1e-10

    def __post_init__(self):
        if self.method not in ("cg", "direct"):
            raise ValueError(f"unknown solver method {self.method!r}")


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    mesh: TriMesh
    interior: np.ndarray = field(init=False)

    def __post_init__(self):
        self.interior = self.mesh.interior_vertices


def conjugate_gradient(A, b, tol: float = 1e-10, maxiter: Optional[int] = None,
                       precondition: bool = True):
    """Solve ``A x = b`` for SPD ``A`` until ``|b - A x| <= tol |b|``.

    Returns ``(x, iterations)``; raises :class:`SolverError` past ``maxiter``
    (default ``10 * n``).
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    maxiter = 10 * max(n, 1) if maxiter is None else maxiter
    x = np.zeros(n)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x, 0
    target = tol * bnorm
    dinv = 1.0 / A.diagonal() if precondition else np.ones(n)
    r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    for k in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= target:
            # the recursive residual can drift from the true one
            r = b - A @ x
            if np.linalg.norm(r) <= target:
                return x, k
            z = dinv * r
            p = z.copy()
            rz = float(r @ z)
            continue
        z = dinv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not reach tol={tol:g} within {maxiter} iterations")


class _Factor:
    """Solve handle for one matrix: sparse LU or CG, reused for several right-hand sides."""

    def __init__(self, matrix, solver: Solver):
        self.matrix = matrix
        self.solver = solver
        self._lu = None
        if solver.method == "direct" and matrix.shape[0] > 0:
            self._lu = splu(matrix.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                            options={"SymmetricMode": True})

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if rhs.shape[0] == 0:
            return np.zeros_like(rhs)
        if self._lu is not None:
            return self._lu.solve(rhs)
        if rhs.ndim == 2:
            return np.column_stack([self.solve(rhs[:, i]) for i in range(rhs.shape[1])])
        x, _ = conjugate_gradient(self.matrix, rhs, tol=self.solver.tol)
        return x


def _to_p1(mesh: TriMesh, interior_values: np.ndarray) -> P1Function:
    full = np.zeros(mesh.n_vertices)
    full[mesh.interior_vertices] = interior_values
    return P1Function(mesh, full)


def solve_spd(system: SparseSystem, tol: float = 1e-10, method: str = "cg") -> P1Function:
    """Solve the reduced system and return a P1Function with zero boundary values."""
    x = _Factor(system.matrix, Solver(method, tol)).solve(np.asarray(system.rhs, dtype=float))
    return _to_p1(system.mesh, x)


# -- model problem ------------------------------------------------------------

@dataclass(eq=False)
class TrackingProblem:
    """min E[1/2 |y - y_d|^2] + lam/2 |u|^2 with -div(a grad y) = u (+ e_d), u_a <= u <= u_b."""
    y_d: Callable
    lam: float
    e_d: Optional[Callable] = None
    u_a: float = -1.0
    u_b: float = 1.0
    y_d_norm: Optional[float] = None
    e_d_norm: float = 0.0
    name: str = "custom"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.u_a < self.u_b:
            raise FemError("need u_a < u_b")

    def _cached(self, key, mesh, build):
        k = (key, id(mesh))
        hit = self._cache.get(k)
        if hit is None or hit[0] is not mesh:
            hit = (mesh, build())
            self._cache[k] = hit
        return hit[1]

    def y_d_load(self, mesh):
        return self._cached("yd_load", mesh, lambda: load_from_function(mesh, self.y_d, full=True))

    def e_d_load(self, mesh):
        return self._cached("ed_load", mesh, lambda: load_from_function(mesh, self.e_d))

    def y_d_quad(self, mesh):
        return self._cached("yd_quad", mesh, lambda: _eval_on_quad(mesh, self.y_d))

    def state_rhs(self, u_h: P0Function) -> np.ndarray:
        rhs = load_from_p0(u_h.mesh, u_h)
        if self.e_d is not None:
            rhs = rhs + self.e_d_load(u_h.mesh)
        return rhs

    def adjoint_rhs(self, y_h: P1Function) -> np.ndarray:
        mesh = y_h.mesh
        return (self.y_d_load(mesh) - mass_times(mesh, y_h.values, full=True))[mesh.interior_vertices]

    def tracking_term(self, y_values: np.ndarray, mesh: TriMesh) -> np.ndarray:
        """1/2 |y_h - y_d|^2 for one or several nodal vectors (columns)."""
        y = y_values[mesh.triangles]  # (nt, 3) or (nt, 3, k)
        yq = np.einsum("qa,ta...->tq...", QUAD_BARY, y)
        diff = yq - (self.y_d_quad(mesh) if y.ndim == 2 else self.y_d_quad(mesh)[..., None])
        per_cell = np.einsum("q,tq...->t...", QUAD_WEIGHTS, diff**2)
        return 0.5 * np.einsum("t,t...->...", mesh.areas, per_cell)


def strongly_convex_problem(lam: float) -> TrackingProblem:
    """y_d = -(8 pi^2 + 1/(8 pi^2 lam)) sin(2 pi x1) sin(2 pi x2), no source term."""
    if lam <= 0:
        raise FemError("the strongly convex problem needs lam > 0")
    amp = -(8 * math.pi**2 + 1.0 / (8 * math.pi**2 * lam))

    def y_d(x):
        return amp * np.sin(2 * np.pi * x[:, 0]) * np.sin(2 * np.pi * x[:, 1])

    return TrackingProblem(y_d, lam, None, y_d_norm=abs(amp) / 2.0, name="strongly-convex")


def convex_problem() -> TrackingProblem:
    """lam = 0 with source e_d in the state equation."""

    def y_d(x):
        s1 = np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])
        s2 = np.sin(2 * np.pi * x[:, 0]) * np.sin(2 * np.pi * x[:, 1])
        return s1 + 3.0 * s2

    def e_d(x):
        s1 = np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])
        s2 = np.sin(2 * np.pi * x[:, 0]) * np.sin(2 * np.pi * x[:, 1])
        return 6 * np.pi**2 * s1 - np.sign(s2)

    return TrackingProblem(y_d, 0.0, e_d, y_d_norm=math.sqrt(2.5),
                           e_d_norm=math.sqrt(1 + 9 * math.pi**4), name="convex")


# -- state, adjoint, gradient, objective ----------------------------------------

def solve_state(mesh: TriMesh, field, u_h: P0Function, problem: Optional[TrackingProblem] = None,
                solver: Solver = Solver(), matrix=None) -> P1Function:
    """b(y_h, v) = (u_h + e_d, v); ``e_d`` comes from ``problem`` when given."""
    A = assemble_stiffness(mesh, interpolate_coefficient(field, mesh)) if matrix is None else matrix
    rhs = problem.state_rhs(u_h) if problem is not None else load_from_p0(mesh, u_h)
    return _to_p1(mesh, _Factor(A, solver).solve(rhs))


def solve_adjoint(mesh: TriMesh, field, y_h: P1Function, problem: TrackingProblem,
                  solver: Solver = Solver(), matrix=None) -> P1Function:
    """b(v, p_h) = (y_d - y_h, v)."""
    A = assemble_stiffness(mesh, interpolate_coefficient(field, mesh)) if matrix is None else matrix
    return _to_p1(mesh, _Factor(A, solver).solve(problem.adjoint_rhs(y_h)))


def l2_project_p1_to_p0(p_h: P1Function) -> P0Function:
    """Cell means of a P1 function (exact L2 projection onto P0)."""
    return P0Function(p_h.mesh, p_h.values[p_h.mesh.triangles].mean(axis=1))


@dataclass
class GradientSample:
    gradient: P0Function
    state: P1Function
    adjoint: P1Function


def sample_gradient(problem: TrackingProblem, u_h: P0Function, field,
                    solver: Solver = Solver()) -> GradientSample:
    """Stochastic gradient lam u_h - P_h p_h for one realization; one matrix serves both solves."""
    mesh = u_h.mesh
    A = assemble_stiffness(mesh, interpolate_coefficient(field, mesh))
    fac = _Factor(A, solver)
    y = _to_p1(mesh, fac.solve(problem.state_rhs(u_h)))
    p = _to_p1(mesh, fac.solve(problem.adjoint_rhs(y)))
    g = P0Function(mesh, problem.lam * u_h.values - l2_project_p1_to_p0(p).values)
    return GradientSample(g, y, p)


def objective_sample(u_h: P0Function, field, problem: TrackingProblem,
                     solver: Solver = Solver()) -> float:
    """J_h(u_h, xi) = 1/2 |y_h - y_d|^2 + lam/2 |u_h|^2."""
    y = solve_state(u_h.mesh, field, u_h, problem, solver)
    return float(problem.tracking_term(y.values, u_h.mesh)) + 0.5 * problem.lam * u_h.l2_norm() ** 2


def objective_samples(controls, fields, problem: TrackingProblem, solver: Solver = Solver()) -> np.ndarray:
    """J_h for every (field, control) pair on a common mesh, shape (len(fields), len(controls)).

    One assembly and factorization per field is shared by all controls, which
    gives common random numbers across controls for free.
    """
    mesh = controls[0].mesh
    if any(u.mesh is not mesh for u in controls):
        raise FemError("all controls must live on one mesh")
    U = np.column_stack([load_from_p0(mesh, u) for u in controls])
    if problem.e_d is not None:
        U = U + problem.e_d_load(mesh)[:, None]
    reg = np.array([0.5 * problem.lam * u.l2_norm() ** 2 for u in controls])
    out = np.empty((len(fields), len(controls)))
    Y = np.zeros((mesh.n_vertices, len(controls)))
    for i, f in enumerate(fields):
        A = assemble_stiffness(mesh, interpolate_coefficient(f, mesh))
        Y[mesh.interior_vertices] = _Factor(A, solver).solve(U)
        out[i] = problem.tracking_term(Y, mesh) + reg
    return out


def l2_error(y_h: P1Function, exact: Callable) -> float:
    """|y_h - exact|_{L2} with the 7-point rule."""
    mesh = y_h.mesh
    yq = y_h.at_barycentric(QUAD_BARY)
    diff = yq - _eval_on_quad(mesh, exact)
    return float(np.sqrt(np.dot(mesh.areas, diff**2 @ QUAD_WEIGHTS)))
