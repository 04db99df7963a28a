"""Coefficient vectors bound to a triangulation.

``P0Function`` holds one value per triangle (controls, interpolated
coefficients), ``P1Function`` one value per vertex (states, adjoints).
Both are immutable value objects; arithmetic returns new instances.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TriMesh


@dataclass(frozen=True, eq=False)
class P0Function:
    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.mesh.n_triangles,):
            raise ValueError(
                f"P0Function needs {self.mesh.n_triangles} cell values, got shape {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, mesh: TriMesh, value: float) -> "P0Function":
        return cls(mesh, np.full(mesh.n_triangles, float(value)))

    @classmethod
    def zeros(cls, mesh: TriMesh) -> "P0Function":
        return cls.constant(mesh, 0.0)

    def inner(self, other: "P0Function") -> float:
        """L2(D) inner product, exact for piecewise constants."""
        _check_same_mesh(self, other)
        return float(np.dot(self.mesh.areas * self.values, other.values))

    def l2_norm(self) -> float:
        return float(np.sqrt(np.dot(self.mesh.areas, self.values**2)))

    def __add__(self, other):
        if isinstance(other, P0Function):
            _check_same_mesh(self, other)
            return P0Function(self.mesh, self.values + other.values)
        return P0Function(self.mesh, self.values + other)

    def __sub__(self, other):
        if isinstance(other, P0Function):
            _check_same_mesh(self, other)
            return P0Function(self.mesh, self.values - other.values)
        return P0Function(self.mesh, self.values - other)

    def __mul__(self, scalar):
        return P0Function(self.mesh, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return P0Function(self.mesh, -self.values)


@dataclass(frozen=True, eq=False)
class P1Function:
    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.mesh.n_vertices,):
            raise ValueError(
                f"P1Function needs {self.mesh.n_vertices} nodal values, got shape {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def at_barycentric(self, bary: np.ndarray) -> np.ndarray:
        """Values at points given in barycentric coordinates on every triangle.

        ``bary`` has shape (q, 3); the result has shape (n_triangles, q).
        """
        return self.values[self.mesh.triangles] @ np.asarray(bary).T

    def l2_norm(self) -> float:
        # exact: int_T v^2 = |T|/12 (sum v_i^2 + (sum v_i)^2)
        v = self.values[self.mesh.triangles]
        per_cell = (v**2).sum(axis=1) + v.sum(axis=1) ** 2
        return float(np.sqrt(np.dot(self.mesh.areas, per_cell) / 12.0))


def _check_same_mesh(a, b):
    if a.mesh is not b.mesh:
        raise ValueError("functions live on different meshes")
