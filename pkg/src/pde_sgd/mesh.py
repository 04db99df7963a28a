"""Nested triangulations of the unit square refined by newest vertex bisection.

Every triangle stores its vertices with the newest vertex first, so the
refinement edge of ``(v0, v1, v2)`` is ``v1-v2``.  A uniform refinement pass
bisects every triangle twice, giving four similar children and exactly
halving the mesh size.

Examples
--------
>>> m = refine_uniform(refine_uniform(unit_square_initial()))
>>> m.n_triangles, round(m.h_max, 5)
(128, 0.17678)
"""
from __future__ import annotations

from functools import cached_property
from typing import Optional

import numpy as np

__all__ = [
    "TriMesh",
    "unit_square_initial",
    "refine_uniform",
    "uniform_mesh",
    "prolong_p0",
    "ancestor_map",
    "dump_mesh",
    "parse_mesh_dump",
]


class TriMesh:
    """Immutable conforming triangulation with refinement genealogy.

    Parameters
    ----------
    vertices : (nv, 2) array
    triangles : (nt, 3) int array, newest vertex in column 0
    level : refinement generation (0 for the initial mesh)
    parent_of : (nt,) int array indexing the triangles of ``parent``
    parent : the mesh this one was refined from
    """

    def __init__(self, vertices, triangles, level=0, parent_of=None, parent=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.level = int(level)
        self.parent = parent
        self.parent_of = None if parent_of is None else np.asarray(parent_of, dtype=np.int64)
        if (self.parent_of is None) != (self.parent is None):
            raise ValueError("parent and parent_of must be given together")
        for arr in (self.vertices, self.triangles, self.parent_of):
            if arr is not None:
                arr.setflags(write=False)
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        tol = 1e-14
        self.boundary = (np.abs(x) < tol) | (np.abs(x - 1) < tol) | (np.abs(y) < tol) | (np.abs(y - 1) < tol)
        self.boundary.setflags(write=False)
        if np.any(self.areas <= 0):
            raise ValueError("mesh contains triangles with non-positive area or wrong orientation")
        self.h_max = float(self.diameters.max())

    def __repr__(self):
        return (f"TriMesh(level={self.level}, n_vertices={self.n_vertices}, "
                f"n_triangles={self.n_triangles}, h_max={self.h_max:.6g})")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def corners(self) -> np.ndarray:
        """(nt, 3, 2) vertex coordinates per triangle."""
        return self.vertices[self.triangles]

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.corners
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def diameters(self) -> np.ndarray:
        p = self.corners
        lengths = np.stack([
            np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
            np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 1], axis=1),
        ], axis=1)
        return lengths.max(axis=1)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @cached_property
    def gradients(self) -> np.ndarray:
        """(nt, 3, 2) gradients of the three barycentric (hat) functions."""
        p = self.corners
        # grad lambda_i = rot90(p_{i+2} - p_{i+1}) / (2 |T|)
        opp = np.roll(p, -2, axis=1) - np.roll(p, -1, axis=1)
        rot = np.stack([-opp[..., 1], opp[..., 0]], axis=-1)
        return rot / (2.0 * self.areas)[:, None, None]

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    def edges(self):
        """Unique undirected edges and, per edge, the number of incident triangles."""
        t = self.triangles
        e = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]])
        e.sort(axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq, counts

    def is_conforming(self) -> bool:
        """Every edge is shared by two triangles or is a single edge lying on the boundary."""
        edges, counts = self.edges()
        if np.any(counts > 2):
            return False
        single = edges[counts == 1]
        on_bdry = self.boundary[single[:, 0]] & self.boundary[single[:, 1]]
        if not np.all(on_bdry):
            return False
        # both endpoints on the boundary is not enough: the edge must lie on one side
        a, b = self.vertices[single[:, 0]], self.vertices[single[:, 1]]
        same_side = ((a[:, 0] == b[:, 0]) & np.isin(a[:, 0], (0.0, 1.0))) | \
                    ((a[:, 1] == b[:, 1]) & np.isin(a[:, 1], (0.0, 1.0)))
        return bool(np.all(same_side))

    def is_descendant_of(self, other: "TriMesh") -> bool:
        try:
            ancestor_map(self, other)
        except ValueError:
            return False
        return True


def unit_square_initial() -> TriMesh:
    """Eight congruent right triangles on the 3x3 grid, diagonals meeting at the center."""
    g = np.array([0.0, 0.5, 1.0])
    vertices = np.array([(x, y) for y in g for x in g])
    # newest vertex = right-angle vertex, so the refinement edge is the hypotenuse
    triangles = np.array([
        (1, 4, 0), (3, 0, 4),   # lower left cell, diagonal 0-4
        (1, 2, 4), (5, 4, 2),   # lower right cell, diagonal 2-4
        (3, 4, 6), (7, 6, 4),   # upper left cell, diagonal 6-4
        (5, 8, 4), (7, 4, 8),   # upper right cell, diagonal 4-8
    ])
    return TriMesh(vertices, triangles, level=0)


def _bisect_all(vertices, triangles):
    """Bisect every triangle across its refinement edge.

    Children of triangle ``i`` are ``2i`` and ``2i + 1``.
    """
    nv = vertices.shape[0]
    v0, v1, v2 = triangles[:, 0], triangles[:, 1], triangles[:, 2]
    ref_edges = np.sort(np.stack([v1, v2], axis=1), axis=1)
    uniq, inverse = np.unique(ref_edges, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    midpoints = 0.5 * (vertices[uniq[:, 0]] + vertices[uniq[:, 1]])
    m = nv + inverse
    children = np.empty((2 * triangles.shape[0], 3), dtype=np.int64)
    children[0::2] = np.stack([m, v0, v1], axis=1)
    children[1::2] = np.stack([m, v2, v0], axis=1)
    return np.vstack([vertices, midpoints]), children


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """One uniform pass: two newest-vertex bisections of every triangle.

    Children of coarse triangle ``i`` are fine triangles ``4i .. 4i + 3``.
    """
    vertices, triangles = _bisect_all(mesh.vertices, mesh.triangles)
    vertices, triangles = _bisect_all(vertices, triangles)
    parent_of = np.arange(triangles.shape[0]) // 4
    return TriMesh(vertices, triangles, level=mesh.level + 1, parent_of=parent_of, parent=mesh)


_HIERARCHY: list[TriMesh] = []


def uniform_mesh(level: int) -> TriMesh:
    """Shared, cached member of the uniform hierarchy rooted at ``unit_square_initial``."""
    if level < 0:
        raise ValueError("level must be non-negative")
    if not _HIERARCHY:
        _HIERARCHY.append(unit_square_initial())
    while len(_HIERARCHY) <= level:
        _HIERARCHY.append(refine_uniform(_HIERARCHY[-1]))
    return _HIERARCHY[level]


def _same_mesh(a: TriMesh, b: TriMesh) -> bool:
    if a is b:
        return True
    return (a.level == b.level
            and a.vertices.shape == b.vertices.shape
            and a.triangles.shape == b.triangles.shape
            and np.array_equal(a.vertices, b.vertices)
            and np.array_equal(a.triangles, b.triangles))


def ancestor_map(fine: TriMesh, coarse: TriMesh) -> np.ndarray:
    """Index of the ancestor in ``coarse`` for every triangle of ``fine``.

    Raises ``ValueError`` when ``fine`` was not refined from ``coarse``.
    """
    idx = np.arange(fine.n_triangles)
    m: Optional[TriMesh] = fine
    while m is not None and m.level > coarse.level:
        if m.parent is None:
            break
        idx = m.parent_of[idx]
        m = m.parent
    if m is None or not _same_mesh(m, coarse):
        raise ValueError(f"{fine!r} is not a refinement of {coarse!r}")
    return idx


def prolong_p0(values, fine: TriMesh):
    """Inject a piecewise-constant function into a nested refinement.

    Every fine triangle takes the value of its coarse ancestor; the L2 norm
    is preserved exactly.
    """
    if values.mesh is fine:
        return values
    idx = ancestor_map(fine, values.mesh)
    return type(values)(fine, values.values[idx])


def dump_mesh(mesh: TriMesh) -> str:
    """Plain-text dump: ``v x y boundary_flag`` rows, then ``t i j k level parent`` rows."""
    lines = []
    for (x, y), b in zip(mesh.vertices, mesh.boundary):
        lines.append(f"v {float(x)!r} {float(y)!r} {int(b)}")
    parents = mesh.parent_of if mesh.parent_of is not None else np.full(mesh.n_triangles, -1)
    for (i, j, k), p in zip(mesh.triangles, parents):
        lines.append(f"t {i} {j} {k} {mesh.level} {p}")
    return "\n".join(lines) + "\n"


def parse_mesh_dump(text: str) -> TriMesh:
    """Rebuild a mesh from ``dump_mesh`` output.

    The result is matched against the cached uniform hierarchy; when it is a
    member, the shared hierarchy mesh (with its full genealogy) is returned.
    """
    verts, tris, level = [], [], 0
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                verts.append((float(parts[1]), float(parts[2])))
            elif parts[0] == "t":
                tris.append((int(parts[1]), int(parts[2]), int(parts[3])))
                level = int(parts[4])
            else:
                raise ValueError(f"unknown record type {parts[0]!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"mesh dump line {lineno}: {exc}") from None
    mesh = TriMesh(np.array(verts), np.array(tris), level=level)
    candidate = uniform_mesh(level)
    if _same_mesh(candidate, mesh):
        return candidate
    return mesh
