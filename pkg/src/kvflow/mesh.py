"""Structured triangulations of the unit square.

Vertices, triangles and edges are stored as numpy index arrays. A mesh is
never modified after construction; refinement returns a new mesh.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GEOM_TOL = 1e-12
BOUNDARY_TOL = 1e-14


class MeshError(ValueError):
    """Invalid discretization request."""


class DomainError(ValueError):
    """Point lies outside the unit square."""


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray  # (V, 2)
    triangles: np.ndarray  # (T, 3), counter-clockwise
    edges: np.ndarray  # (E, 2), sorted pairs in lexicographic order
    triangle_edges: np.ndarray  # (T, 3), local edge i is opposite local vertex i
    boundary_vertex_flags: np.ndarray
    boundary_edge_flags: np.ndarray
    h: float
    _buckets: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    @property
    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def dump(self, path: str | Path) -> None:
        """Write the debug text format: ``V E T``, vertex lines, triangle lines."""
        lines = [f"{self.n_vertices} {self.n_edges} {self.n_triangles}"]
        for (x, y), flag in zip(self.vertices, self.boundary_vertex_flags):
            lines.append(f"{float(x)!r} {float(y)!r} {int(flag)}")
        for i, j, k in self.triangles:
            lines.append(f"{i} {j} {k}")
        Path(path).write_text("\n".join(lines) + "\n")


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0 = vertices[triangles[:, 0]]
    d1 = vertices[triangles[:, 1]] - p0
    d2 = vertices[triangles[:, 2]] - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _from_triangles(vertices: np.ndarray, triangles: np.ndarray, h: float) -> TriangleMesh:
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    # local edge i joins the two vertices other than vertex i
    local = triangles[:, [[1, 2], [2, 0], [0, 1]]]
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    triangle_edges = inverse.reshape(-1, 3)
    if np.any(counts > 2):
        raise MeshError("non-manifold edge: shared by more than two triangles")
    boundary_edges = counts == 1
    boundary_vertices = np.zeros(len(vertices), dtype=bool)
    boundary_vertices[edges[boundary_edges].ravel()] = True
    vertices = np.ascontiguousarray(vertices, dtype=float)
    vertices.setflags(write=False)
    triangles.setflags(write=False)
    return TriangleMesh(
        vertices=vertices,
        triangles=triangles,
        edges=edges,
        triangle_edges=triangle_edges,
        boundary_vertex_flags=boundary_vertices,
        boundary_edge_flags=boundary_edges,
        h=float(h),
    )


def build_structured(n: int) -> TriangleMesh:
    """n x n grid of squares, each cut along its lower-left to upper-right diagonal."""
    if int(n) != n or n < 1:
        raise MeshError(f"number of divisions must be a positive integer, got {n!r}")
    n = int(n)
    s = np.arange(n + 1) / n
    X, Y = np.meshgrid(s, s)  # vertex index j*(n+1)+i sits at (s[i], s[j])
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return _from_triangles(vertices, triangles, 1.0 / n)


def refine_uniform(mesh: TriangleMesh) -> TriangleMesh:
    """Split every triangle into four through its edge midpoints."""
    V = mesh.n_vertices
    vertices = np.vstack([mesh.vertices, mesh.edge_midpoints])
    v0, v1, v2 = mesh.triangles.T
    m0, m1, m2 = (V + mesh.triangle_edges).T
    children = np.stack(
        [
            np.column_stack([v0, m2, m1]),
            np.column_stack([m2, v1, m0]),
            np.column_stack([m1, m0, v2]),
            np.column_stack([m0, m1, m2]),
        ],
        axis=1,
    ).reshape(-1, 3)
    return _from_triangles(vertices, children, mesh.h / 2)


def barycentric(mesh: TriangleMesh, tri: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of ``points[i]`` with respect to triangle ``tri[i]``."""
    P = mesh.vertices[mesh.triangles[tri]]  # (N, 3, 2)
    d1 = P[:, 1] - P[:, 0]
    d2 = P[:, 2] - P[:, 0]
    r = points - P[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def _check_in_domain(points: np.ndarray) -> None:
    bad = np.any((points < -GEOM_TOL) | (points > 1 + GEOM_TOL), axis=1)
    if np.any(bad):
        raise DomainError(f"point {tuple(points[np.argmax(bad)])} is outside the unit square")


def _clean(lam: np.ndarray) -> np.ndarray:
    lam = np.clip(lam, 0.0, None)
    return lam / lam.sum(axis=1, keepdims=True)


def locate_point(mesh: TriangleMesh, p) -> tuple[int, np.ndarray]:
    """Lowest-index triangle containing ``p`` and the barycentric coordinates of ``p`` in it."""
    p = np.asarray(p, dtype=float).reshape(1, 2)
    _check_in_domain(p)
    T = mesh.n_triangles
    lam = barycentric(mesh, np.arange(T), np.repeat(p, T, axis=0))
    hits = np.flatnonzero(np.all(lam >= -GEOM_TOL, axis=1))
    if len(hits) == 0:
        raise DomainError(f"no triangle contains {tuple(p[0])}")
    t = int(hits[0])
    return t, _clean(lam[t : t + 1])[0]


def _bucket_index(mesh: TriangleMesh):
    if "grid" in mesh._buckets:
        return mesh._buckets["grid"]
    m = max(1, int(np.ceil(np.sqrt(mesh.n_triangles / 2))))
    P = mesh.vertices[mesh.triangles]
    lo = np.clip(np.floor((P.min(axis=1) - GEOM_TOL) * m).astype(int), 0, m - 1)
    hi = np.clip(np.floor((P.max(axis=1) + GEOM_TOL) * m).astype(int), 0, m - 1)
    cells: list[list[int]] = [[] for _ in range(m * m)]
    for t in range(mesh.n_triangles):
        for cy in range(lo[t, 1], hi[t, 1] + 1):
            for cx in range(lo[t, 0], hi[t, 0] + 1):
                cells[cy * m + cx].append(t)
    width = max(len(c) for c in cells)
    table = np.full((m * m, width), -1, dtype=np.int64)
    for c, members in enumerate(cells):
        table[c, : len(members)] = members  # ascending: first hit is the lowest index
    mesh._buckets["grid"] = (m, table)
    return m, table


def locate_points(mesh: TriangleMesh, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`locate_point` using a uniform bucket grid.

    Returns triangle indices (N,) and barycentric coordinates (N, 3), with the
    same lowest-index tie-break as the scalar version.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    _check_in_domain(points)
    m, table = _bucket_index(mesh)
    cell = np.clip(np.floor(points * m).astype(int), 0, m - 1)
    cand = table[cell[:, 1] * m + cell[:, 0]]  # (N, W)
    N, W = cand.shape
    lam = barycentric(
        mesh, np.where(cand >= 0, cand, 0).ravel(), np.repeat(points, W, axis=0)
    ).reshape(N, W, 3)
    ok = np.all(lam >= -GEOM_TOL, axis=2) & (cand >= 0)
    if not np.all(ok.any(axis=1)):
        bad = np.flatnonzero(~ok.any(axis=1))[0]
        raise DomainError(f"no triangle contains {tuple(points[bad])}")
    first = np.argmax(ok, axis=1)
    rows = np.arange(N)
    return cand[rows, first], _clean(lam[rows, first])
