"""Reference-element machinery for the P2 velocity / P0 pressure pair."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .mesh import TriangleMesh, locate_point, locate_points


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (Q, 3) barycentric
    weights: np.ndarray  # (Q,), sum to 1/2
    exact_degree: int

    @property
    def xy(self) -> np.ndarray:
        """Points in reference coordinates (x, y) = (lambda_1, lambda_2)."""
        return self.points[:, 1:]


@lru_cache(maxsize=None)
def gauss_rule(degree: int) -> QuadratureRule:
    """Collapsed (Stroud conical product) Gauss rule on the reference triangle.

    Gauss-Jacobi in the collapsed direction absorbs the Jacobian ``1 - s`` so an
    ``m x m`` rule with ``m = ceil((degree + 1) / 2)`` is exact to ``degree``.
    """
    if int(degree) != degree or not 1 <= degree <= 10:
        raise ConfigurationError(f"quadrature degree must be in 1..10, got {degree!r}")
    m = (int(degree) + 2) // 2
    xs, ws = roots_jacobi(m, 1.0, 0.0)
    xr, wr = np.polynomial.legendre.leggauss(m)
    s = (1 + xs) / 2
    r = (1 + xr) / 2
    S, R = np.meshgrid(s, r, indexing="ij")
    x = S.ravel()
    y = ((1 - S) * R).ravel()
    w = np.outer(ws / 4, wr / 2).ravel()
    pts = np.column_stack([1 - x - y, x, y])
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(points=pts, weights=w, exact_degree=int(degree))


# local node order: 3 vertices, then midpoints of the edges opposite vertices 0, 1, 2
P2_NODES = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.5, 0.5],
        [0.5, 0.0, 0.5],
        [0.5, 0.5, 0.0],
    ]
)


def p2_basis(lam) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic Lagrange basis at barycentric point(s).

    Returns values ``(..., 6)`` and derivatives with respect to the three
    barycentric coordinates ``(..., 6, 3)``. Physical gradients follow by
    contracting with the gradients of the barycentric coordinates.
    """
    lam = np.asarray(lam, dtype=float)
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    vals = np.stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l1 * l2,
            4 * l2 * l0,
            4 * l0 * l1,
        ],
        axis=-1,
    )
    z = np.zeros_like(l0)
    d = np.stack(
        [
            np.stack([4 * l0 - 1, z, z], axis=-1),
            np.stack([z, 4 * l1 - 1, z], axis=-1),
            np.stack([z, z, 4 * l2 - 1], axis=-1),
            np.stack([z, 4 * l2, 4 * l1], axis=-1),
            np.stack([4 * l2, z, 4 * l0], axis=-1),
            np.stack([4 * l1, 4 * l0, z], axis=-1),
        ],
        axis=-2,
    )
    return vals, d


@dataclass(frozen=True, eq=False)
class DofLayout:
    """Global numbering for the P2 velocity and P0 pressure spaces.

    Scalar P2 node ``s`` is vertex ``s`` for ``s < V`` and the midpoint of edge
    ``s - V`` otherwise. Vector DOFs interleave components: ``2 * s + c``.
    """

    n_velocity_scalar: int
    n_velocity: int
    n_pressure: int
    cell_dofs: np.ndarray  # (T, 6) scalar P2 nodes per triangle
    node_coords: np.ndarray  # (n_velocity_scalar, 2)
    boundary_scalar_dofs: np.ndarray
    velocity_boundary_dofs: np.ndarray

    @property
    def cell_vector_dofs(self) -> np.ndarray:
        """(T, 12) vector DOFs, ordered (x0, y0, x1, y1, ...)."""
        c = self.cell_dofs
        return np.stack([2 * c, 2 * c + 1], axis=-1).reshape(len(c), 12)

    @property
    def free_velocity_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_velocity, dtype=bool)
        mask[self.velocity_boundary_dofs] = False
        return np.flatnonzero(mask)


def build_dof_layout(mesh: TriangleMesh) -> DofLayout:
    V, E = mesh.n_vertices, mesh.n_edges
    cell_dofs = np.hstack([mesh.triangles, V + mesh.triangle_edges])
    coords = np.vstack([mesh.vertices, mesh.edge_midpoints])
    boundary = np.concatenate(
        [np.flatnonzero(mesh.boundary_vertex_flags), V + np.flatnonzero(mesh.boundary_edge_flags)]
    )
    vec_boundary = np.sort(np.concatenate([2 * boundary, 2 * boundary + 1]))
    for a in (cell_dofs, coords, boundary, vec_boundary):
        a.setflags(write=False)
    return DofLayout(
        n_velocity_scalar=V + E,
        n_velocity=2 * (V + E),
        n_pressure=mesh.n_triangles,
        cell_dofs=cell_dofs,
        node_coords=coords,
        boundary_scalar_dofs=boundary,
        velocity_boundary_dofs=vec_boundary,
    )


def barycentric_gradients(mesh: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-triangle gradients of the barycentric coordinates (T, 3, 2) and areas (T,)."""
    P = mesh.vertices[mesh.triangles]
    d1 = P[:, 1] - P[:, 0]
    d2 = P[:, 2] - P[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    grads = np.stack([-g1 - g2, g1, g2], axis=1)
    return grads, 0.5 * det


def quadrature_points(mesh: TriangleMesh, rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
    """Physical points (T, Q, 2) and weights (T, Q) including the Jacobian."""
    P = mesh.vertices[mesh.triangles]
    x = np.einsum("qi,tid->tqd", rule.points, P)
    area = mesh.areas
    return x, 2.0 * area[:, None] * rule.weights[None, :]


def interpolate(func, layout: DofLayout) -> np.ndarray:
    """Nodal P2 interpolant of ``func(x, y)``.

    A scalar-valued ``func`` gives scalar coefficients; one returning a pair of
    arrays gives interleaved vector coefficients.
    """
    x, y = layout.node_coords.T
    vals = func(x, y)
    if isinstance(vals, tuple | list) or np.ndim(vals) == 2:
        u, v = (np.broadcast_to(np.asarray(c, dtype=float), x.shape) for c in vals)
        return np.column_stack([u, v]).ravel()
    return np.broadcast_to(np.asarray(vals, dtype=float), x.shape).copy()


def _field_kind(coeffs: np.ndarray, layout: DofLayout) -> str:
    n = len(coeffs)
    if n == layout.n_velocity:
        return "vector"
    if n == layout.n_velocity_scalar:
        return "scalar"
    if n == layout.n_pressure:
        return "p0"
    raise ValueError(f"coefficient vector of length {n} does not match the DOF layout")


def evaluate_at(coeffs, mesh: TriangleMesh, layout: DofLayout, tri, lam, gradient: bool = False):
    """Evaluate a discrete field in triangles ``tri`` at barycentric points ``lam``.

    Vector fields give values (N, 2) and, with ``gradient``, Jacobians (N, 2, 2)
    with ``[..., c, d] = d u_c / d x_d``. Scalar P2 fields give (N,) and (N, 2).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    kind = _field_kind(coeffs, layout)
    tri = np.asarray(tri)
    if kind == "p0":
        val = coeffs[tri]
        return (val, np.zeros(val.shape + (2,))) if gradient else val
    phi, dphi = p2_basis(lam)
    nodes = layout.cell_dofs[tri]
    local = coeffs.reshape(-1, 2)[nodes] if kind == "vector" else coeffs[nodes]
    spec = "ni,nic->nc" if kind == "vector" else "ni,ni->n"
    val = np.einsum(spec, phi, local)
    if not gradient:
        return val
    lam_grads, _ = barycentric_gradients(mesh)
    G = np.einsum("nij,njd->nid", dphi, lam_grads[tri])
    spec = "nid,nic->ncd" if kind == "vector" else "nid,ni->nd"
    return val, np.einsum(spec, G, local)


def evaluate_field(coeffs, mesh: TriangleMesh, layout: DofLayout, p):
    """Value of a discrete field at a single point of the closed unit square."""
    t, lam = locate_point(mesh, p)
    val = evaluate_at(coeffs, mesh, layout, np.array([t]), lam[None, :])
    return val[0]


def evaluate_points(coeffs, mesh: TriangleMesh, layout: DofLayout, points, gradient: bool = False):
    tri, lam = locate_points(mesh, points)
    return evaluate_at(coeffs, mesh, layout, tri, lam, gradient=gradient)
