"""Assembly of the discrete forms on the P2 x P0 space.

Element kernels are evaluated for all triangles at once; global matrices are
compressed from triplets in element order. Vector matrices use interleaved
DOFs, so a componentwise form is ``kron(S, I2)`` of its scalar counterpart.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import DofLayout, barycentric_gradients, build_dof_layout, gauss_rule, p2_basis
from .linalg import SaddleSystem, coo_to_csr, to_csr
from .mesh import TriangleMesh

BILINEAR_DEGREE = 4
CONVECTION_DEGREE = 5
LOAD_DEGREE = 10


@dataclass(frozen=True)
class ElementData:
    """Basis values, physical gradients and weights at the quadrature points of every triangle."""

    phi: np.ndarray  # (Q, 6)
    grad: np.ndarray | None  # (T, Q, 6, 2)
    weights: np.ndarray  # (T, Q), Jacobian included
    points: np.ndarray  # (T, Q, 2)


def element_data(mesh: TriangleMesh, degree: int, gradients: bool = True) -> ElementData:
    rule = gauss_rule(degree)
    phi, dphi = p2_basis(rule.points)
    lam_grads, area = barycentric_gradients(mesh)
    grad = np.einsum("qij,tjd->tqid", dphi, lam_grads) if gradients else None
    weights = 2.0 * area[:, None] * rule.weights[None, :]
    points = np.einsum("qi,tid->tqd", rule.points, mesh.vertices[mesh.triangles])
    return ElementData(phi=phi, grad=grad, weights=weights, points=points)


def _scalar_to_vector(S: sp.spmatrix) -> sp.csr_matrix:
    return to_csr(sp.kron(S, sp.identity(2, format="csr"), format="csr"))


def _assemble_scalar(layout: DofLayout, local: np.ndarray) -> sp.csr_matrix:
    dofs = layout.cell_dofs
    rows = np.repeat(dofs[:, :, None], 6, axis=2)
    cols = np.repeat(dofs[:, None, :], 6, axis=1)
    n = layout.n_velocity_scalar
    return coo_to_csr(rows, cols, local, (n, n))


def scalar_mass(mesh: TriangleMesh, layout: DofLayout) -> sp.csr_matrix:
    ed = element_data(mesh, BILINEAR_DEGREE)
    local = np.einsum("tq,qi,qj->tij", ed.weights, ed.phi, ed.phi)
    return _assemble_scalar(layout, local)


def scalar_stiffness(mesh: TriangleMesh, layout: DofLayout) -> sp.csr_matrix:
    ed = element_data(mesh, BILINEAR_DEGREE)
    local = np.einsum("tq,tqid,tqjd->tij", ed.weights, ed.grad, ed.grad)
    return _assemble_scalar(layout, local)


def assemble_mass(mesh: TriangleMesh, layout: DofLayout) -> sp.csr_matrix:
    return _scalar_to_vector(scalar_mass(mesh, layout))


def assemble_stiffness(mesh: TriangleMesh, layout: DofLayout) -> sp.csr_matrix:
    return _scalar_to_vector(scalar_stiffness(mesh, layout))


def assemble_divergence(mesh: TriangleMesh, layout: DofLayout) -> sp.csr_matrix:
    """Rows are triangles, columns vector velocity DOFs: ``B[K, v] = (1_K, div v)``."""
    ed = element_data(mesh, BILINEAR_DEGREE)
    local = np.einsum("tq,tqid->tid", ed.weights, ed.grad).reshape(mesh.n_triangles, 12)
    rows = np.repeat(np.arange(mesh.n_triangles)[:, None], 12, axis=1)
    return coo_to_csr(rows, layout.cell_vector_dofs, local, (layout.n_pressure, layout.n_velocity))


def assemble_convection(w, mesh: TriangleMesh, layout: DofLayout, ed: ElementData | None = None) -> sp.csr_matrix:
    """Skew-symmetric convection matrix for the convecting field ``w``.

    ``phi^T N(w) u = 1/2 (w.grad u, phi) - 1/2 (w.grad phi, u)``, so ``N(w)``
    is exactly antisymmetric and ``v^T N(w) v = 0``.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (layout.n_velocity,):
        raise ValueError(f"convecting field has length {w.size}, expected {layout.n_velocity}")
    if ed is None:
        ed = element_data(mesh, CONVECTION_DEGREE)
    w_loc = w.reshape(-1, 2)[layout.cell_dofs]  # (T, 6, 2)
    w_q = np.einsum("qi,tic->tqc", ed.phi, w_loc)
    adv = np.einsum("tqc,tqjc->tqj", w_q, ed.grad)  # w . grad(phi_j)
    C = 0.5 * np.einsum("tq,qi,tqj->tij", ed.weights, ed.phi, adv)
    local = C - C.transpose(0, 2, 1)
    return _scalar_to_vector(_assemble_scalar(layout, local))


def assemble_load(f, t: float, mesh: TriangleMesh, layout: DofLayout, ed: ElementData | None = None) -> np.ndarray:
    """``(f(., t), phi_i)`` for every vector DOF; ``f(x, y, t)`` returns a pair of arrays."""
    if ed is None:
        ed = element_data(mesh, LOAD_DEGREE, gradients=False)
    x, y = ed.points[..., 0], ed.points[..., 1]
    fx, fy = (np.broadcast_to(np.asarray(c, dtype=float), x.shape) for c in f(x, y, t))
    local = np.einsum("tq,qi,tqc->tic", ed.weights, ed.phi, np.stack([fx, fy], axis=-1))
    out = np.zeros((layout.n_velocity_scalar, 2))
    np.add.at(out, layout.cell_dofs, local)
    return out.ravel()


@dataclass(frozen=True)
class ReducedSystem:
    """Blocks restricted to free velocity DOFs, with the map back to full vectors."""

    free: np.ndarray
    n_full: int
    blocks: dict

    def expand(self, u_free) -> np.ndarray:
        out = np.zeros(self.n_full)
        out[self.free] = u_free
        return out

    def restrict(self, u_full) -> np.ndarray:
        return np.asarray(u_full)[self.free]


def apply_dirichlet(blocks: dict, boundary_dofs, n_velocity: int) -> ReducedSystem:
    """Remove homogeneous Dirichlet DOFs by symmetric elimination.

    Square velocity blocks lose rows and columns, rectangular (pressure x
    velocity) blocks lose columns, and vectors of length ``n_velocity`` lose
    entries.
    """
    mask = np.ones(n_velocity, dtype=bool)
    mask[np.asarray(boundary_dofs, dtype=int)] = False
    free = np.flatnonzero(mask)
    if len(free) == 0:
        raise ValueError("every velocity DOF is constrained; the reduced system is empty")
    out = {}
    for name, blk in blocks.items():
        if sp.issparse(blk):
            if blk.shape == (n_velocity, n_velocity):
                out[name] = to_csr(blk[free][:, free])
            elif blk.shape[1] == n_velocity:
                out[name] = to_csr(blk[:, free])
            else:
                raise ValueError(f"block {name!r} of shape {blk.shape} has no velocity columns")
        else:
            arr = np.asarray(blk)
            if arr.ndim == 2 and arr.shape == (n_velocity, n_velocity):
                out[name] = arr[np.ix_(free, free)]
            else:
                out[name] = arr[free]
    return ReducedSystem(free=free, n_full=n_velocity, blocks=out)


@dataclass(frozen=True, eq=False)
class AssembledForms:
    """Mass, stiffness and divergence matrices plus everything needed to reuse them."""

    mesh: TriangleMesh
    layout: DofLayout
    M: sp.csr_matrix
    A: sp.csr_matrix
    B: sp.csr_matrix
    areas: np.ndarray
    free: np.ndarray
    Mf: sp.csr_matrix
    Af: sp.csr_matrix
    Bf: sp.csr_matrix
    conv_data: ElementData = field(repr=False)
    load_data: ElementData = field(repr=False)

    def convection(self, w) -> sp.csr_matrix:
        return assemble_convection(w, self.mesh, self.layout, self.conv_data)

    def load(self, f, t: float) -> np.ndarray:
        return assemble_load(f, t, self.mesh, self.layout, self.load_data)

    def expand(self, u_free) -> np.ndarray:
        out = np.zeros(self.layout.n_velocity)
        out[self.free] = u_free
        return out

    def saddle(self, F_free) -> SaddleSystem:
        return SaddleSystem(F=F_free, B=self.Bf, pressure_weights=self.areas, nullspace="pin")


def assemble_forms(mesh: TriangleMesh, layout: DofLayout | None = None) -> AssembledForms:
    layout = layout or build_dof_layout(mesh)
    M = assemble_mass(mesh, layout)
    A = assemble_stiffness(mesh, layout)
    B = assemble_divergence(mesh, layout)
    red = apply_dirichlet({"M": M, "A": A, "B": B}, layout.velocity_boundary_dofs, layout.n_velocity)
    return AssembledForms(
        mesh=mesh,
        layout=layout,
        M=M,
        A=A,
        B=B,
        areas=mesh.areas,
        free=red.free,
        Mf=red.blocks["M"],
        Af=red.blocks["A"],
        Bf=red.blocks["B"],
        conv_data=element_data(mesh, CONVECTION_DEGREE),
        load_data=element_data(mesh, LOAD_DEGREE, gradients=False),
    )
