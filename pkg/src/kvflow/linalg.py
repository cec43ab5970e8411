"""Sparse storage, direct factorization and the mixed velocity-pressure solve.

Matrices are ``scipy.sparse.csr_matrix`` with canonical (sorted, summed)
indices. Factorizations use SuperLU, or dense LU for very small systems.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SparseMatrix = sp.csr_matrix
log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
MEAN_TOL = 1e-12
DENSE_CUTOFF = 64


class SolverError(RuntimeError):
    """Singular or otherwise unusable linear system."""


class SingularMatrixError(SolverError):
    def __init__(self, message: str, row: int | None = None, block: str | None = None):
        super().__init__(message)
        self.row = row
        self.block = block


class ConvergenceError(SolverError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


def to_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def coo_to_csr(rows, cols, vals, shape) -> sp.csr_matrix:
    """Compress triplets, summing duplicates in a fixed order."""
    return to_csr(sp.coo_matrix((np.ravel(vals), (np.ravel(rows), np.ravel(cols))), shape=shape))


class Factorization:
    """LU factors of a square matrix, reusable across right-hand sides."""

    def __init__(self, A):
        A = to_csr(A) if sp.issparse(A) else np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"factorize needs a square matrix, got shape {A.shape}")
        self.shape = A.shape
        self._check_structure(A)
        if A.shape[0] <= DENSE_CUTOFF:
            dense = A.toarray() if sp.issparse(A) else A
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)  # reported below instead
                lu, piv = sla.lu_factor(dense, check_finite=True)
            diag = np.abs(np.diag(lu))
            scale = max(np.abs(dense).max(), 1.0)
            if np.any(diag <= 1e-14 * scale):
                row = int(np.argmax(diag <= 1e-14 * scale))
                raise SingularMatrixError(f"matrix is numerically singular at pivot row {row}", row=row)
            self._dense = (lu, piv)
            self._lu = None
        else:
            try:
                self._lu = spla.splu(sp.csc_matrix(A))
            except RuntimeError as exc:
                raise SingularMatrixError(f"sparse LU failed: {exc}") from exc
            diag = np.abs(self._lu.U.diagonal())
            if np.any(diag == 0) or not np.all(np.isfinite(diag)):
                row = int(self._lu.perm_r.argsort()[np.argmin(diag)])
                raise SingularMatrixError(f"matrix is numerically singular near row {row}", row=row)
            self._dense = None

    @staticmethod
    def _check_structure(A) -> None:
        if sp.issparse(A):
            nz_rows = np.diff(A.indptr) > 0
            nz_cols = np.zeros(A.shape[1], dtype=bool)
            nz_cols[A.indices[A.data != 0]] = True
            empty_row = np.flatnonzero(~nz_rows | (abs(A).sum(axis=1).A1 == 0))
            empty_col = np.flatnonzero(~nz_cols)
        else:
            empty_row = np.flatnonzero(~np.any(A != 0, axis=1))
            empty_col = np.flatnonzero(~np.any(A != 0, axis=0))
        if len(empty_row):
            raise SingularMatrixError(f"structurally singular: row {empty_row[0]} is empty", row=int(empty_row[0]))
        if len(empty_col):
            raise SingularMatrixError(f"structurally singular: column {empty_col[0]} is empty", row=int(empty_col[0]))

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self._dense is not None:
            return sla.lu_solve(self._dense, b)
        return self._lu.solve(b)


def factorize(A) -> Factorization:
    return Factorization(A)


@dataclass
class SaddleSystem:
    """Block system ``[[F, B^T], [B, 0]]`` on free velocity DOFs.

    ``pressure_weights`` are the cell areas used to fix the mean of the
    pressure. With ``nullspace="pin"`` the first pressure unknown is pinned
    during factorization and the mean removed afterwards; ``"none"`` means B
    has full row rank as given.
    """

    F: sp.csr_matrix
    B: sp.csr_matrix
    pressure_weights: np.ndarray | None = None
    nullspace: str = "pin"

    def __post_init__(self):
        if self.nullspace not in ("pin", "none"):
            raise ValueError(f"unknown pressure nullspace mode {self.nullspace!r}")
        if self.F.shape[0] != self.F.shape[1] or self.B.shape[1] != self.F.shape[0]:
            raise ValueError(f"inconsistent block shapes F{self.F.shape} B{self.B.shape}")
        if self.pressure_weights is None:
            self.pressure_weights = np.ones(self.B.shape[0])


def _saddle_matrix(sys: SaddleSystem) -> sp.csr_matrix:
    n, m = sys.F.shape[0], sys.B.shape[0]
    B = sys.B
    if sys.nullspace == "pin" and m > 0:
        B = B[1:]
    if B.shape[0] == 0:
        return to_csr(sys.F)
    return to_csr(sp.bmat([[sys.F, B.T], [B, None]], format="csr"))


class SaddleFactorization:
    """Factorized saddle matrix, reusable as a direct solver or as a preconditioner."""

    def __init__(self, sys: SaddleSystem):
        self.system = sys
        self.matrix = _saddle_matrix(sys)
        try:
            self.lu = factorize(self.matrix)
        except SingularMatrixError as exc:
            n = sys.F.shape[0]
            block = "F" if exc.row is not None and exc.row < n else "B"
            raise SingularMatrixError(f"saddle system singular in block {block}: {exc}", exc.row, block) from exc


def _gmres(K, b, base: SaddleFactorization):
    size = K.shape[0]
    prec = spla.LinearOperator((size, size), matvec=base.lu.solve, dtype=float)
    x, info = spla.gmres(K, b, x0=base.lu.solve(b), M=prec, rtol=1e-13, atol=0.0, restart=20, maxiter=3)
    ok = info == 0 or np.linalg.norm(b - K @ x) <= 1e-3 * RESIDUAL_TOL * (1 + np.linalg.norm(b))
    return x, ok


def solve_saddle(sys: SaddleSystem, rhs_u, rhs_p, base: SaddleFactorization | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``F U + B^T P = rhs_u``, ``B U = rhs_p`` with a mean-zero pressure.

    ``base`` is an optional factorization of a nearby system with the same B
    block. If it is the system itself the solve is direct; otherwise it
    preconditions GMRES on ``sys``, with a fresh factorization as fallback.
    """
    n, m = sys.F.shape[0], sys.B.shape[0]
    rhs_u = np.asarray(rhs_u, dtype=float)
    rhs_p = np.asarray(rhs_p, dtype=float)
    if rhs_u.shape != (n,) or rhs_p.shape != (m,):
        raise ValueError("right-hand side sizes do not match the saddle system")
    pinned = sys.nullspace == "pin" and m > 0
    b = np.concatenate([rhs_u, rhs_p[1:] if pinned else rhs_p])

    if base is not None and base.system is sys:
        fact = base
        x = fact.lu.solve(b)
    else:
        x = None
        if base is not None:
            K = _saddle_matrix(sys)
            x, ok = _gmres(K, b, base)
            if not ok:
                log.debug("preconditioned GMRES stalled; refactorizing")
                x = None
        if x is None:
            fact = SaddleFactorization(sys)
            x = fact.lu.solve(b)
        else:
            fact = base
    K = fact.matrix if fact.system is sys else _saddle_matrix(sys)
    for _ in range(2):  # iterative refinement
        r = b - K @ x
        if np.linalg.norm(r) <= 1e-3 * RESIDUAL_TOL * (1 + np.linalg.norm(b)):
            break
        x += fact.lu.solve(r)

    U = x[:n]
    P = np.zeros(m)
    if pinned:
        P[1:] = x[n:]
        w = sys.pressure_weights
        P -= np.dot(w, P) / w.sum()
    else:
        P[:] = x[n:]

    rhs_norm = np.linalg.norm(np.concatenate([rhs_u, rhs_p]))
    res_u = np.linalg.norm(sys.F @ U + sys.B.T @ P - rhs_u)
    res_p = np.linalg.norm(sys.B @ U - rhs_p) if m else 0.0
    limit = RESIDUAL_TOL * (1 + rhs_norm)
    if res_u > limit or res_p > limit:
        raise ConvergenceError(
            f"saddle solve residual too large (velocity {res_u:.3e}, divergence {res_p:.3e})",
            residual=max(res_u, res_p),
        )
    return U, P
