"""Backward-Euler time stepping with Picard linearization of the convection term.

One step solves, for all discrete test functions v,

    ((U - U_prev)/k, v) + kappa a((U - U_prev)/k, v) + nu a(U, v)
        + b(W, U, v) - (P, div v) = (f(t_n), v),     (div U, q) = 0,

and iterates on the convecting field W until it matches U.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import AssembledForms
from .fem import interpolate
from .linalg import SaddleFactorization, SolverError, solve_saddle, to_csr

log = logging.getLogger(__name__)

DIVERGENCE_TOL = 1e-9


class NonConvergenceError(SolverError):
    def __init__(self, message: str, residual: float, step: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class StepFailure(SolverError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step} failed: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class FlowState:
    n: int
    t: float
    U: np.ndarray  # full vector velocity coefficients
    P: np.ndarray  # P0 pressure, zero mean
    picard_iterations: int = 0


@dataclass(frozen=True)
class TimeGrid:
    k: float
    N: int

    def __post_init__(self):
        if not self.k > 0 or self.N < 0:
            raise ValueError(f"invalid time grid k={self.k}, N={self.N}")

    @property
    def T(self) -> float:
        return self.N * self.k

    @classmethod
    def from_final_time(cls, T: float, k: float) -> "TimeGrid":
        N = int(round(T / k))
        if abs(N * k - T) > 1e-12 * max(1.0, T):
            raise ValueError(f"final time {T} is not a multiple of k={k}")
        return cls(k=T / N if N else k, N=N)


@dataclass(frozen=True)
class ModelConfig:
    nu: float = 1.0
    kappa: float = 1.0
    picard_tol: float = 1e-10
    picard_max: int = 50
    alpha: float | None = None

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"viscosity must be positive, got {self.nu}")
        if not self.kappa >= 0:
            raise ValueError(f"retardation time must be nonnegative, got {self.kappa}")
        if not 0 < self.picard_tol < 1:
            raise ValueError(f"picard_tol must lie in (0, 1), got {self.picard_tol}")
        if self.picard_max < 1:
            raise ValueError("picard_max must be at least 1")
        if self.alpha is not None and self.alpha < 0:
            raise ValueError("alpha must be nonnegative")

    def alpha_bound(self, lambda1: float) -> float:
        """Largest admissible exponential weight ``nu lambda1 / (4 (1 + kappa lambda1))``."""
        return self.nu * lambda1 / (4 * (1 + self.kappa * lambda1))


def project_initial(u0, forms: AssembledForms, mode: str = "l2") -> FlowState:
    """Initial state from the velocity ``u0(x, y)``.

    ``"l2"`` is the L2 projection onto discretely divergence-free fields;
    ``"interpolate"`` takes nodal values (zeroed on the boundary) as they are.
    """
    n_p = forms.layout.n_pressure
    if mode == "interpolate":
        U = interpolate(u0, forms.layout)
        U[forms.layout.velocity_boundary_dofs] = 0.0
        return FlowState(n=0, t=0.0, U=U, P=np.zeros(n_p))
    if mode != "l2":
        raise ValueError(f"unknown initial projection mode {mode!r}")
    rhs = forms.load(lambda x, y, t: u0(x, y), 0.0)[forms.free]
    if not np.any(rhs):
        return FlowState(n=0, t=0.0, U=np.zeros(forms.layout.n_velocity), P=np.zeros(n_p))
    Uf, _ = solve_saddle(forms.saddle(forms.Mf), rhs, np.zeros(n_p))
    return FlowState(n=0, t=0.0, U=forms.expand(Uf), P=np.zeros(n_p))


class StepOperator:
    """Convection-free part of the step matrix, factorized once per (mesh, k, nu, kappa)."""

    def __init__(self, forms: AssembledForms, k: float, config: ModelConfig):
        self.key = (id(forms), k, config.nu, config.kappa)
        self.F0 = to_csr(forms.Mf * (1.0 / k) + forms.Af * (config.kappa / k + config.nu))
        self.base = SaddleFactorization(forms.saddle(self.F0))


def step(
    prev: FlowState,
    grid: TimeGrid,
    config: ModelConfig,
    forms: AssembledForms,
    f,
    op: StepOperator | None = None,
) -> FlowState:
    """Advance one backward-Euler step; ``f(x, y, t)`` is the forcing (None for zero).

    Each Picard iterate solves the linear step with the previous iterate as
    convecting field. ``op`` caches the factorized convection-free matrix,
    which preconditions those solves.
    """
    k = grid.k
    n = prev.n + 1
    t = n * k
    free = forms.free
    u_prev = prev.U[free]
    if op is None or op.key != (id(forms), k, config.nu, config.kappa):
        op = StepOperator(forms, k, config)
    rhs = (forms.Mf @ u_prev + config.kappa * (forms.Af @ u_prev)) / k
    if f is not None:
        rhs = rhs + forms.load(f, t)[free]
    zero_p = np.zeros(forms.layout.n_pressure)

    w = u_prev
    for it in range(1, config.picard_max + 1):
        N = forms.convection(forms.expand(w))[free][:, free]
        u, p = solve_saddle(forms.saddle(op.F0 + N), rhs, zero_p, base=op.base)
        diff = np.linalg.norm(u - w)
        scale = np.linalg.norm(u)
        w = u
        if diff <= config.picard_tol * scale:
            break
    else:
        raise NonConvergenceError(
            f"Picard iteration did not converge in {config.picard_max} iterations "
            f"(last relative update {diff / max(scale, 1e-300):.3e})",
            residual=diff / max(scale, 1e-300),
            step=n,
        )
    # saddle convention is F U + B^T P; the scheme carries -(P, div v)
    return FlowState(n=n, t=t, U=forms.expand(u), P=-p, picard_iterations=it)


@dataclass
class StepSummary:
    n: int
    t: float
    norm_u: float
    norm_grad_u: float
    energy: float
    picard_iterations: int
    divergence: float


@dataclass
class Trajectory:
    summaries: list[StepSummary] = field(default_factory=list)
    checkpoints: dict[int, FlowState] = field(default_factory=dict)
    final: FlowState | None = None


def summarize(state: FlowState, forms: AssembledForms, kappa: float) -> StepSummary:
    U = state.U
    m = float(U @ (forms.M @ U))
    a = float(U @ (forms.A @ U))
    return StepSummary(
        n=state.n,
        t=state.t,
        norm_u=math.sqrt(max(m, 0.0)),
        norm_grad_u=math.sqrt(max(a, 0.0)),
        energy=m + kappa * a,
        picard_iterations=state.picard_iterations,
        divergence=float(np.linalg.norm(forms.B @ U)),
    )


def run(
    u0,
    grid: TimeGrid,
    config: ModelConfig,
    forms: AssembledForms,
    forcing=None,
    checkpoint_times=(),
    initial_mode: str = "l2",
) -> Trajectory:
    """Project ``u0`` and take ``grid.N`` steps, recording per-step diagnostics.

    Full states are kept for step indices closest to ``checkpoint_times`` and
    for the final step.
    """
    wanted = {int(round(tc / grid.k)) for tc in checkpoint_times}
    state = project_initial(u0, forms, mode=initial_mode)
    traj = Trajectory()
    traj.summaries.append(summarize(state, forms, config.kappa))
    if 0 in wanted:
        traj.checkpoints[0] = state
    op = StepOperator(forms, grid.k, config) if grid.N else None
    for _ in range(grid.N):
        try:
            state = step(state, grid, config, forms, forcing, op)
        except SolverError as exc:
            raise StepFailure(state.n + 1, exc) from exc
        s = summarize(state, forms, config.kappa)
        if s.divergence > DIVERGENCE_TOL:
            raise StepFailure(state.n, SolverError(f"divergence constraint violated ({s.divergence:.3e})"))
        traj.summaries.append(s)
        if state.n in wanted:
            traj.checkpoints[state.n] = state
        log.debug("step %d t=%.6g |U|=%.6e picard=%d", s.n, s.t, s.norm_u, s.picard_iterations)
    traj.final = state
    return traj
