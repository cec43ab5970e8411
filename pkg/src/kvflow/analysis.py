"""Error norms, convergence rates, energy traces and related diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assembly import AssembledForms, scalar_mass, scalar_stiffness
from .fem import evaluate_at, evaluate_points, gauss_rule
from .linalg import factorize
from .stepper import FlowState, ModelConfig, Trajectory

ERROR_DEGREE = 10


class UsageError(ValueError):
    pass


class RateError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorReport:
    h: float
    l2_velocity: float
    h1_velocity: float
    h1_seminorm_velocity: float
    l2_pressure_meanfree: float


def _quadrature(forms: AssembledForms):
    rule = gauss_rule(ERROR_DEGREE)
    mesh = forms.mesh
    T, Q = mesh.n_triangles, len(rule.weights)
    tri = np.repeat(np.arange(T), Q)
    lam = np.tile(rule.points, (T, 1))
    P = mesh.vertices[mesh.triangles]
    xy = np.einsum("qi,tid->tqd", rule.points, P).reshape(-1, 2)
    w = (2.0 * mesh.areas[:, None] * rule.weights[None, :]).ravel()
    return tri, lam, xy, w


def _meanfree_l2(diff: np.ndarray, w: np.ndarray) -> float:
    mean = np.dot(w, diff) / w.sum()
    return math.sqrt(max(np.dot(w, (diff - mean) ** 2), 0.0))


def error_norms(
    state: FlowState,
    forms: AssembledForms,
    problem=None,
    t: float | None = None,
    reference: tuple[FlowState, AssembledForms] | None = None,
) -> ErrorReport:
    """Velocity L2/H1 and mean-free pressure L2 errors at time ``t``.

    The comparison field is the closed-form solution of ``problem`` or, when
    ``reference`` is given, a discrete solution on another (finer) mesh,
    evaluated at this mesh's quadrature points.
    """
    tri, lam, xy, w = _quadrature(forms)
    uh, guh = evaluate_at(state.U, forms.mesh, forms.layout, tri, lam, gradient=True)
    ph = state.P[tri]
    if reference is not None:
        ref_state, ref_forms = reference
        u, gu = evaluate_points(ref_state.U, ref_forms.mesh, ref_forms.layout, xy, gradient=True)
        p = evaluate_points(ref_state.P, ref_forms.mesh, ref_forms.layout, xy)
    elif problem is not None and problem.has_exact:
        t = state.t if t is None else t
        x, y = xy[:, 0], xy[:, 1]
        u = np.column_stack(problem.exact_velocity(x, y, t))
        g = problem.exact_gradient(x, y, t)
        gu = np.stack([np.column_stack(g[0]), np.column_stack(g[1])], axis=1)
        p = np.broadcast_to(problem.exact_pressure(x, y, t), x.shape)
    else:
        raise UsageError("error_norms needs a problem with an exact solution or a reference solution")
    l2 = math.sqrt(np.dot(w, np.sum((u - uh) ** 2, axis=1)))
    semi = math.sqrt(np.dot(w, np.sum((gu - guh) ** 2, axis=(1, 2))))
    return ErrorReport(
        h=forms.mesh.h,
        l2_velocity=l2,
        h1_velocity=math.sqrt(l2**2 + semi**2),
        h1_seminorm_velocity=semi,
        l2_pressure_meanfree=_meanfree_l2(p - ph, w),
    )


def convergence_rates(errors) -> list[float]:
    """Observed orders between consecutive ``(h, error)`` pairs.

    ``rate_i = log(e_{i-1} / e_i) / log(h_{i-1} / h_i)``, which is
    ``log2(e_{i-1} / e_i)`` when h halves.
    """
    errors = [(float(h), float(e)) for h, e in errors]
    for h, e in errors:
        if not e > 0 or not h > 0:
            raise RateError(f"rate undefined for nonpositive entry (h={h}, e={e})")
    rates = []
    for (h0, e0), (h1, e1) in zip(errors, errors[1:]):
        if h1 == h0:
            raise RateError("consecutive mesh sizes must differ")
        rates.append(math.log(e0 / e1) / math.log(h0 / h1))
    return rates


@dataclass(frozen=True)
class EnergyTrace:
    t: np.ndarray
    norm_u: np.ndarray
    norm_grad_u: np.ndarray
    energy: np.ndarray


def energy_trace(trajectory: Trajectory | list, forms: AssembledForms | None = None, kappa: float = 0.0) -> EnergyTrace:
    """Energy history ``|U|^2 + kappa |grad U|^2`` from a trajectory.

    Accepts either a :class:`Trajectory` (norms already recorded from the M and
    A quadratic forms) or a list of :class:`FlowState`, which needs ``forms``.
    """
    if isinstance(trajectory, Trajectory):
        items = trajectory.summaries
        if not items:
            raise UsageError("empty trajectory")
        t = np.array([s.t for s in items])
        nu = np.array([s.norm_u for s in items])
        ng = np.array([s.norm_grad_u for s in items])
    else:
        states = list(trajectory)
        if not states:
            raise UsageError("empty trajectory")
        if forms is None:
            raise UsageError("forms are required to evaluate norms of raw states")
        t = np.array([s.t for s in states])
        nu = np.sqrt(np.maximum([s.U @ (forms.M @ s.U) for s in states], 0.0))
        ng = np.sqrt(np.maximum([s.U @ (forms.A @ s.U) for s in states], 0.0))
    return EnergyTrace(t=t, norm_u=nu, norm_grad_u=ng, energy=nu**2 + kappa * ng**2)


def decay_fit(trace: EnergyTrace, t_min: float = 0.2, t_max: float = 1.0) -> tuple[float, float]:
    """Least-squares fit of ``log |U|`` against t on ``[t_min, t_max]``: (slope, R^2)."""
    sel = (trace.t >= t_min - 1e-12) & (trace.t <= t_max + 1e-12) & (trace.norm_u > 0)
    if sel.sum() < 2:
        raise UsageError("not enough samples in the fit window")
    t = trace.t[sel]
    y = np.log(trace.norm_u[sel])
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2)


class EigenNonConvergence(RuntimeError):
    pass


def estimate_lambda1(forms: AssembledForms, tol: float = 1e-8, max_iter: int = 10000) -> float:
    """Smallest Dirichlet eigenvalue of ``A x = lambda M x`` on the scalar P2 space.

    Inverse power iteration with shift 0 and Rayleigh-quotient stopping test.
    """
    mesh, layout = forms.mesh, forms.layout
    mask = np.ones(layout.n_velocity_scalar, dtype=bool)
    mask[layout.boundary_scalar_dofs] = False
    free = np.flatnonzero(mask)
    if len(free) == 0:
        raise UsageError("mesh has no interior P2 nodes")
    A = scalar_stiffness(mesh, layout)[free][:, free]
    M = scalar_mass(mesh, layout)[free][:, free]
    lu = factorize(A)
    x = np.ones(len(free))
    lam_old = np.inf
    for _ in range(max_iter):
        y = lu.solve(M @ x)
        y /= math.sqrt(y @ (M @ y))
        lam = (y @ (A @ y)) / (y @ (M @ y))
        x = y
        if abs(lam - lam_old) <= tol * abs(lam):
            return float(lam)
        lam_old = lam
    raise EigenNonConvergence(f"inverse iteration did not converge in {max_iter} iterations")


def forcing_bound(f, forms: AssembledForms, times) -> float:
    """``max_t |f(., t)|_{L2}`` over the sampled times, by degree-10 quadrature."""
    _, _, xy, w = _quadrature(forms)
    best = 0.0
    for t in times:
        f1, f2 = f(xy[:, 0], xy[:, 1], t)
        best = max(best, math.sqrt(np.dot(w, np.asarray(f1) ** 2 + np.asarray(f2) ** 2)))
    return best


@dataclass(frozen=True)
class AbsorbingBallReport:
    alpha: float
    radius: float
    entry_step: int | None
    entry_time: float | None
    stays_inside: bool
    monotone: bool
    sup_norm: float


def absorbing_ball_diagnostic(
    trace: EnergyTrace, config: ModelConfig, f_bound: float, lambda1: float, alpha: float | None = None
) -> AbsorbingBallReport:
    """Compare ``(|U|^2 + kappa |grad U|^2)^(1/2)`` with the absorbing radius.

    The radius is ``rho0 = |f| / sqrt(alpha nu lambda1)`` for an exponential
    weight ``0 < alpha < nu lambda1 / (4 (1 + kappa lambda1))``.
    """
    alpha = config.alpha if alpha is None else alpha
    bound = config.alpha_bound(lambda1)
    if alpha is None or not 0 < alpha < bound:
        raise ValueError(f"alpha={alpha} outside the admissible range (0, {bound:.6g})")
    rho0 = f_bound / math.sqrt(alpha * config.nu * lambda1)
    r = np.sqrt(np.maximum(trace.energy, 0.0))
    inside = r <= rho0 * (1 + 1e-12) if rho0 > 0 else r == 0
    hits = np.flatnonzero(inside)
    entry = int(hits[0]) if len(hits) else None
    return AbsorbingBallReport(
        alpha=alpha,
        radius=rho0,
        entry_step=entry,
        entry_time=float(trace.t[entry]) if entry is not None else None,
        stays_inside=entry is not None and bool(np.all(inside[entry:])),
        monotone=bool(np.all(np.diff(trace.energy) <= 1e-12 * np.maximum(trace.energy[:-1], 1e-300))),
        sup_norm=float(trace.norm_u.max()),
    )
