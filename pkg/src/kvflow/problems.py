"""Closed-form test problems on the unit square.

Example 1 is a manufactured solution built from the stream function
``5 cos(t) a(x) a(y)`` with ``a(s) = s^2 (s - 1)^2``; its forcing was derived
by hand and is guarded by :func:`forcing_consistency_check`. Examples 2 and 3
are unforced decay problems without an exact solution.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

FORCING_TOL = 1e-6


class ManufacturedForcingError(AssertionError):
    pass


@dataclass(frozen=True)
class ManufacturedProblem:
    name: str
    nu: float
    kappa: float
    forcing: Callable  # (x, y, t) -> (f1, f2)
    initial_velocity: Callable  # (x, y) -> (u1, u2)
    exact_velocity: Callable | None = None  # (x, y, t) -> (u1, u2)
    exact_gradient: Callable | None = None  # (x, y, t) -> ((u1_x, u1_y), (u2_x, u2_y))
    exact_pressure: Callable | None = None  # (x, y, t) -> p
    initial_pressure: Callable | None = None  # recorded only; the scheme needs none
    forcing_is_zero: bool = False

    @property
    def has_exact(self) -> bool:
        return self.exact_velocity is not None


# a(s) = s^2 (s-1)^2 and its derivatives
def _a(s):
    return s**2 * (s - 1) ** 2


def _a1(s):
    return 2 * s * (s - 1) * (2 * s - 1)


def _a2(s):
    return 12 * s**2 - 12 * s + 2


def _a3(s):
    return 24 * s - 12


def _profile(x, y):
    """Spatial part of the Example 1 velocity, its gradient, Laplacian and self-advection."""
    ax, a1x, a2x, a3x = _a(x), _a1(x), _a2(x), _a3(x)
    ay, a1y, a2y, a3y = _a(y), _a1(y), _a2(y), _a3(y)
    u1 = 5 * ax * a1y
    u2 = -5 * a1x * ay
    g = ((5 * a1x * a1y, 5 * ax * a2y), (-5 * a2x * ay, -5 * a1x * a1y))
    lap = (5 * (a2x * a1y + ax * a3y), -5 * (a3x * ay + a1x * a2y))
    adv = (u1 * g[0][0] + u2 * g[0][1], u1 * g[1][0] + u2 * g[1][1])
    return (u1, u2), g, lap, adv


def example1(nu: float = 1.0, kappa: float = 1.0, forcing_scale: float = 1.0) -> ManufacturedProblem:
    """Manufactured solution ``u = cos(t) U(x, y)``, ``p = 40 cos(t) x y``.

    The forcing is ``u_t + (u.grad)u - kappa lap u_t - nu lap u + grad p``.
    ``forcing_scale`` multiplies it (0 turns the problem into free decay).
    """

    def velocity(x, y, t):
        (u1, u2), *_ = _profile(x, y)
        c = np.cos(t)
        return c * u1, c * u2

    def gradient(x, y, t):
        _, g, _, _ = _profile(x, y)
        c = np.cos(t)
        return tuple(tuple(c * gij for gij in row) for row in g)

    def pressure(x, y, t):
        return 40 * np.cos(t) * x * y

    def forcing(x, y, t):
        (u1, u2), _, lap, adv = _profile(x, y)
        c, s = np.cos(t), np.sin(t)
        f1 = -s * u1 + kappa * s * lap[0] - nu * c * lap[0] + c**2 * adv[0] + 40 * c * y
        f2 = -s * u2 + kappa * s * lap[1] - nu * c * lap[1] + c**2 * adv[1] + 40 * c * x
        return forcing_scale * f1, forcing_scale * f2

    return ManufacturedProblem(
        name="example1",
        nu=nu,
        kappa=kappa,
        forcing=_zero_forcing if forcing_scale == 0 else forcing,
        initial_velocity=lambda x, y: velocity(x, y, 0.0),
        exact_velocity=velocity if forcing_scale == 1 else None,
        exact_gradient=gradient if forcing_scale == 1 else None,
        exact_pressure=pressure if forcing_scale == 1 else None,
        forcing_is_zero=forcing_scale == 0,
    )


def _zero_forcing(x, y, t):
    z = np.zeros(np.broadcast(x, y).shape)
    return z, z.copy()


def example2(nu: float = 1.0, kappa: float = 1.0) -> ManufacturedProblem:
    """Example 1's profile at amplitude 10 as initial data, no forcing."""

    def u0(x, y):
        (u1, u2), *_ = _profile(x, y)
        return u1, u2

    return ManufacturedProblem(
        name="example2",
        nu=nu,
        kappa=kappa,
        forcing=_zero_forcing,
        initial_velocity=u0,
        initial_pressure=lambda x, y: 40 * x * y,
        forcing_is_zero=True,
    )


def example3(nu: float = 1.0, kappa: float = 1.0) -> ManufacturedProblem:
    """Oscillatory divergence-free initial data, no forcing.

    The third listed initial component ``sin(2 pi x) sin(2 pi y)`` is kept as
    the initial pressure and never used.
    """

    def u0(x, y):
        return (
            np.sin(3 * np.pi * x) ** 2 * np.sin(6 * np.pi * y),
            -np.sin(3 * np.pi * y) ** 2 * np.sin(6 * np.pi * x),
        )

    return ManufacturedProblem(
        name="example3",
        nu=nu,
        kappa=kappa,
        forcing=_zero_forcing,
        initial_velocity=u0,
        initial_pressure=lambda x, y: np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y),
        forcing_is_zero=True,
    )


def steady_stokes() -> ManufacturedProblem:
    """Example 1 at t = 0 as a steady Stokes problem: ``-lap u + grad p = f``, nu = 1."""

    def velocity(x, y, t=0.0):
        (u1, u2), *_ = _profile(x, y)
        return u1, u2

    def gradient(x, y, t=0.0):
        return _profile(x, y)[1]

    def forcing(x, y, t=0.0):
        _, _, lap, _ = _profile(x, y)
        return -lap[0] + 40 * y, -lap[1] + 40 * x

    return ManufacturedProblem(
        name="steady_stokes",
        nu=1.0,
        kappa=0.0,
        forcing=forcing,
        initial_velocity=lambda x, y: velocity(x, y),
        exact_velocity=velocity,
        exact_gradient=gradient,
        exact_pressure=lambda x, y, t=0.0: 40 * x * y,
    )


def get_problem(example: int, nu: float = 1.0, kappa: float = 1.0, forcing_scale: float = 1.0) -> ManufacturedProblem:
    if example == 1:
        return example1(nu, kappa, forcing_scale)
    if example == 2:
        return example2(nu, kappa)
    if example == 3:
        return example3(nu, kappa)
    raise ValueError(f"unknown example {example!r}; expected 1, 2 or 3")


# finite-difference stencils: 6th-order first derivative, 4th-order second derivative
_D1 = ((-3, -1 / 60), (-2, 9 / 60), (-1, -45 / 60), (1, 45 / 60), (2, -9 / 60), (3, 1 / 60))
_D2 = ((-2, -1 / 12), (-1, 16 / 12), (0, -30 / 12), (1, 16 / 12), (2, -1 / 12))


def _pde_residual_fd(problem: ManufacturedProblem, x, y, t, hs=1e-2, ht=1e-2):
    """``u_t + (u.grad)u - kappa lap u_t - nu lap u + grad p`` by finite differences of u and p."""
    u = problem.exact_velocity
    p = problem.exact_pressure

    def d1(fun, var, h):
        out = 0.0
        for k, c in _D1:
            out = out + c * fun(*[v + k * h * (i == var) for i, v in enumerate((x, y, t))])
        return out / h

    def lap(fun, tt):
        out = 0.0
        for k, c in _D2:
            out = out + c * (np.asarray(fun(x + k * hs, y, tt)) + np.asarray(fun(x, y + k * hs, tt)))
        return out / hs**2

    def u_vec(a, b, c):
        return np.asarray(u(a, b, c))

    ut = d1(u_vec, 2, ht)
    ux = d1(u_vec, 0, hs)
    uy = d1(u_vec, 1, hs)
    uval = u_vec(x, y, t)
    adv = uval[0] * ux + uval[1] * uy
    lap_u = lap(u_vec, t)
    lap_ut = 0.0
    for k, c in _D1:
        lap_ut = lap_ut + c * lap(u_vec, t + k * ht)
    lap_ut = lap_ut / ht

    def p_arr(a, b, c):
        return np.asarray(p(a, b, c))

    grad_p = np.stack([d1(p_arr, 0, hs), d1(p_arr, 1, hs)])
    return ut + adv - problem.kappa * lap_ut - problem.nu * lap_u + grad_p


def forcing_consistency_check(problem: ManufacturedProblem, n_samples: int = 1000, seed: int = 0, t_max: float = 10.0) -> float:
    """Max deviation between the coded forcing and the finite-difference PDE residual.

    Samples ``n_samples`` uniform points in ``(0, 1)^2 x (0, t_max)``. Raises
    :class:`ManufacturedForcingError` if the deviation exceeds 1e-6.
    """
    if not problem.has_exact or problem.exact_pressure is None:
        raise ValueError(f"problem {problem.name!r} has no exact solution to check against")
    rng = np.random.default_rng(seed)
    x, y = rng.random(n_samples), rng.random(n_samples)
    t = t_max * rng.random(n_samples)
    residual = _pde_residual_fd(problem, x, y, t)
    f = np.asarray(problem.forcing(x, y, t))
    dev = float(np.max(np.abs(f - residual)))
    if dev > FORCING_TOL:
        raise ManufacturedForcingError(f"forcing deviates from the PDE residual by {dev:.3e}")
    return dev
