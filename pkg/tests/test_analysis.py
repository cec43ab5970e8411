import math

import numpy as np
import pytest

from kvflow.analysis import (
    EnergyTrace,
    RateError,
    UsageError,
    absorbing_ball_diagnostic,
    convergence_rates,
    decay_fit,
    energy_trace,
    error_norms,
    estimate_lambda1,
    forcing_bound,
)
from kvflow.fem import interpolate
from kvflow.problems import ManufacturedProblem, example1
from kvflow.stepper import FlowState, ModelConfig, TimeGrid, run


def _quadratic_problem():
    return ManufacturedProblem(
        name="quadratic",
        nu=1.0,
        kappa=1.0,
        forcing=None,
        initial_velocity=None,
        exact_velocity=lambda x, y, t: (x * y, y**2),
        exact_gradient=lambda x, y, t: ((y, x), (0 * x, 2 * y)),
        exact_pressure=lambda x, y, t: 3.0 + 0 * x,
    )


def test_table_rates():
    rates = convergence_rates([(1 / 4, 0.430939), (1 / 8, 0.203398), (1 / 16, 0.065544), (1 / 32, 0.017502)])
    assert [round(r, 4) for r in rates] == [1.0832, 1.6338, 1.9049]


def test_rate_edge_cases():
    assert convergence_rates([(0.5, 0.2), (0.25, 0.2)]) == [0.0]
    assert convergence_rates([(0.5, 1.0)]) == []
    assert convergence_rates([]) == []
    assert convergence_rates([(1.0, 1.0), (1 / 3, 1 / 9)])[0] == pytest.approx(2.0)
    with pytest.raises(RateError):
        convergence_rates([(0.5, 0.1), (0.25, 0.0)])
    with pytest.raises(RateError):
        convergence_rates([(0.5, 0.1), (0.5, 0.05)])


def test_exact_fields_have_zero_error(forms_cache):
    forms = forms_cache(3)
    prob = _quadratic_problem()
    U = interpolate(lambda x, y: (x * y, y**2), forms.layout)
    state = FlowState(n=0, t=0.0, U=U, P=np.full(forms.layout.n_pressure, -7.0))
    rep = error_norms(state, forms, prob)
    assert rep.l2_velocity < 1e-13 and rep.h1_seminorm_velocity < 1e-12
    assert rep.l2_pressure_meanfree < 1e-12
    assert rep.h1_velocity == pytest.approx(math.hypot(rep.l2_velocity, rep.h1_seminorm_velocity))


def test_pressure_error_is_mean_shift_invariant(forms_cache):
    forms = forms_cache(4)
    prob = example1()
    U = interpolate(lambda x, y: prob.exact_velocity(x, y, 0.0), forms.layout)
    P = np.random.default_rng(0).standard_normal(forms.layout.n_pressure)
    a = error_norms(FlowState(0, 0.0, U, P), forms, prob, t=0.0)
    b = error_norms(FlowState(0, 0.0, U, P + 12.5), forms, prob, t=0.0)
    assert abs(a.l2_pressure_meanfree - b.l2_pressure_meanfree) < 1e-13


def test_interpolation_error_rate(forms_cache):
    prob = example1()
    errs = []
    for n in (4, 8, 16):
        forms = forms_cache(n)
        U = interpolate(lambda x, y: prob.exact_velocity(x, y, 0.0), forms.layout)
        errs.append((forms.mesh.h, error_norms(FlowState(0, 0.0, U, np.zeros(forms.layout.n_pressure)), forms, prob, t=0.0).l2_velocity))
    assert convergence_rates(errs)[-1] == pytest.approx(3.0, abs=0.15)


def test_reference_comparison(forms_cache):
    coarse, fine = forms_cache(2), forms_cache(4)
    f = lambda x, y: (x * (1 - x), y * x - y**2)
    Uc = interpolate(f, coarse.layout)
    Uf = interpolate(f, fine.layout)
    sc = FlowState(0, 0.0, Uc, np.zeros(coarse.layout.n_pressure))
    sf = FlowState(0, 0.0, Uf, np.zeros(fine.layout.n_pressure))
    rep = error_norms(sc, coarse, reference=(sf, fine))
    assert rep.l2_velocity < 1e-13 and rep.h1_seminorm_velocity < 1e-12


def test_error_norms_need_a_comparison(forms_cache):
    forms = forms_cache(2)
    state = FlowState(0, 0.0, np.zeros(forms.layout.n_velocity), np.zeros(forms.layout.n_pressure))
    with pytest.raises(UsageError):
        error_norms(state, forms)


def test_energy_trace_sources_agree(forms_cache):
    forms = forms_cache(4)
    grid = TimeGrid(0.1, 3)
    cfg = ModelConfig(kappa=0.5)
    traj = run(example1().initial_velocity, grid, cfg, forms, example1().forcing, checkpoint_times=(0.0, 0.1, 0.2, 0.3))
    a = energy_trace(traj, kappa=cfg.kappa)
    b = energy_trace([traj.checkpoints[i] for i in range(4)], forms, kappa=cfg.kappa)
    np.testing.assert_allclose(a.energy, b.energy, rtol=1e-13)
    np.testing.assert_allclose(a.t, [0.0, 0.1, 0.2, 0.3])
    with pytest.raises(UsageError):
        energy_trace([traj.final])
    with pytest.raises(UsageError):
        energy_trace([], forms)


def test_zero_trajectory(forms_cache):
    forms = forms_cache(2)
    zero = lambda x, y: (0 * x, 0 * y)
    trace = energy_trace(run(zero, TimeGrid(0.1, 4), ModelConfig(), forms), kappa=1.0)
    assert not np.any(trace.energy) and not np.any(trace.norm_u)


def test_decay_fit_synthetic():
    t = np.linspace(0, 1, 41)
    trace = EnergyTrace(t=t, norm_u=2.0 * np.exp(-3.0 * t), norm_grad_u=np.zeros_like(t), energy=np.zeros_like(t))
    slope, r2 = decay_fit(trace)
    assert slope == pytest.approx(-3.0, abs=1e-12) and r2 == pytest.approx(1.0)
    with pytest.raises(UsageError):
        decay_fit(trace, 0.2, 0.21)


def test_lambda1(forms_cache):
    est = [estimate_lambda1(forms_cache(n)) for n in (4, 8, 16)]
    exact = 2 * math.pi**2
    assert all(e > exact for e in est)
    assert est[0] > est[1] > est[2]
    assert abs(est[1] - exact) / exact < 0.05
    rate = convergence_rates([(1 / n, e - exact) for n, e in zip((4, 8, 16), est)])
    assert rate[-1] > 1.9  # eigenvalue error is O(h^4) for P2, so at least 2


def test_lambda1_on_coarsest_mesh(forms_cache):
    # n=1 still has one interior node: the midpoint of the diagonal
    assert estimate_lambda1(forms_cache(1)) > 2 * math.pi**2


def test_forcing_bound_of_constant(forms_cache):
    forms = forms_cache(2)
    f = lambda x, y, t: (np.ones_like(x) * (1 + t), np.zeros_like(x))
    assert forcing_bound(f, forms, [0.0, 1.0, 0.5]) == pytest.approx(2.0)


def _trace(values, kappa=0.0):
    v = np.asarray(values, dtype=float)
    return EnergyTrace(t=np.arange(len(v)) * 0.1, norm_u=v, norm_grad_u=np.zeros_like(v), energy=v**2)


def test_absorbing_ball_entry_and_range():
    cfg = ModelConfig(nu=1.0, kappa=0.0)
    lam1 = 20.0
    alpha = 2.0
    rho = 4.0 / math.sqrt(alpha * lam1)
    rep = absorbing_ball_diagnostic(_trace([3.0, 2.0, rho * 0.9, rho * 0.5, rho * 0.4]), cfg, 4.0, lam1, alpha=alpha)
    assert rep.radius == pytest.approx(rho)
    assert rep.entry_step == 2 and rep.entry_time == pytest.approx(0.2)
    assert rep.stays_inside and rep.monotone
    leaves = absorbing_ball_diagnostic(_trace([rho * 0.5, rho * 2]), cfg, 4.0, lam1, alpha=alpha)
    assert leaves.entry_step == 0 and not leaves.stays_inside
    never = absorbing_ball_diagnostic(_trace([3.0, 3.0]), cfg, 0.0, lam1, alpha=alpha)
    assert never.entry_step is None and not never.stays_inside
    for bad in (0.0, cfg.alpha_bound(lam1), None):
        with pytest.raises(ValueError):
            absorbing_ball_diagnostic(_trace([1.0]), cfg, 1.0, lam1, alpha=bad)


def test_zero_forcing_ball_has_zero_radius():
    cfg = ModelConfig(alpha=0.1)
    rep = absorbing_ball_diagnostic(_trace([1.0, 0.5, 0.1]), cfg, 0.0, 2 * math.pi**2)
    assert rep.radius == 0.0 and rep.monotone and rep.entry_step is None


def test_scaled_initial_data_enters_later(forms_cache):
    forms = forms_cache(4)
    prob = example1()
    cfg = ModelConfig()
    lam1 = estimate_lambda1(forms)
    alpha = 0.9 * cfg.alpha_bound(lam1)
    grid = TimeGrid.from_final_time(10.0, 1 / 16)
    f_sup = forcing_bound(prob.forcing, forms, np.arange(grid.N + 1) * grid.k)
    entries = []
    for scale in (1.0, 10.0, 100.0):
        u0 = lambda x, y, s=scale: tuple(s * np.asarray(c) for c in prob.initial_velocity(x, y))
        trace = energy_trace(run(u0, grid, cfg, forms, prob.forcing), kappa=cfg.kappa)
        rep = absorbing_ball_diagnostic(trace, cfg, f_sup, lam1, alpha=alpha)
        assert rep.stays_inside
        entries.append(rep.entry_step)
    # 10 u0 still starts inside this ball, so only 100 u0 shows a strictly later entry
    assert entries[0] <= entries[1] < entries[2]
