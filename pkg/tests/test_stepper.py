import numpy as np
import pytest

from kvflow.analysis import convergence_rates, error_norms
from kvflow.fem import evaluate_at, evaluate_points
from kvflow.linalg import factorize
from kvflow.mesh import locate_points
from kvflow.problems import ManufacturedProblem, example1, example2, example3
from kvflow.stepper import (
    FlowState,
    ModelConfig,
    NonConvergenceError,
    StepFailure,
    StepOperator,
    TimeGrid,
    project_initial,
    run,
    step,
)


def test_time_grid():
    g = TimeGrid.from_final_time(1.0, 1 / 16)
    assert g.N == 16 and g.T == pytest.approx(1.0)
    assert TimeGrid.from_final_time(0.0, 0.1).N == 0
    with pytest.raises(ValueError):
        TimeGrid.from_final_time(1.0, 0.3)
    with pytest.raises(ValueError):
        TimeGrid(k=0.0, N=3)


@pytest.mark.parametrize(
    "kwargs", [{"nu": 0.0}, {"kappa": -1.0}, {"picard_tol": 0.0}, {"picard_tol": 1.0}, {"picard_max": 0}, {"alpha": -1.0}]
)
def test_model_config_validation(kwargs):
    with pytest.raises(ValueError):
        ModelConfig(**kwargs)


def test_alpha_bound():
    cfg = ModelConfig(nu=2.0, kappa=0.5)
    assert cfg.alpha_bound(4.0) == pytest.approx(2 * 4 / (4 * 3))


def test_projection_of_zero_and_modes(forms_cache):
    forms = forms_cache(4)
    s = project_initial(lambda x, y: (0 * x, 0 * y), forms)
    assert not np.any(s.U) and s.n == 0 and s.t == 0.0
    s = project_initial(example1().initial_velocity, forms, mode="interpolate")
    assert np.all(s.U[forms.layout.velocity_boundary_dofs] == 0)
    with pytest.raises(ValueError):
        project_initial(example1().initial_velocity, forms, mode="nodal")


def test_projection_is_identity_on_discrete_solenoidal_fields(forms_cache):
    forms = forms_cache(4)
    s = project_initial(example3().initial_velocity, forms)
    assert np.linalg.norm(forms.B @ s.U) < 1e-9

    def field(x, y):
        shape = np.shape(x)
        v = evaluate_points(s.U, forms.mesh, forms.layout, np.column_stack([np.ravel(x), np.ravel(y)]))
        return v[:, 0].reshape(shape), v[:, 1].reshape(shape)

    again = project_initial(field, forms)
    np.testing.assert_allclose(again.U, s.U, atol=1e-10)


def test_projection_error_rate(forms_cache):
    u0 = example3().initial_velocity
    # only the L2 velocity column is used, so the gradient and pressure are placeholders
    prob = ManufacturedProblem(
        "u0",
        1.0,
        1.0,
        forcing=None,
        initial_velocity=u0,
        exact_velocity=lambda x, y, t: u0(x, y),
        exact_gradient=lambda x, y, t: ((0 * x, 0 * x), (0 * x, 0 * x)),
        exact_pressure=lambda x, y, t: 0 * x,
    )
    errs = []
    for n in (8, 16, 32):
        forms = forms_cache(n)
        s = project_initial(u0, forms)
        errs.append((forms.mesh.h, error_norms(s, forms, prob, t=0.0).l2_velocity))
    assert convergence_rates(errs)[-1] >= 2.0


def test_zero_data_stays_zero(forms_cache):
    forms = forms_cache(4)
    prev = FlowState(n=0, t=0.0, U=np.zeros(forms.layout.n_velocity), P=np.zeros(forms.layout.n_pressure))
    nxt = step(prev, TimeGrid(0.1, 1), ModelConfig(), forms, None)
    assert not np.any(nxt.U) and not np.any(nxt.P)
    assert nxt.n == 1 and nxt.t == pytest.approx(0.1)


def test_step_energy_decreases_without_forcing(forms_cache):
    forms = forms_cache(4)
    rng = np.random.default_rng(0)
    cfg = ModelConfig(kappa=0.3)
    U = forms.expand(rng.standard_normal(len(forms.free)))
    prev = FlowState(n=0, t=0.0, U=U, P=np.zeros(forms.layout.n_pressure))
    nxt = step(prev, TimeGrid(0.05, 1), cfg, forms, None)
    energy = lambda V: V @ forms.M @ V + cfg.kappa * V @ forms.A @ V
    assert energy(nxt.U) <= energy(U)
    assert np.linalg.norm(forms.B @ nxt.U) < 1e-9


def test_step_fixed_point(forms_cache):
    # forcing equal to the steady residual of U*: backward Euler keeps U* fixed
    forms = forms_cache(4)
    cfg = ModelConfig(nu=1.0, kappa=0.5)
    star = project_initial(example1().initial_velocity, forms)
    Ustar = star.U
    resid = cfg.nu * (forms.A @ Ustar) + forms.convection(Ustar) @ Ustar
    # the discrete field whose load vector is the residual: coeffs = M^{-1} resid
    coeffs = factorize(forms.M).solve(resid)

    def f(x, y, t):
        pts = np.column_stack([np.ravel(x), np.ravel(y)])
        tri, lam = locate_points(forms.mesh, pts)
        v = evaluate_at(coeffs, forms.mesh, forms.layout, tri, lam)
        return v[:, 0].reshape(np.shape(x)), v[:, 1].reshape(np.shape(x))

    nxt = step(star, TimeGrid(0.01, 1), cfg, forms, f)
    assert np.linalg.norm(nxt.U - Ustar) <= 5 * cfg.picard_tol * np.linalg.norm(Ustar) + 1e-12


def test_picard_nonconvergence(forms_cache):
    forms = forms_cache(4)
    prob = example2()
    cfg = ModelConfig(picard_max=1, picard_tol=1e-14)
    s0 = project_initial(lambda x, y: tuple(50 * np.asarray(c) for c in prob.initial_velocity(x, y)), forms)
    with pytest.raises(NonConvergenceError) as info:
        step(s0, TimeGrid(0.1, 1), cfg, forms, None)
    assert info.value.step == 1 and info.value.residual > 0
    with pytest.raises(StepFailure) as info:
        run(lambda x, y: tuple(50 * np.asarray(c) for c in prob.initial_velocity(x, y)), TimeGrid(0.1, 2), cfg, forms)
    assert info.value.step == 1


def test_operator_cache_gives_same_result(forms_cache):
    forms = forms_cache(4)
    cfg = ModelConfig()
    grid = TimeGrid(1 / 16, 1)
    s0 = project_initial(example1().initial_velocity, forms)
    f = example1().forcing
    a = step(s0, grid, cfg, forms, f)
    b = step(s0, grid, cfg, forms, f, op=StepOperator(forms, grid.k, cfg))
    np.testing.assert_allclose(a.U, b.U, atol=1e-12)
    assert a.picard_iterations >= 2


def test_run_without_steps(forms_cache):
    forms = forms_cache(2)
    traj = run(example2().initial_velocity, TimeGrid(0.1, 0), ModelConfig(), forms)
    assert len(traj.summaries) == 1 and traj.final.n == 0


def test_run_records_checkpoints_and_is_deterministic(forms_cache):
    forms = forms_cache(4)
    grid = TimeGrid(1 / 16, 8)
    a = run(example1().initial_velocity, grid, ModelConfig(), forms, example1().forcing, checkpoint_times=(0.25,))
    b = run(example1().initial_velocity, grid, ModelConfig(), forms, example1().forcing, checkpoint_times=(0.25,))
    assert set(a.checkpoints) == {4}
    assert a.final.U.tobytes() == b.final.U.tobytes()
    assert all(s.divergence < 1e-9 for s in a.summaries)


def test_refinement_reduces_error(forms_cache):
    prob = example1()
    errs = []
    for n in (4, 8):
        forms = forms_cache(n)
        traj = run(prob.initial_velocity, TimeGrid.from_final_time(1.0, 1 / n**2), ModelConfig(), forms, prob.forcing)
        errs.append(error_norms(traj.final, forms, prob).l2_velocity)
    assert np.isfinite(errs[1]) and errs[1] < errs[0]


def test_unforced_norm_strictly_decreasing(forms_cache):
    forms = forms_cache(4)
    traj = run(example2().initial_velocity, TimeGrid(1 / 16, 16), ModelConfig(), forms)
    norms = np.array([s.norm_u for s in traj.summaries])
    assert np.all(np.diff(norms) < 0)
