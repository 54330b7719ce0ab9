import numpy as np
import pytest

from hcpe import grid as g
from hcpe import scenarios, solver, thermo
from hcpe.diagnostics import Physics, State, residual_full_system, total_energy
from hcpe.errors import RegimeError
from hcpe.grid import Grid
from hcpe.solver import SolverConfig
from hcpe.thermo import Equilibrium


@pytest.fixture(scope="module")
def grid():
    return Grid(16, 16, 17)


@pytest.fixture(scope="module")
def eq():
    return Equilibrium.create(1.0, 1.0, 17)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dt=0.0)
    with pytest.raises(ValueError):
        SolverConfig(scheme="rk4")
    with pytest.raises(ValueError):
        SolverConfig(picard_flow="sometimes")
    assert SolverConfig(dt=0.01, t_end=0.1).n_steps == 10


def test_equilibrium_tendencies_vanish(grid, eq):
    tend = solver.tendencies_eulerian(grid, scenarios.equilibrium(grid, eq), Physics())
    for f in (tend.d_rho_bar, tend.d_v, tend.d_theta):
        assert np.max(np.abs(f)) < 1e-12


def test_equilibrium_is_preserved_for_100_steps(small_grid, eq9):
    s0 = scenarios.equilibrium(small_grid, eq9)
    integ = solver.EulerianIntegrator(small_grid, eq9, Physics(), 1e-2)
    s = s0
    for _ in range(100):
        s, _ = integ.step(s)
    assert np.max(np.abs(s.rho_bar - s0.rho_bar)) <= 1e-12
    assert np.max(np.abs(s.v)) <= 1e-12
    assert np.max(np.abs(s.theta - s0.theta)) <= 1e-12


def test_tendencies_zero_the_recast_residual(grid, eq):
    state = scenarios.build("manufactured-1", grid, eq, 1e-2)
    physics = Physics(mu=0.08, mu_prime=0.03)
    tend = solver.tendencies_eulerian(grid, state, physics)
    res = residual_full_system(grid, state, tend, physics)
    for name, r in res.items():
        assert np.max(np.abs(r)) < 1e-13, name


@pytest.mark.parametrize("variant", ["full", "horizontal", "none"])
def test_tendencies_zero_the_residual_with_heating_and_source(grid, eq, variant):
    x, _, z = grid.mesh
    q = 0.1 * np.cos(2 * np.pi * x) * np.cos(np.pi * z)
    physics = Physics(viscous_heating=variant, heat_source=lambda t: q)
    state = scenarios.build("shear-v", grid, eq, 1e-2)
    tend = solver.tendencies_eulerian(grid, state, physics)
    res = residual_full_system(grid, state, tend, physics)
    assert max(np.max(np.abs(r)) for r in res.values()) < 1e-13


def test_z_independent_data_reduce_to_a_2d_system():
    grid = Grid(16, 16, 17)
    eq = Equilibrium.create(1.0, 1.0, 17)
    mu, mu_p = 0.1, 0.07
    x, y, _ = grid.mesh
    x2, y2 = grid.mesh2
    a, b, c = 0.02, -0.015, 0.03
    k = 2 * np.pi
    rho_bar = 1.0 + c * np.cos(k * x2)
    v = np.stack([a * np.sin(k * y), b * np.cos(k * x)])
    state = State(rho_bar, v, np.ones(grid.shape3))
    tend = solver.tendencies_eulerian(grid, state, Physics(mu, mu_p))
    bhat = thermo.Bhat(np.ones(17))
    m = g.vertical_mean(bhat)
    # div v = 0, so only advection of rho_bar survives
    d_rho = -m * (a * np.sin(k * y2)) * (-k * c * np.sin(k * x2))
    np.testing.assert_allclose(tend.d_rho_bar, d_rho, atol=1e-12)
    rho = rho_bar[..., None] * bhat
    r3 = rho_bar[..., None]
    d_v1 = -(b * np.cos(k * x)) * (k * a * np.cos(k * y)) - mu * k**2 * a * np.sin(k * y) / rho + k * c * np.sin(k * x) / r3
    d_v2 = -(a * np.sin(k * y)) * (-k * b * np.sin(k * x)) - mu * k**2 * b * np.cos(k * x) / rho
    np.testing.assert_allclose(tend.d_v[0], d_v1, atol=1e-10)
    np.testing.assert_allclose(tend.d_v[1], d_v2, atol=1e-10)


def run(grid, eq, scenario, eps, dt, t_end, **kw):
    cfg = SolverConfig(dt=dt, t_end=t_end, output_every=10**6, **kw)
    return solver.solve(grid, eq, scenarios.build(scenario, grid, eq, eps), cfg)


def test_mass_is_conserved(grid, eq):
    traj = run(grid, eq, "manufactured-1", 1e-2, 1e-2, 0.1)
    m0 = grid.integrate(traj.states[0].rho_bar)
    assert abs(grid.integrate(traj.final.rho_bar) - m0) <= 10 * 1e-12


def test_energy_drift_is_first_order_in_dt(grid, eq):
    drifts = []
    for dt in (4e-3, 2e-3, 1e-3):
        traj = run(grid, eq, "theta-bump", 1e-2, dt, 0.04)
        e0 = total_energy(grid, traj.states[0])
        drifts.append(abs(total_energy(grid, traj.final) - e0) / e0)
    assert 1.6 < drifts[0] / drifts[1] < 2.6
    assert 1.6 < drifts[1] / drifts[2] < 2.6


def test_manufactured_solution_converges_at_first_order_in_time(grid, eq):
    sol = scenarios.manufactured_solution(eq, 1e-2)
    physics = Physics()
    source = sol.discrete_source(grid, physics)
    errs = []
    for dt in (0.04, 0.02, 0.01):
        cfg = SolverConfig(dt=dt, t_end=0.4, output_every=10**6)
        traj = solver.solve(grid, eq, sol.state(grid, 0.0), cfg, source=source)
        exact = sol.state(grid, 0.4)
        errs.append(max(np.max(np.abs(traj.final.v - exact.v)), np.max(np.abs(traj.final.theta - exact.theta))))
    assert errs[-1] < 1e-4
    assert 1.8 < errs[0] / errs[1] < 2.2
    assert 1.8 < errs[1] / errs[2] < 2.2


def test_boundary_slopes_stay_at_discretization_zero():
    slopes = []
    for nz in (17, 33):
        grid = Grid(8, 8, nz)
        eq = Equilibrium.create(1.0, 1.0, nz)
        final = run(grid, eq, "manufactured-1", 1e-2, 1e-2, 0.2).final
        slopes.append(max(np.max(np.abs(sl)) for f in (final.v[0], final.v[1], final.theta) for sl in g.boundary_slope(f)))
    assert slopes[1] < 1e-3
    assert slopes[0] / slopes[1] > 3.0


def test_solution_class_norms_scale_with_amplitude(grid, eq):
    reports = [solver.check_solution_class(grid, eq, run(grid, eq, "theta-bump", e, 1e-2, 0.1)) for e in (2e-3, 1e-3)]
    for key in ("sup_H3_rho_bar", "L2_H4_v", "L2_H4_theta", "H1_H2_theta"):
        assert reports[0][key] / reports[1][key] == pytest.approx(2.0, rel=0.2), key
    assert reports[0]["brackets_ok"]


def test_equilibrium_solution_class_is_zero(small_grid, eq9):
    rep = solver.check_solution_class(small_grid, eq9, run(small_grid, eq9, "equilibrium", 0.0, 1e-2, 0.05))
    assert rep["sup_H3_rho_bar"] == 0.0 and rep["L2_H4_v"] == 0.0 and rep["L2_H4_theta"] == 0.0


def test_large_data_leave_the_brackets(small_grid, eq9):
    with pytest.raises(RegimeError) as info:
        run(small_grid, eq9, "theta-bump", 0.6, 1e-2, 0.1)
    assert info.value.time == 0.0
    assert info.value.field == "theta"


def test_regime_exit_during_run_keeps_partial_trajectory(small_grid, eq9):
    with pytest.raises(RegimeError) as info:
        run(small_grid, eq9, "shear-v", 40.0, 1e-2, 1.0)
    assert info.value.time is not None and info.value.time > 0
    assert info.value.trajectory.violation["time"] == info.value.time


def test_trajectory_times_increase():
    traj = solver.Trajectory()
    traj.append(State(np.zeros((4, 4)), np.zeros((2, 4, 4, 3)), np.ones((4, 4, 3)), 0.1))
    with pytest.raises(ValueError):
        traj.append(State(np.zeros((4, 4)), np.zeros((2, 4, 4, 3)), np.ones((4, 4, 3)), 0.1))


# -- Picard ---------------------------------------------------------------------------


def picard(grid, eq, scenario, eps, dt=2e-3, t_end=0.04, **kw):
    return run(grid, eq, scenario, eps, dt, t_end, scheme="picard-lagrangian", **kw)


def test_picard_at_equilibrium_takes_one_iteration(small_grid, eq9):
    traj = picard(small_grid, eq9, "equilibrium", 0.0)
    assert traj.picard["iterations"] == 1 and traj.picard["converged"]
    assert np.max(np.abs(traj.final.theta - 1.0)) == 0.0


def test_picard_contraction_ratio_is_linear_in_amplitude(grid, eq):
    first = []
    for eps in (2e-3, 1e-3):
        traj = picard(grid, eq, "manufactured-1", eps, picard_tol=1e-14, picard_max_iters=3)
        first.append(traj.picard["ratios"][0])
    assert first[0] < 0.5
    assert first[0] / first[1] == pytest.approx(2.0, rel=0.3)


def test_picard_matches_eulerian(grid, eq):
    p = picard(grid, eq, "theta-bump", 1e-3)
    e = run(grid, eq, "theta-bump", 1e-3, 2e-3, 0.04)
    assert p.picard["converged"]
    diff = max(np.max(np.abs(p.final.theta - e.final.theta)), np.max(np.abs(p.final.v - e.final.v)))
    assert diff <= 10 * 1e-3 * ((grid.nz - 1) ** -2 + 2e-3)


def test_frozen_flow_variant_converges_to_the_same_trajectory(grid, eq):
    a = picard(grid, eq, "theta-bump", 1e-3)
    b = picard(grid, eq, "theta-bump", 1e-3, picard_flow="frozen")
    assert b.picard["converged"]
    assert np.max(np.abs(a.final.theta - b.final.theta)) < 1e-3 * 1e-3


def test_sources_need_the_eulerian_scheme(small_grid, eq9):
    cfg = SolverConfig(scheme="picard-lagrangian")
    with pytest.raises(ValueError):
        solver.solve(small_grid, eq9, scenarios.equilibrium(small_grid, eq9), cfg, source=lambda t: None)
