"""Aggregate drive quadrature, mean-field sweep, and agent feedback."""

import numpy as np

from mfgexec.equilibrium import (AgentState, advance_mean_field, agent_control,
                                 build_drive_table, class_controls, compute_g1,
                                 deterministic_g1_path, solve_equilibrium_path)
from mfgexec.filtering import (AlphaForecast, FilterState, alpha_forecast,
                               build_forecast_kernel)
from mfgexec.model import (PopulationSpec, SubPopulationSpec, TimeGrid,
                           coupling_matrices)
from mfgexec.riccati import (OrderedExponentialTable, RiccatiSolution,
                             ordered_exponential, solve_g2)

from cases import benchmark_market, benchmark_population, default_grid


def _frozen_table(pop, grid, g2_const):
    g2_path = np.tile(np.asarray(g2_const, dtype=float),
                      (grid.n_steps + 1, 1, 1))
    return OrderedExponentialTable(
        grid=grid, factors=ordered_exponential(pop, g2_path, grid).factors), g2_path


def test_g1_closed_form_single_class():
    # frozen g2 and constant drive make the quadrature a scalar integral:
    # g1(t) = c (exp(r (T - t)) - 1) / r with r = (lam p + g2) / (2a)
    pop = PopulationSpec(
        subpops=(SubPopulationSpec(a=0.5, phi=0.0, psi=1.0, p=1.0,
                                   m0=0.0, s0=0.0),),
        lam=1.0)
    grid = default_grid(1000)
    table, g2_path = _frozen_table(pop, grid, [[-3.0]])
    riccati = RiccatiSolution(grid=grid, g2=g2_path, y1_worst_condition=1.0)
    r, c = -2.0, 1.0
    for base in (0, 250, 600, 999, 1000):
        fc = AlphaForecast(base_time=grid.t[base],
                           horizon_grid=grid.t[base:],
                           values=np.full(grid.n_steps - base + 1, c))
        got = compute_g1(pop, riccati, table, base, fc)[0]
        tau = grid.horizon - grid.t[base]
        want = c * (np.exp(r * tau) - 1.0) / r
        err = abs(got - want) / max(abs(want), 1e-12)
        assert err <= 1e-6, (base, got, want)


def test_g1_terminal_value_is_zero():
    pop = benchmark_population()
    grid = default_grid(200)
    sol = solve_g2(pop, grid)
    table = ordered_exponential(pop, sol.g2, grid)
    fc = AlphaForecast(base_time=grid.horizon, horizon_grid=grid.t[-1:],
                       values=np.zeros(1))
    assert np.all(compute_g1(pop, sol, table, grid.n_steps, fc) == 0.0)


def test_drive_table_matches_direct_quadrature():
    pop = benchmark_population()
    mkt = benchmark_market()
    grid = default_grid(400)
    sol = solve_g2(pop, grid)
    table = ordered_exponential(pop, sol.g2, grid)
    kernel = build_forecast_kernel(mkt, grid.dt, grid.n_steps)
    drive = build_drive_table(pop, table, kernel)
    rng = np.random.default_rng(3)
    for base in (0, 37, 199, 398, 400):
        pi1 = rng.uniform(0.05, 0.95)
        pi = np.array([pi1, 1.0 - pi1])
        f = rng.uniform(4.9, 5.1)
        st = FilterState(t=grid.t[base], posterior=pi, f=f)
        fc = alpha_forecast(st, mkt, grid.t[base:])
        direct = compute_g1(pop, sol, table, base, fc)
        fast = drive.g1(base, pi, f)
        scale = max(np.max(np.abs(direct)), 1e-12)
        assert np.max(np.abs(direct - fast)) <= 1e-9 * scale, (base, direct, fast)


def test_deterministic_g1_path_matches_direct():
    pop = benchmark_population()
    grid = default_grid(300)
    sol = solve_g2(pop, grid)
    table = ordered_exponential(pop, sol.g2, grid)
    alpha_path = 0.3 * np.exp(-2.0 * grid.t) - 0.1
    path = deterministic_g1_path(pop, table, alpha_path)
    assert np.all(path[-1] == 0.0)
    for base in (0, 123, 299):
        fc = AlphaForecast(base_time=grid.t[base], horizon_grid=grid.t[base:],
                           values=alpha_path[base:])
        direct = compute_g1(pop, sol, table, base, fc)
        scale = max(np.max(np.abs(direct)), 1e-12)
        assert np.max(np.abs(direct - path[base])) <= 1e-9 * scale


def test_mean_field_invariants_hold_exactly():
    pop = benchmark_population()
    grid = default_grid(500)
    sol = solve_g2(pop, grid)
    table = ordered_exponential(pop, sol.g2, grid)
    alpha_path = 0.2 * np.sin(3.0 * grid.t)
    g1 = deterministic_g1_path(pop, table, alpha_path)
    eq = solve_equilibrium_path(pop, sol, table, g1)

    assert np.allclose(eq.q_bar[0], [100.0, 0.0], rtol=0, atol=0)
    # node rule: nu_bar = inv(2a) (g1 + g2 q_bar) at every node
    cm = coupling_matrices(pop)
    node = np.array([cm.inv_two_a @ (g1[i] + sol.g2[i] @ eq.q_bar[i])
                     for i in range(grid.n_steps + 1)])
    scale = np.max(np.abs(eq.nu_bar))
    assert np.max(np.abs(node - eq.nu_bar)) <= 1e-12 * scale
    # trapezoid advance between every pair of nodes
    dt = grid.dt
    resid = eq.q_bar[1:] - eq.q_bar[:-1] \
        - 0.5 * dt * (eq.nu_bar[1:] + eq.nu_bar[:-1])
    assert np.max(np.abs(resid)) <= 1e-12 * max(1.0, np.max(np.abs(eq.q_bar)))


def test_mean_field_liquidates_benchmark():
    pop = benchmark_population()
    grid = default_grid()
    sol = solve_g2(pop, grid)
    table = ordered_exponential(pop, sol.g2, grid)
    eq = solve_equilibrium_path(pop, sol, table,
                                np.zeros((grid.n_steps + 1, pop.n_classes)))
    assert abs(eq.q_bar[-1, 0]) < 1e-2 * abs(eq.q_bar[0, 0])
    assert np.max(np.abs(eq.q_bar[-1])) < 0.5


def test_g1_energy_stable_under_refinement():
    pop = benchmark_population()
    energies = []
    for n in (500, 1000, 2000):
        grid = default_grid(n)
        sol = solve_g2(pop, grid)
        table = ordered_exponential(pop, sol.g2, grid)
        alpha_path = 0.18 * np.exp(-1.5 * grid.t) * np.cos(2.0 * grid.t)
        g1 = deterministic_g1_path(pop, table, alpha_path)
        sq = np.sum(g1 * g1, axis=1)
        energies.append(grid.dt * float(np.sum(sq) - 0.5 * (sq[0] + sq[-1])))
    e = np.array(energies)
    assert np.max(np.abs(e - e[-1])) <= 1e-4 * abs(e[-1]), e


def test_agent_control_feedback_form():
    agent = AgentState(subpop_index=0, inventory=120.0, cash=0.0)
    nu = agent_control(agent, nu_bar_k=-50.0, q_bar_k=100.0, h2_k=-2e-3,
                       a_k=1e-4)
    assert nu == -50.0 + (-2e-3 / 2e-4) * 20.0
