import numpy as np
import pytest

from mfgexec.market_sim import (EquilibriumEngine, evaluate_objective,
                                fluid_deterministic_path, run_finite_game,
                                simulate_latent_and_price)
from mfgexec.model import (GameSpec, LatentMarketModel, PopulationSpec,
                           SubPopulationSpec, TimeGrid)
from mfgexec.riccati import h2_gain

from cases import (HORIZON, benchmark_game, benchmark_market,
                   benchmark_population, default_grid)


def small_game(n1=4, n2=2):
    return benchmark_game(n_agents=(n1, n2))


def trivial_market(m0=100.0):
    """Single latent state, price pinned at it: no ticks ever fire."""
    return LatentMarketModel(theta_states=(5.0,),
                             generator=np.zeros((1, 1)),
                             prior=(1.0,),
                             kappa=360.0, sigma=0.0, alpha_tick=0.01,
                             f0=5.0, horizon=HORIZON)


def test_quote_decomposition_exact():
    spec = small_game()
    grid = default_grid(n_steps=200)
    traj = run_finite_game(spec, grid, seed=11)
    lam = spec.population.lam
    expected = traj.f + lam * traj.inventory.mean(axis=0)
    assert np.array_equal(traj.s, expected)


def test_objective_recompute_matches_stored():
    spec = small_game()
    grid = default_grid(n_steps=150)
    traj = run_finite_game(spec, grid, seed=3)
    for j in range(spec.n_agents):
        assert evaluate_objective(traj, spec, j) == traj.objectives[j]


def test_replications_deterministic():
    spec = small_game()
    grid = default_grid(n_steps=100)
    a = run_finite_game(spec, grid, seed=42, replication=2)
    b = run_finite_game(spec, grid, seed=42, replication=2)
    assert np.array_equal(a.s, b.s)
    assert np.array_equal(a.posterior, b.posterior)
    assert np.array_equal(a.inventory, b.inventory)
    assert np.array_equal(a.objectives, b.objectives)
    c = run_finite_game(spec, grid, seed=42, replication=3)
    assert not np.array_equal(a.s, c.s)


def test_thinning_dominates_realized_intensity():
    market = benchmark_market()
    grid = default_grid(n_steps=400)
    rng = np.random.default_rng(5)
    latent = simulate_latent_and_price(market, grid, rng)
    assert latent.thinning_max_ratio <= 1.0 + 1e-12
    assert latent.n_accepted <= latent.n_candidates
    assert latent.n_accepted > 0


def test_event_times_ordered_and_consistent_with_price():
    market = benchmark_market()
    grid = default_grid(n_steps=250)
    rng = np.random.default_rng(17)
    latent = simulate_latent_and_price(market, grid, rng)
    t = grid.t
    for i, interval in enumerate(latent.events):
        times = [ev[0] for ev in interval]
        assert times == sorted(times)
        for when, direction in interval:
            assert t[i] < when < t[i + 1]
            assert direction in (1, -1)
        net = sum(d for _, d in interval)
        jump = latent.f[i + 1] - latent.f[i]
        assert jump == pytest.approx(net * market.alpha_tick, abs=1e-12)


def test_kappa_zero_gives_flat_poisson_ticks():
    market = LatentMarketModel(theta_states=(4.95, 5.05),
                               generator=np.array([[-1.0, 1.0], [1.0, -1.0]]),
                               prior=(0.5, 0.5),
                               kappa=0.0, sigma=50.0, alpha_tick=0.01,
                               f0=5.0, horizon=1.0)
    grid = TimeGrid.uniform(1.0, 50)
    rng = np.random.default_rng(23)
    counts = []
    for _ in range(200):
        latent = simulate_latent_and_price(market, grid, rng)
        assert latent.n_candidates == latent.n_accepted
        counts.append(latent.n_accepted)
    counts = np.array(counts, dtype=float)
    rate = 2.0 * market.sigma * market.horizon
    se = np.sqrt(rate / len(counts))
    assert abs(counts.mean() - rate) < 4.0 * se


def test_forced_schedule_respected():
    market = benchmark_market()
    grid = default_grid(n_steps=100)
    rng = np.random.default_rng(1)
    latent = simulate_latent_and_price(market, grid, rng,
                                       forced_theta=[(0.0, 0), (0.5, 1)])
    t = grid.t
    assert np.all(latent.theta_idx[t < 0.5] == 0)
    assert np.all(latent.theta_idx[t >= 0.5] == 1)


def test_fluid_path_matches_closed_form():
    market = benchmark_market()
    grid = default_grid(n_steps=64)
    ak = market.alpha_tick * market.kappa
    idx, f, drive = fluid_deterministic_path(market, grid, [(0.0, 0)])
    th = market.theta_states[0]
    expect = th + (market.f0 - th) * np.exp(-ak * np.asarray(grid.t))
    assert np.allclose(f, expect, rtol=0, atol=1e-12)
    assert np.allclose(drive, ak * (th - expect), rtol=0, atol=1e-10)

    # mid-horizon switch: restart the closed form from the cut
    idx2, f2, _ = fluid_deterministic_path(market, grid,
                                           [(0.0, 0), (0.5, 1)])
    th2 = market.theta_states[1]
    f_cut = th + (market.f0 - th) * np.exp(-ak * 0.5)
    late = np.asarray(grid.t) >= 0.5
    expect2 = th2 + (f_cut - th2) * np.exp(-ak * (np.asarray(grid.t)[late] - 0.5))
    assert np.allclose(f2[late], expect2, rtol=0, atol=1e-12)


def test_trivial_market_mean_field_matches_rk4():
    # no ticks, flat forecast: the class mean obeys the pure gain pull,
    # integrated here with classic fixed-step RK4 away from the endpoint
    pop = PopulationSpec(subpops=(SubPopulationSpec(
        a=1e-4, phi=1e-2, psi=100.0, p=1.0, m0=100.0, s0=0.0),), lam=0.0)
    market = trivial_market()
    grid = default_grid(n_steps=1000)
    spec = GameSpec(population=pop, market=market, n_agents_per_subpop=(3,))
    traj = run_finite_game(spec, grid, seed=0)

    sub = pop.subpops[0]
    inv2a = 1.0 / (2.0 * sub.a)

    def rate(t):
        return inv2a * float(h2_gain(sub, np.array([t]), HORIZON)[0])

    dt = grid.dt
    qs = np.empty(grid.n_steps + 1)
    qs[0] = sub.m0
    for i in range(grid.n_steps):
        t0 = grid.t[i]
        y = qs[i]
        k1 = rate(t0) * y
        k2 = rate(t0 + 0.5 * dt) * (y + 0.5 * dt * k1)
        k3 = rate(t0 + 0.5 * dt) * (y + 0.5 * dt * k2)
        k4 = rate(t0 + dt) * (y + dt * k3)
        qs[i + 1] = y + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0

    mask = np.asarray(grid.t) <= 0.9
    engine_q = traj.equilibrium.q_bar[:, 0]
    assert np.max(np.abs(engine_q[mask] - qs[mask])) < 1e-4 * sub.m0
    assert abs(engine_q[-1]) < 1e-2 * sub.m0
    # all agents identical here, so the empirical mean rides the model mean
    assert np.allclose(traj.mean_inventory[:, 0], engine_q, atol=1e-9)


def test_inventory_increments_track_controls_under_refinement():
    pop = benchmark_population()
    market = trivial_market()
    spec = GameSpec(population=pop, market=market,
                    n_agents_per_subpop=(4, 2))

    def worst_mismatch(n_steps):
        grid = default_grid(n_steps=n_steps)
        traj = run_finite_game(spec, grid, seed=9)
        inc = np.diff(traj.inventory, axis=1)
        stepped = traj.control[:, :-1] * grid.dt
        # ignore the last tenth, where the gain and the controls blow up
        keep = np.asarray(grid.t)[:-1] <= 0.9
        return np.max(np.abs(inc[:, keep] - stepped[:, keep]))

    coarse = worst_mismatch(250)
    fine = worst_mismatch(500)
    assert coarse / fine > 2.5
    assert coarse / fine < 6.0


def test_record_paths_off_keeps_aggregates():
    spec = small_game()
    grid = default_grid(n_steps=120)
    full = run_finite_game(spec, grid, seed=77)
    lean = run_finite_game(spec, grid, seed=77, record_paths=False)
    assert lean.inventory is None and lean.cash is None
    assert np.array_equal(full.mean_inventory, lean.mean_inventory)
    assert np.array_equal(full.mean_control, lean.mean_control)
    assert np.array_equal(full.objectives, lean.objectives)
    assert np.array_equal(full.s, lean.s)


def test_deviation_overrides_one_agent():
    spec = small_game()
    grid = default_grid(n_steps=100)
    base = run_finite_game(spec, grid, seed=13)
    dev_path = np.zeros(grid.n_steps)
    devd = run_finite_game(spec, grid, seed=13, deviation=(0, dev_path))
    assert np.array_equal(devd.control[0, :-1], dev_path)
    # a zero-control deviator just sits on its initial inventory
    assert np.allclose(devd.inventory[0], devd.inventory[0, 0], atol=1e-12)
    # time-zero state is shared, so everyone else starts from the same control
    assert np.array_equal(base.control[1:, 0], devd.control[1:, 0])
    assert devd.objectives[0] != base.objectives[0]


def test_benchmark_replication_healthy():
    spec = benchmark_game()
    grid = default_grid(n_steps=1000)
    engine = EquilibriumEngine(spec.population, spec.market, grid)
    traj = run_finite_game(spec, grid, seed=2024, engine=engine)
    sums = traj.posterior.sum(axis=1)
    assert np.max(np.abs(sums - 1.0)) < 1e-10
    assert traj.diagnostics.clamp_count == 0
    assert traj.diagnostics.thinning_max_ratio <= 1.0 + 1e-12
    assert traj.diagnostics.recon_gap_max < 0.1
    q0_scale = np.max(np.abs(traj.inventory[:, 0]))
    assert np.max(np.abs(traj.inventory[:, -1])) < 1e-2 * q0_scale
