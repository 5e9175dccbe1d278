"""Finite-game simulator: latent chain, tick stream, agents, accounting.

The chain is simulated with exact exponential clocks (or forced through a
given switch schedule); the tick stream comes from thinning against a
dominating bound refreshed per grid interval and after every accepted
tick, so the proposed intensity always dominates the realized one.  The
game loop runs the filter and the mean-field machinery per grid step and
advances follower inventories by the exact within-class gap decay.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .equilibrium import (EquilibriumSolution, advance_mean_field,
                          build_drive_table, class_controls)
from .filtering import FilterState, build_forecast_kernel, jump_update, propagate
from .model import GameSpec, LatentMarketModel, PopulationSpec, TimeGrid
from .riccati import (gap_decay_profile, h2_gain, ordered_exponential,
                      solve_g2)


@dataclass(frozen=True)
class LatentPaths:
    """Realized chain and unaffected price, with per-interval tick events."""

    grid: TimeGrid
    theta_idx: np.ndarray                  # (n + 1,) state index at nodes
    f: np.ndarray                          # (n + 1,) price at nodes
    events: tuple                          # per interval: ((time, dir), ...)
    switch_times: np.ndarray
    switch_states: np.ndarray
    thinning_max_ratio: float              # realized / proposed intensity
    n_candidates: int
    n_accepted: int


@dataclass(frozen=True)
class SimDiagnostics:
    clamp_count: int
    recon_gap_max: float                   # max |lam| * |empirical - model|
    thinning_max_ratio: float
    n_candidates: int
    n_accepted: int


@dataclass(frozen=True)
class GameTrajectory:
    """One finite-game replication with per-agent accounting."""

    grid: TimeGrid
    s: np.ndarray                          # (n + 1,) quoted price
    f: np.ndarray                          # (n + 1,) unaffected price
    theta_idx: np.ndarray                  # (n + 1,)
    posterior: np.ndarray                  # (n + 1, M)
    subpop_index: np.ndarray               # (N,)
    inventory: Optional[np.ndarray]        # (N, n + 1) when paths recorded
    cash: Optional[np.ndarray]
    control: Optional[np.ndarray]
    mean_inventory: np.ndarray             # (n + 1, K) empirical class means
    mean_control: np.ndarray               # (n + 1, K)
    objectives: np.ndarray                 # (N,)
    equilibrium: EquilibriumSolution
    rng_seed: int
    replication: int
    diagnostics: SimDiagnostics


def _chain_path(market: LatentMarketModel, rng, forced_theta):
    """Switch times/states, exact clocks unless a schedule is forced."""
    horizon = market.horizon
    if forced_theta is not None:
        times = np.array([float(t) for t, _ in forced_theta])
        states = np.array([int(i) for _, i in forced_theta])
        if len(times) == 0 or times[0] != 0.0:
            raise ValueError("forced chain schedule must start at time 0")
        return times, states
    gen = np.asarray(market.generator, dtype=float)
    m = market.n_states
    state = int(rng.choice(m, p=np.asarray(market.prior, dtype=float)))
    times, states = [0.0], [state]
    t = 0.0
    while True:
        rate = -gen[state, state]
        if rate <= 0.0:
            break
        t = t + rng.exponential(1.0 / rate)
        if t >= horizon:
            break
        jump_p = gen[state].copy()
        jump_p[state] = 0.0
        state = int(rng.choice(m, p=jump_p / rate))
        times.append(t)
        states.append(state)
    return np.array(times), np.array(states, dtype=int)


def simulate_latent_and_price(market: LatentMarketModel, grid: TimeGrid, rng,
                              forced_theta=None) -> LatentPaths:
    """Simulate the chain and the tick-driven unaffected price.

    Ticks are thinned against the direction-free bound
    sigma + kappa * max_m |theta_m - F|, recomputed at each interval start
    and after every accepted tick (F moves, so the bound must follow).
    """
    switch_times, switch_states = _chain_path(market, rng, forced_theta)
    theta_vals = np.asarray(market.theta_states, dtype=float)

    def state_at(t):
        return switch_states[np.searchsorted(switch_times, t, side="right") - 1]

    t_nodes = np.asarray(grid.t)
    n = grid.n_steps
    f_nodes = np.empty(n + 1)
    theta_idx = np.empty(n + 1, dtype=int)
    events = []
    f = market.f0
    max_ratio = 0.0
    n_cand = 0
    n_acc = 0
    f_nodes[0] = f
    theta_idx[0] = state_at(0.0)
    for i in range(n):
        t_lo, t_hi = t_nodes[i], t_nodes[i + 1]
        interval = []
        bound = market.sigma + market.kappa * np.max(np.abs(theta_vals - f))
        t_c = t_lo
        while bound > 0.0:
            t_c = t_c + rng.exponential(1.0 / (2.0 * bound))
            if t_c >= t_hi:
                break
            n_cand += 1
            th = theta_vals[state_at(t_c)]
            gap = th - f
            up = market.sigma + market.kappa * max(gap, 0.0)
            down = market.sigma + market.kappa * max(-gap, 0.0)
            max_ratio = max(max_ratio, max(up, down) / bound)
            u = rng.random()
            if u < up / (2.0 * bound):
                direction = 1
            elif u < (up + down) / (2.0 * bound):
                direction = -1
            else:
                continue
            n_acc += 1
            f += direction * market.alpha_tick
            interval.append((t_c, direction))
            bound = market.sigma + market.kappa * np.max(np.abs(theta_vals - f))
        events.append(tuple(interval))
        f_nodes[i + 1] = f
        theta_idx[i + 1] = state_at(t_hi)
    return LatentPaths(grid=grid, theta_idx=theta_idx, f=f_nodes,
                       events=tuple(events), switch_times=switch_times,
                       switch_states=switch_states,
                       thinning_max_ratio=max_ratio,
                       n_candidates=n_cand, n_accepted=n_acc)


def fluid_deterministic_path(market: LatentMarketModel, grid: TimeGrid,
                             forced_theta):
    """Noise-free companion of the latent system for oracle scenarios.

    The chain follows the forced schedule and the price follows its mean
    pull, integrated exactly on each piece where the chain state is
    constant.  Returns (theta_idx, f, drive) on the grid nodes, where
    drive is the mean tick pressure alpha * kappa * (theta - f).
    """
    times = np.array([float(t) for t, _ in forced_theta])
    states = np.array([int(i) for _, i in forced_theta])
    theta_vals = np.asarray(market.theta_states, dtype=float)
    ak = market.alpha_tick * market.kappa
    t_nodes = np.asarray(grid.t)
    n = grid.n_steps
    f = np.empty(n + 1)
    idx = np.empty(n + 1, dtype=int)
    f[0] = market.f0
    idx[0] = states[0]
    for i in range(n):
        t_lo, t_hi = t_nodes[i], t_nodes[i + 1]
        cur = f[i]
        cuts = [t_lo] + [float(t) for t in times if t_lo < t < t_hi] + [t_hi]
        for a, b in zip(cuts[:-1], cuts[1:]):
            th = theta_vals[states[np.searchsorted(times, a, side="right") - 1]]
            cur = th + (cur - th) * np.exp(-ak * (b - a))
        f[i + 1] = cur
        idx[i + 1] = states[np.searchsorted(times, t_hi, side="right") - 1]
    drive = ak * (theta_vals[idx] - f)
    return idx, f, drive


# ---------------------------------------------------------------------------
# equilibrium engine and the game loop
# ---------------------------------------------------------------------------

class EquilibriumEngine:
    """Precomputed per-scenario tables shared across replications."""

    def __init__(self, pop: PopulationSpec, market: LatentMarketModel,
                 grid: TimeGrid):
        self.pop = pop
        self.market = market
        self.grid = grid
        self.riccati = solve_g2(pop, grid)
        self.table = ordered_exponential(pop, self.riccati.g2, grid)
        self.kernel = build_forecast_kernel(market, grid.dt, grid.n_steps)
        self.drive = build_drive_table(pop, self.table, self.kernel)
        self.h2 = np.column_stack([h2_gain(s, grid.t, grid.horizon)
                                   for s in pop.subpops])
        decs = [gap_decay_profile(s, grid) for s in pop.subpops]
        self.gap_rho = np.column_stack([d[0] for d in decs])      # (n, K)
        self.gap_cum = np.column_stack([d[1] for d in decs])      # (n + 1, K)
        self.a_vec = np.array([s.a for s in pop.subpops])
        self.m0_vec = np.array([s.m0 for s in pop.subpops])
        self.p_vec = pop.proportions()


def _class_means(values, sub_of, k):
    return np.array([values[sub_of == j].mean() for j in range(k)])


def run_finite_game(spec: GameSpec, grid: TimeGrid, seed: int,
                    replication: int = 0, engine: EquilibriumEngine = None,
                    forced_theta=None, deviation=None,
                    record_paths: bool = True) -> GameTrajectory:
    """One replication of the finite game under the engine's control rule.

    ``deviation``, when given, is (agent_index, control_path) and replaces
    that agent's control with the supplied per-interval values; the
    deviator's inventory then integrates by the explicit Euler sum since
    no closed-form gap decay applies to it.  A three-element form
    (agent_index, control_path, "offset") adds the path on top of the
    feedback rule instead of replacing it, which keeps the deviation
    adapted; comparisons against a deviated run should use a zero-offset
    baseline so the deviator's Euler integration bias differences out.
    """
    pop, market = spec.population, spec.market
    if engine is None:
        engine = EquilibriumEngine(pop, market, grid)
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(replication,)))

    latent = simulate_latent_and_price(market, grid, rng, forced_theta)

    n = grid.n_steps
    dt = grid.dt
    k = pop.n_classes
    counts = np.asarray(spec.n_agents_per_subpop, dtype=int)
    n_agents = int(counts.sum())
    sub_of = spec.subpop_of_agent()

    # initial inventories, class-major draw order
    q = np.empty(n_agents)
    pos = 0
    for j, s in enumerate(pop.subpops):
        q[pos:pos + counts[j]] = s.m0 + s.s0 * rng.standard_normal(counts[j])
        pos += counts[j]
    if spec.target_shift is not None:
        q = q - np.asarray(spec.target_shift, dtype=float)

    dev_index = None
    dev_mode = "replace"
    if deviation is not None:
        if len(deviation) == 3:
            dev_index, dev_path, dev_mode = deviation
        else:
            dev_index, dev_path = deviation
        if dev_mode not in ("replace", "offset"):
            raise ValueError("deviation mode must be 'replace' or 'offset'")
        dev_path = np.asarray(dev_path, dtype=float)
        q_dev = float(q[dev_index])

    a_of = engine.a_vec[sub_of]
    psi_of = np.array([pop.subpops[i].psi for i in sub_of])
    phi_of = np.array([pop.subpops[i].phi for i in sub_of])

    q_bar = np.empty((n + 1, k))
    nu_bar = np.empty((n + 1, k))
    g1 = np.empty((n + 1, k))
    posterior = np.empty((n + 1, market.n_states))
    s_path = np.empty(n + 1)
    mean_inv = np.empty((n + 1, k))
    mean_ctl = np.empty((n + 1, k))

    q_bar[0] = engine.m0_vec
    gap = q - q_bar[0][sub_of]

    inv_rec = np.empty((n_agents, n + 1)) if record_paths else None
    cash_rec = np.empty((n_agents, n + 1)) if record_paths else None
    ctl_rec = np.empty((n_agents, n + 1)) if record_paths else None

    cash = np.zeros(n_agents)
    sq_accum = np.zeros(n_agents)

    emp_mean = float(q.mean())
    s_path[0] = latent.f[0] + pop.lam * emp_mean
    f_hat = s_path[0] - pop.lam * float(engine.p_vec @ q_bar[0])
    state = FilterState(t=0.0, posterior=np.asarray(market.prior, dtype=float),
                        f=f_hat)
    posterior[0] = state.posterior
    g1[0] = engine.drive.g1(0, state.posterior, state.f)
    recon_max = abs(pop.lam) * abs(emp_mean - float(engine.p_vec @ q_bar[0]))

    for i in range(n):
        nu_bar[i] = class_controls(pop, g1[i], engine.riccati.g2[i], q_bar[i])
        ctl = nu_bar[i][sub_of] + (engine.h2[i][sub_of] / (2.0 * a_of)) * gap
        if dev_index is not None:
            if dev_mode == "replace":
                ctl[dev_index] = dev_path[i]
            else:
                ctl[dev_index] += dev_path[i]
        mean_ctl[i] = _class_means(ctl, sub_of, k)
        mean_inv[i] = _class_means(q, sub_of, k)
        if record_paths:
            inv_rec[:, i] = q
            cash_rec[:, i] = cash
            ctl_rec[:, i] = ctl

        cash = cash - (s_path[i] + a_of * ctl) * ctl * dt
        sq_accum += q * q

        # follower gaps contract by the closed-form factor on this interval
        gap = engine.gap_rho[i][sub_of] * gap

        # filter across the interval: no-event drift, then tick tilts in order
        state = propagate(state, market, dt)
        for (_, direction) in latent.events[i]:
            state = jump_update(state, market, direction)
        posterior[i + 1] = state.posterior

        # one-step predictor of the node means breaks the simultaneity
        # between the quote, the stripped price, and the mean-field advance
        q_bar_pred = q_bar[i] + dt * nu_bar[i]
        emp_pred = float(counts @ q_bar_pred) / n_agents + float(gap.mean())
        f_hat = latent.f[i + 1] + pop.lam * (emp_pred - float(engine.p_vec
                                                              @ q_bar_pred))
        state = replace(state, f=f_hat)

        g1[i + 1] = engine.drive.g1(i + 1, state.posterior, state.f)
        _, q_bar[i + 1] = advance_mean_field(
            pop, engine.riccati.g2[i], engine.riccati.g2[i + 1],
            g1[i], g1[i + 1], q_bar[i], dt)

        q = q_bar[i + 1][sub_of] + gap
        if dev_index is not None:
            q_dev = q_dev + float(ctl[dev_index]) * dt
            q[dev_index] = q_dev
            gap[dev_index] = q_dev - q_bar[i + 1][sub_of[dev_index]]

        emp_mean = float(q.mean())
        s_path[i + 1] = latent.f[i + 1] + pop.lam * emp_mean
        recon = abs(pop.lam) * abs(emp_mean - float(engine.p_vec @ q_bar[i + 1]))
        recon_max = max(recon_max, recon)

    nu_bar[n] = class_controls(pop, g1[n], engine.riccati.g2[n], q_bar[n])
    ctl = nu_bar[n][sub_of] + (engine.h2[n][sub_of] / (2.0 * a_of)) * gap
    if dev_index is not None:
        if dev_mode == "replace":
            ctl[dev_index] = dev_path[n - 1]
        else:
            ctl[dev_index] += dev_path[n - 1]
    mean_ctl[n] = _class_means(ctl, sub_of, k)
    mean_inv[n] = _class_means(q, sub_of, k)
    if record_paths:
        inv_rec[:, n] = q
        cash_rec[:, n] = cash
        ctl_rec[:, n] = ctl

    objectives = cash + q * (s_path[n] - psi_of * q) - phi_of * dt * sq_accum

    eq = EquilibriumSolution(grid=grid, g1=g1, nu_bar=nu_bar, q_bar=q_bar,
                             h2=engine.h2)
    diag = SimDiagnostics(clamp_count=state.clamp_count,
                          recon_gap_max=recon_max,
                          thinning_max_ratio=latent.thinning_max_ratio,
                          n_candidates=latent.n_candidates,
                          n_accepted=latent.n_accepted)
    return GameTrajectory(grid=grid, s=s_path, f=latent.f,
                          theta_idx=latent.theta_idx, posterior=posterior,
                          subpop_index=sub_of, inventory=inv_rec,
                          cash=cash_rec, control=ctl_rec,
                          mean_inventory=mean_inv, mean_control=mean_ctl,
                          objectives=objectives, equilibrium=eq,
                          rng_seed=seed, replication=replication,
                          diagnostics=diag)


def evaluate_objective(traj: GameTrajectory, spec: GameSpec,
                       agent: int) -> float:
    """Recompute one agent's realized objective from the stored paths.

    The accumulation order mirrors the game loop so a recompute from a
    recorded trajectory reproduces the stored value bit for bit.
    """
    if traj.inventory is None:
        raise ValueError("trajectory was run without recorded paths")
    sub = spec.population.subpops[traj.subpop_index[agent]]
    dt = traj.grid.dt
    q = traj.inventory[agent]
    ctl = traj.control[agent]
    cash = 0.0
    sq = 0.0
    for i in range(traj.grid.n_steps):
        cash = cash - (traj.s[i] + sub.a * ctl[i]) * ctl[i] * dt
        sq = sq + q[i] * q[i]
    qt = q[-1]
    return float(cash + qt * (traj.s[-1] - sub.psi * qt) - sub.phi * dt * sq)
