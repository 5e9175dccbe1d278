"""Scenario orchestration: run a configured mode, write plot-ready files.

Each output file starts with a single comment line (prefix '#') carrying
the engine version and the fully resolved configuration as JSON, so any
artifact can be traced back to the run that produced it.  Floats are
written with 17 significant digits; parsing them back reproduces the
doubles exactly.

Replications are seeded from independent streams derived from the one
configured seed, so their results do not depend on the order in which
they run.  Agent, sub-population, chain-state, and replication indices
are 1-based in file names and column names.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from . import __version__
from .config import (ScenarioConfig, to_game_spec, to_market, to_population,
                     to_time_grid)
from .equilibrium import deterministic_g1_path, solve_equilibrium_path
from .market_sim import (EquilibriumEngine, fluid_deterministic_path,
                         run_finite_game)
from .nash_eval import nash_gap_curve
from .riccati import ordered_exponential, solve_g2


def resolved_config_json(cfg: ScenarioConfig) -> str:
    """Canonical one-line JSON form of a configuration.

    Chain states inside forced_theta are numbered from 1, matching the
    configuration file convention.
    """
    data = dataclasses.asdict(cfg)
    if data["forced_theta"] is not None:
        data["forced_theta"] = [[when, state + 1]
                                for when, state in data["forced_theta"]]
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _write_csv(path: str, cfg: ScenarioConfig, columns, rows) -> str:
    with open(path, "w", encoding="utf-8", newline="") as out:
        out.write(f"# mfgexec {__version__} config={resolved_config_json(cfg)}\n")
        out.write(",".join(columns) + "\n")
        for row in rows:
            out.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def default_forced_theta(cfg: ScenarioConfig):
    """Configured schedule, or start in the most likely prior state."""
    if cfg.forced_theta is not None:
        return cfg.forced_theta
    prior = np.array(cfg.market.prior, dtype=float)
    return ((0.0, int(np.argmax(prior))),)


# ---------------------------------------------------------------------------
# csv emitters
# ---------------------------------------------------------------------------

def _equilibrium_columns(k: int):
    cols = ["t"]
    cols += [f"g1_{i}" for i in range(1, k + 1)]
    cols += [f"g2_{i}{j}" for i in range(1, k + 1) for j in range(1, k + 1)]
    cols += [f"nu_bar_{i}" for i in range(1, k + 1)]
    cols += [f"q_bar_{i}" for i in range(1, k + 1)]
    cols += [f"h2_{i}" for i in range(1, k + 1)]
    return cols


def write_equilibrium_csv(path, cfg, grid, g1, g2, nu_bar, q_bar, h2):
    k = g1.shape[1]
    rows = []
    for n in range(grid.n_steps + 1):
        row = [grid.t[n]]
        row.extend(g1[n])
        row.extend(g2[n].reshape(-1))
        row.extend(nu_bar[n])
        row.extend(q_bar[n])
        row.extend(h2[n])
        rows.append(row)
    return _write_csv(path, cfg, _equilibrium_columns(k), rows)


def write_paths_csv(path, cfg, traj):
    if traj.inventory is None:
        raise ValueError("trajectory was run without per-agent paths")
    n_agents = traj.inventory.shape[0]
    m = traj.posterior.shape[1]
    theta_states = np.array(cfg.market.theta_states, dtype=float)
    theta_value = theta_states[traj.theta_idx]
    cols = ["t", "S", "F", "theta"]
    cols += [f"posterior_{i}" for i in range(1, m + 1)]
    cols += [f"q_{j}" for j in range(1, n_agents + 1)]
    cols += [f"nu_{j}" for j in range(1, n_agents + 1)]
    rows = []
    for n in range(traj.grid.n_steps + 1):
        row = [traj.grid.t[n], traj.s[n], traj.f[n], theta_value[n]]
        row.extend(traj.posterior[n])
        row.extend(traj.inventory[:, n])
        row.extend(traj.control[:, n])
        rows.append(row)
    return _write_csv(path, cfg, cols, rows)


def write_objectives_csv(path, cfg, trajectories):
    """One row per agent, replications stacked in order (1-based labels)."""
    rows = []
    for traj in trajectories:
        for j, value in enumerate(traj.objectives):
            rows.append([j + 1, int(traj.subpop_index[j]) + 1, value])
    return _write_csv(path, cfg, ["agent", "subpop", "objective"], rows)


def write_nash_gap_csv(path, cfg, report):
    rows = [[n, gap, se, report.method]
            for n, gap, se in zip(report.n_values, report.gaps,
                                  report.std_errors)]
    return _write_csv(path, cfg, ["N", "gap", "stderr", "method"], rows)


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------

def _run_equilibrium(cfg: ScenarioConfig, out_dir: str):
    pop = to_population(cfg)
    market = to_market(cfg)
    grid = to_time_grid(cfg)
    forced = default_forced_theta(cfg)
    _, _, drive = fluid_deterministic_path(market, grid, forced)
    riccati = solve_g2(pop, grid)
    table = ordered_exponential(pop, riccati.g2, grid)
    g1 = deterministic_g1_path(pop, table, drive)
    eq = solve_equilibrium_path(pop, riccati, table, g1)
    csv_path = write_equilibrium_csv(
        os.path.join(out_dir, "equilibrium.csv"), cfg, grid,
        eq.g1, riccati.g2, eq.nu_bar, eq.q_bar, eq.h2)
    written = [csv_path]
    if cfg.figures:
        from . import plots
        written.append(plots.render_equilibrium(
            os.path.join(out_dir, "equilibrium.png"), grid,
            eq.nu_bar, eq.q_bar, eq.h2, eq.g1))
    return written


def _simulate_trajectories(cfg: ScenarioConfig):
    spec = to_game_spec(cfg)
    grid = to_time_grid(cfg)
    engine = EquilibriumEngine(spec.population, spec.market, grid)
    return [run_finite_game(spec, grid, cfg.seed, replication=rep,
                            engine=engine, forced_theta=cfg.forced_theta)
            for rep in range(cfg.replications)], engine


def _run_simulate(cfg: ScenarioConfig, out_dir: str):
    trajectories, engine = _simulate_trajectories(cfg)
    first = trajectories[0]
    written = [write_equilibrium_csv(
        os.path.join(out_dir, "equilibrium.csv"), cfg, first.grid,
        first.equilibrium.g1, engine.riccati.g2,
        first.equilibrium.nu_bar, first.equilibrium.q_bar,
        first.equilibrium.h2)]
    for rep, traj in enumerate(trajectories, start=1):
        written.append(write_paths_csv(
            os.path.join(out_dir, f"paths_{rep}.csv"), cfg, traj))
    written.append(write_objectives_csv(
        os.path.join(out_dir, "objectives.csv"), cfg, trajectories))
    if cfg.figures:
        from . import plots
        written.append(plots.render_paths(
            os.path.join(out_dir, "figure_paths.png"), first,
            cfg.market.theta_states))
        written.append(plots.render_equilibrium(
            os.path.join(out_dir, "equilibrium.png"), first.grid,
            first.equilibrium.nu_bar, first.equilibrium.q_bar,
            first.equilibrium.h2, first.equilibrium.g1))
    return written


def _run_nash_gap(cfg: ScenarioConfig, out_dir: str):
    pop = to_population(cfg)
    market = to_market(cfg)
    grid = to_time_grid(cfg)
    report = nash_gap_curve(pop, market, grid, default_forced_theta(cfg),
                            n_values=tuple(cfg.nash_n_values))
    written = [write_nash_gap_csv(
        os.path.join(out_dir, "nash_gap.csv"), cfg, report)]
    if cfg.figures:
        from . import plots
        written.append(plots.render_nash_gap(
            os.path.join(out_dir, "nash_gap.png"), report))
    return written


def _run_filter_demo(cfg: ScenarioConfig, out_dir: str):
    trajectories, _ = _simulate_trajectories(cfg)
    written = []
    for rep, traj in enumerate(trajectories, start=1):
        written.append(write_paths_csv(
            os.path.join(out_dir, f"paths_{rep}.csv"), cfg, traj))
    if cfg.figures:
        from . import plots
        written.append(plots.render_filter_demo(
            os.path.join(out_dir, "filter_demo.png"), trajectories[0],
            cfg.market.theta_states))
    return written


_MODE_RUNNERS = {
    "equilibrium": _run_equilibrium,
    "simulate": _run_simulate,
    "nash-gap": _run_nash_gap,
    "filter-demo": _run_filter_demo,
}


def run_scenario(cfg: ScenarioConfig):
    """Execute the configured mode; returns the list of files written."""
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    return _MODE_RUNNERS[cfg.mode](cfg, out_dir)
