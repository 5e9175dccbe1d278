"""Optimality and finite-population gap verification.

Two kinds of evidence about the engine's profile are produced here.  The
first-order side checks that the limit objective is flat at the profile
(directional derivatives vanish) and concave.  The finite-population
side measures, in deterministic scenarios, how much a single agent can
gain by switching to an exact discrete best response while everyone else
keeps playing the profile; the gain must shrink as the population grows.

The best response is the unique maximizer of a strictly concave
quadratic in the agent's control path.  It is computed by a backward
scalar recursion on the value-function coefficients followed by a
forward rollout, which solves the first-order system by elimination in
one pass and stays off threaded linear algebra, so results are stable
across thread counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .equilibrium import deterministic_g1_path, solve_equilibrium_path
from .market_sim import (EquilibriumEngine, fluid_deterministic_path,
                         run_finite_game)
from .model import (EngineError, GameSpec, LatentMarketModel, PopulationSpec,
                    SolverError, SubPopulationSpec, TimeGrid)
from .riccati import ordered_exponential, solve_g2

_FIXED_POINT_TOL = 1e-13
_FIXED_POINT_MAX_ITER = 200


@dataclass(frozen=True)
class NashGapReport:
    """Best-response gaps per population size.

    ``gaps`` holds the largest per-class improvement available to a
    unilateral deviator; ``count_mismatch`` records how far the rounded
    class counts sit from the target proportions at each size.  A gap
    below -2 standard errors means the profile was beaten by itself,
    which indicates a bug rather than noise.
    """

    n_values: tuple
    gaps: np.ndarray
    std_errors: np.ndarray
    method: str
    count_mismatch: np.ndarray


@dataclass(frozen=True)
class DeterministicScenario:
    """Forced chain schedule with the fluid price and the engine profile."""

    population: PopulationSpec
    market: LatentMarketModel
    grid: TimeGrid
    forced_theta: tuple
    theta_idx: np.ndarray
    f: np.ndarray                 # (n + 1,) fluid price at nodes
    drive: np.ndarray             # (n + 1,) mean tick pressure at nodes
    nu_bar: np.ndarray            # (n + 1, K) engine class controls
    q_bar: np.ndarray             # (n + 1, K)


def build_deterministic_scenario(pop: PopulationSpec,
                                 market: LatentMarketModel, grid: TimeGrid,
                                 forced_theta) -> DeterministicScenario:
    idx, f, drive = fluid_deterministic_path(market, grid, forced_theta)
    riccati = solve_g2(pop, grid)
    table = ordered_exponential(pop, riccati.g2, grid)
    g1 = deterministic_g1_path(pop, table, drive)
    eq = solve_equilibrium_path(pop, riccati, table, g1)
    return DeterministicScenario(population=pop, market=market, grid=grid,
                                 forced_theta=tuple(tuple(x) for x in
                                                    forced_theta),
                                 theta_idx=idx, f=f, drive=drive,
                                 nu_bar=eq.nu_bar, q_bar=eq.q_bar)


# ---------------------------------------------------------------------------
# limit objective and directional derivatives
# ---------------------------------------------------------------------------

def standard_directions(grid: TimeGrid) -> list:
    """Ten grid-sampled perturbation directions spanning slow and fast."""
    t = np.asarray(grid.t)
    s = t / grid.horizon
    out = [np.ones_like(t), s, 1.0 - s]
    out += [np.sin(k * np.pi * s) for k in range(1, 5)]
    out += [np.cos(k * np.pi * s) for k in range(1, 4)]
    return out


def mfg_limit_objective(scenario: DeterministicScenario, class_index: int,
                        nu: np.ndarray) -> float:
    """Limit objective of one class representative, profile held fixed.

    Constant terms that do not depend on the control are dropped; the
    inventory response integrates by the trapezoid rule and the time
    integral uses matching trapezoid weights.
    """
    pop = scenario.population
    sub = pop.subpops[class_index]
    grid = scenario.grid
    dt = grid.dt
    nu = np.asarray(nu, dtype=float)
    q = np.empty_like(nu)
    q[0] = sub.m0
    q[1:] = sub.m0 + np.cumsum(0.5 * dt * (nu[:-1] + nu[1:]))
    nu_agg = scenario.nu_bar @ pop.proportions()
    integrand = (q * (scenario.drive + pop.lam * nu_agg)
                 - (sub.a * nu * nu + 2.0 * sub.psi * nu * q
                    + sub.phi * q * q))
    weights = np.full(len(nu), dt)
    weights[0] = weights[-1] = 0.5 * dt
    return float(weights @ integrand)


def gateaux_derivatives(scenario: DeterministicScenario, class_index: int,
                        directions, eps: float = None):
    """Central first and second differences along each direction."""
    nu_star = scenario.nu_bar[:, class_index]
    if eps is None:
        eps = max(1e-2 * float(np.max(np.abs(nu_star))), 1.0)
    h_mid = mfg_limit_objective(scenario, class_index, nu_star)
    first, second = [], []
    for omega in directions:
        h_plus = mfg_limit_objective(scenario, class_index,
                                     nu_star + eps * omega)
        h_minus = mfg_limit_objective(scenario, class_index,
                                      nu_star - eps * omega)
        first.append((h_plus - h_minus) / (2.0 * eps))
        second.append((h_plus + h_minus - 2.0 * h_mid) / (eps * eps))
    return np.array(first), np.array(second), h_mid


def gateaux_check(scenario: DeterministicScenario, class_index: int,
                  directions, eps: float = None) -> float:
    first, _, _ = gateaux_derivatives(scenario, class_index, directions, eps)
    return float(np.max(np.abs(first)))


# ---------------------------------------------------------------------------
# discrete best response and the gap curve
# ---------------------------------------------------------------------------

def _lq_feedback(sub: SubPopulationSpec, own_impact: float,
                 s_bar: np.ndarray, dt: float):
    """Backward coefficient sweep of the discrete control problem.

    The value function stays quadratic, V_n(q) = c + beta q + gamma q^2;
    the sweep returns the affine feedback nu_n(q) = e_n q + d_n.  The
    stage curvature must stay negative, otherwise the discretization
    broke the concavity the problem guarantees.
    """
    m = len(s_bar) - 1
    gamma = own_impact - sub.psi
    beta = float(s_bar[m])
    e = np.empty(m)
    d = np.empty(m)
    for n in range(m - 1, -1, -1):
        curv = -sub.a * dt + gamma * dt * dt
        if not np.isfinite(curv) or curv >= 0.0:
            raise EngineError(
                "discrete best-response stage curvature is not negative "
                f"(step {n}: {curv}); the control problem lost concavity")
        b1 = 2.0 * gamma - own_impact
        b0 = beta - float(s_bar[n])
        e[n] = -dt * b1 / (2.0 * curv)
        d[n] = -dt * b0 / (2.0 * curv)
        gamma = gamma - sub.phi * dt - dt * dt * b1 * b1 / (4.0 * curv)
        beta = beta - dt * dt * b1 * b0 / (2.0 * curv)
    if not (np.all(np.isfinite(e)) and np.all(np.isfinite(d))):
        raise EngineError("discrete best-response feedback is not finite")
    return e, d


def _rollout(e: np.ndarray, d: np.ndarray, q0: float, dt: float):
    m = len(e)
    q = np.empty(m + 1)
    nu = np.empty(m)
    q[0] = q0
    for n in range(m):
        nu[n] = e[n] * q[n] + d[n]
        q[n + 1] = q[n] + dt * nu[n]
    return q, nu


def _finite_value(sub: SubPopulationSpec, own_impact: float,
                  s_bar: np.ndarray, q: np.ndarray, nu: np.ndarray,
                  dt: float) -> float:
    m = len(nu)
    stage = -(s_bar[:m] + own_impact * q[:m] + sub.a * nu) * nu * dt \
        - sub.phi * q[:m] * q[:m] * dt
    terminal = q[m] * (s_bar[m] + (own_impact - sub.psi) * q[m])
    return float(np.sum(stage) + terminal)


def discrete_mfg_profile(pop: PopulationSpec, f_path: np.ndarray,
                         grid: TimeGrid):
    """Discrete-time analog of the limit profile on a known price path.

    Every class best-responds with no own-impact term to the aggregate
    mean; the aggregate is iterated to a fixed point.  Without permanent
    impact the map does not depend on the aggregate and the iteration
    terminates after a confirmation pass.
    """
    dt = grid.dt
    p = pop.proportions()
    k = pop.n_classes
    m = grid.n_steps
    agg = np.zeros(m + 1)
    for _ in range(_FIXED_POINT_MAX_ITER):
        s_bar = f_path + pop.lam * agg
        q_cls = np.empty((m + 1, k))
        nu_cls = np.empty((m, k))
        for j, sub in enumerate(pop.subpops):
            e, d = _lq_feedback(sub, 0.0, s_bar, dt)
            q_cls[:, j], nu_cls[:, j] = _rollout(e, d, sub.m0, dt)
        agg_new = q_cls @ p
        change = float(np.max(np.abs(agg_new - agg)))
        agg = agg_new
        if change <= _FIXED_POINT_TOL * max(1.0, float(np.max(np.abs(agg)))):
            return q_cls, nu_cls, agg
    raise SolverError("aggregate-mean fixed point did not converge; "
                      f"last change {change:g}")


def class_counts(p: np.ndarray, n_total: int) -> np.ndarray:
    """Largest-remainder rounding of proportions to integer counts."""
    raw = np.asarray(p) * n_total
    counts = np.floor(raw).astype(int)
    rem = raw - counts
    for idx in np.argsort(-rem, kind="stable")[:n_total - counts.sum()]:
        counts[idx] += 1
    return counts


def best_response_oracle(scenario: DeterministicScenario, n_total: int,
                         class_index: int):
    """Exact discrete best response of one representative agent.

    Everyone else plays the discrete profile; the deviator faces the
    price rebuilt from the others' inventories plus its own with weight
    1/N.  Returns (control path, objective value).
    """
    pop = scenario.population
    grid = scenario.grid
    dt = grid.dt
    q_cls, _, _ = discrete_mfg_profile(pop, scenario.f, grid)
    counts = class_counts(pop.proportions(), n_total)
    others = q_cls @ counts - q_cls[:, class_index]
    own_impact = pop.lam / n_total
    s_bar = scenario.f + own_impact * others
    sub = pop.subpops[class_index]
    e, d = _lq_feedback(sub, own_impact, s_bar, dt)
    q_br, nu_br = _rollout(e, d, sub.m0, dt)
    return nu_br, _finite_value(sub, own_impact, s_bar, q_br, nu_br, dt)


def nash_gap_curve(pop: PopulationSpec, market: LatentMarketModel,
                   grid: TimeGrid, forced_theta,
                   n_values=(5, 10, 30, 100, 300)) -> NashGapReport:
    """Deterministic-oracle gap per population size.

    For each size, every class representative's exact best response is
    compared with staying on the discrete profile, under the same
    rebuilt price; the report keeps the worst class.  Deterministic
    scenario, so the error bars are identically zero.
    """
    _, f_path, _ = fluid_deterministic_path(market, grid, forced_theta)
    q_cls, nu_cls, _ = discrete_mfg_profile(pop, f_path, grid)
    p = pop.proportions()
    dt = grid.dt
    gaps = []
    mismatch = []
    for n_total in n_values:
        counts = class_counts(p, int(n_total))
        mismatch.append(float(np.max(np.abs(counts / n_total - p))))
        worst = 0.0
        for j, sub in enumerate(pop.subpops):
            others = q_cls @ counts - q_cls[:, j]
            own_impact = pop.lam / n_total
            s_bar = f_path + own_impact * others
            e, d = _lq_feedback(sub, own_impact, s_bar, dt)
            q_br, nu_br = _rollout(e, d, sub.m0, dt)
            h_br = _finite_value(sub, own_impact, s_bar, q_br, nu_br, dt)
            h_eq = _finite_value(sub, own_impact, s_bar, q_cls[:, j],
                                 nu_cls[:, j], dt)
            worst = max(worst, h_br - h_eq)
        gaps.append(worst)
    return NashGapReport(n_values=tuple(int(n) for n in n_values),
                         gaps=np.array(gaps),
                         std_errors=np.zeros(len(gaps)),
                         method="deterministic-best-response",
                         count_mismatch=np.array(mismatch))


def limit_objective_discrete(scenario: DeterministicScenario,
                             class_index: int, nu: np.ndarray) -> float:
    """Population-limit value of the finite objective for a fixed control.

    Same accounting convention as the finite evaluator, with the price
    carrying the aggregate profile mean instead of the rebuilt empirical
    mean; the finite values must approach this as the population grows.
    """
    pop = scenario.population
    grid = scenario.grid
    dt = grid.dt
    _, _, agg = discrete_mfg_profile(pop, scenario.f, grid)
    s_bar = scenario.f + pop.lam * agg
    sub = pop.subpops[class_index]
    nu = np.asarray(nu, dtype=float)
    m = grid.n_steps
    q = np.empty(m + 1)
    q[0] = sub.m0
    q[1:] = sub.m0 + dt * np.cumsum(nu[:m])
    return _finite_value(sub, 0.0, s_bar, q, nu[:m], dt)


def objective_distance_curve(scenario: DeterministicScenario,
                             class_index: int, nu: np.ndarray,
                             n_values=(5, 10, 30, 100, 300)) -> np.ndarray:
    """|finite value - limit value| per population size, fixed control."""
    pop = scenario.population
    grid = scenario.grid
    dt = grid.dt
    sub = pop.subpops[class_index]
    q_cls, _, _ = discrete_mfg_profile(pop, scenario.f, grid)
    p = pop.proportions()
    nu = np.asarray(nu, dtype=float)
    m = grid.n_steps
    q = np.empty(m + 1)
    q[0] = sub.m0
    q[1:] = sub.m0 + dt * np.cumsum(nu[:m])
    h_limit = limit_objective_discrete(scenario, class_index, nu)
    out = []
    for n_total in n_values:
        counts = class_counts(p, int(n_total))
        others = q_cls @ counts - q_cls[:, class_index]
        own_impact = pop.lam / n_total
        s_bar = scenario.f + own_impact * others
        h_fin = _finite_value(sub, own_impact, s_bar, q, nu[:m], dt)
        out.append(abs(h_fin - h_limit))
    return np.array(out)


# ---------------------------------------------------------------------------
# stochastic lower-bound mode
# ---------------------------------------------------------------------------

def perturbation_gap_curve(pop: PopulationSpec, market: LatentMarketModel,
                           grid: TimeGrid, n_values, directions,
                           eps_values, replications: int,
                           seed: int) -> NashGapReport:
    """Lower-bound gap estimate from a family of adapted perturbations.

    Each candidate adds eps * direction on top of one representative
    agent's feedback rule; the mean objective change against a
    zero-offset baseline is estimated with common random numbers across
    all candidates.  The family implicitly contains the no-deviation
    candidate, whose change is identically zero, so the reported gap per
    size is a nonnegative lower bound on the deviation supremum; a
    candidate that beats zero shows up with its standard error.
    """
    if replications < 2:
        raise ValueError("perturbation mode needs at least 2 replications")
    engine = EquilibriumEngine(pop, market, grid)
    zero = np.zeros(grid.n_steps)
    p = pop.proportions()
    gaps, errors, mismatch = [], [], []
    for n_total in n_values:
        counts = class_counts(p, int(n_total))
        mismatch.append(float(np.max(np.abs(counts / n_total - p))))
        spec = GameSpec(population=pop, market=market,
                        n_agents_per_subpop=tuple(int(c) for c in counts))
        reps = []
        for j in range(pop.n_classes):
            reps.append(int(np.concatenate([[0], np.cumsum(counts)])[j]))
        best_mean, best_se = 0.0, 0.0
        for class_index, agent in enumerate(reps):
            base = np.empty(replications)
            for r in range(replications):
                traj = run_finite_game(spec, grid, seed, replication=r,
                                       engine=engine,
                                       deviation=(agent, zero, "offset"),
                                       record_paths=False)
                base[r] = traj.objectives[agent]
            for omega in directions:
                for eps in eps_values:
                    path = eps * np.asarray(omega)[:grid.n_steps]
                    diff = np.empty(replications)
                    for r in range(replications):
                        traj = run_finite_game(
                            spec, grid, seed, replication=r, engine=engine,
                            deviation=(agent, path, "offset"),
                            record_paths=False)
                        diff[r] = traj.objectives[agent] - base[r]
                    mean = float(diff.mean())
                    se = float(diff.std(ddof=1) / np.sqrt(replications))
                    if mean > best_mean:
                        best_mean, best_se = mean, se
        gaps.append(best_mean)
        errors.append(best_se)
    return NashGapReport(n_values=tuple(int(n) for n in n_values),
                         gaps=np.array(gaps), std_errors=np.array(errors),
                         method="perturbation-family",
                         count_mismatch=np.array(mismatch))
