"""Problem data for the mean-field execution game.

A game instance is described by three spec objects: the trader population
(sub-population cost parameters and mixture proportions plus the permanent
impact coefficient), the latent market model driving the unaffected price,
and the uniform time grid the engine discretizes on.  Validation is an
explicit gate: constructors do not check anything, ``validate`` does.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class ValidationError(ValueError):
    """A spec object failed validation."""


class EngineError(RuntimeError):
    """A numerical routine failed (singularity, degeneracy, divergence)."""


class SolverError(EngineError):
    pass


class FilterError(EngineError):
    pass


# ---------------------------------------------------------------------------
# spec types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubPopulationSpec:
    """Cost parameters of one trader class.

    Attributes
    ----------
    a : float
        Temporary impact coefficient (execution cost curvature), a > 0.
    phi : float
        Running inventory penalty, phi >= 0.
    psi : float
        Terminal liquidation penalty, psi > 0.
    p : float
        Limiting proportion of this class in the population, 0 < p < 1
        (p = 1 allowed when it is the only class).
    m0 : float
        Mean of the Gaussian initial inventory draw.
    s0 : float
        Standard deviation of the initial inventory draw, s0 >= 0.
    """

    a: float
    phi: float
    psi: float
    p: float
    m0: float
    s0: float


@dataclass(frozen=True)
class PopulationSpec:
    """All trader classes plus the permanent impact coefficient ``lam``."""

    subpops: tuple[SubPopulationSpec, ...]
    lam: float

    @property
    def n_classes(self) -> int:
        return len(self.subpops)

    def proportions(self) -> np.ndarray:
        return np.array([s.p for s in self.subpops], dtype=float)


@dataclass(frozen=True)
class LatentMarketModel:
    """Pure-jump unaffected price driven by a hidden finite-state chain.

    The unaffected price F moves by ``+-alpha_tick`` at event times of two
    counting processes whose intensities are ``sigma + kappa*(theta - F)^+``
    (up) and ``sigma + kappa*(theta - F)^-`` (down), where theta is the
    current state of a continuous-time Markov chain with generator
    ``generator`` on the values ``theta_states``.  Net drift of F is
    ``alpha_tick * kappa * (theta - F)``, pulling F toward the hidden state.
    """

    theta_states: np.ndarray
    generator: np.ndarray
    prior: np.ndarray
    kappa: float
    sigma: float
    alpha_tick: float
    f0: float
    horizon: float

    @property
    def n_states(self) -> int:
        return len(self.theta_states)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_0 = 0 < t_1 < ... < t_n = T."""

    t: np.ndarray

    @classmethod
    def uniform(cls, horizon: float, n_steps: int = 1000) -> "TimeGrid":
        return cls(t=np.linspace(0.0, float(horizon), n_steps + 1))

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def horizon(self) -> float:
        return float(self.t[-1])


@dataclass(frozen=True)
class GameSpec:
    """A finite game instance: population, market, and agent counts."""

    population: PopulationSpec
    market: LatentMarketModel
    n_agents_per_subpop: tuple[int, ...]
    target_shift: Optional[np.ndarray] = None

    @property
    def n_agents(self) -> int:
        return int(sum(self.n_agents_per_subpop))

    def subpop_of_agent(self) -> np.ndarray:
        """Class index of each agent, agents ordered class-major."""
        return np.repeat(np.arange(len(self.n_agents_per_subpop)),
                         self.n_agents_per_subpop)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

_PROP_TOL = 1e-12


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


def _validate_subpop(s: SubPopulationSpec, label: str) -> None:
    _check(np.isfinite(s.a) and s.a > 0.0,
           f"{label}: temporary impact must be positive (got a={s.a!r})")
    _check(np.isfinite(s.phi) and s.phi >= 0.0,
           f"{label}: running penalty phi must be nonnegative")
    _check(np.isfinite(s.psi) and s.psi > 0.0,
           f"{label}: terminal penalty psi must be positive")
    _check(np.isfinite(s.p) and 0.0 < s.p <= 1.0,
           f"{label}: proportion p must lie in (0, 1]")
    _check(np.isfinite(s.m0), f"{label}: initial mean inventory must be finite")
    _check(np.isfinite(s.s0) and s.s0 >= 0.0,
           f"{label}: initial inventory spread must be nonnegative")


def _validate_population(pop: PopulationSpec) -> None:
    _check(len(pop.subpops) >= 1, "population: need at least one sub-population")
    for i, s in enumerate(pop.subpops):
        _validate_subpop(s, f"subpop {i}")
    total = float(np.sum(pop.proportions()))
    _check(abs(total - 1.0) <= _PROP_TOL,
           f"population: proportions must sum to 1 (got {total!r})")
    _check(np.isfinite(pop.lam) and pop.lam >= 0.0,
           "population: permanent impact lambda must be nonnegative")


def _validate_market(mkt: LatentMarketModel) -> None:
    th = np.asarray(mkt.theta_states, dtype=float)
    _check(th.ndim == 1 and len(th) >= 1 and np.all(np.isfinite(th)),
           "market: theta_states must be a nonempty finite vector")
    m = len(th)
    gen = np.asarray(mkt.generator, dtype=float)
    _check(gen.shape == (m, m), "market: generator must be M-by-M")
    off = gen - np.diag(np.diag(gen))
    _check(np.all(off >= 0.0), "market: generator off-diagonals must be nonnegative")
    _check(np.all(np.abs(gen.sum(axis=1)) <= _PROP_TOL * max(1.0, np.abs(gen).max())),
           "market: generator rows must sum to 0")
    pri = np.asarray(mkt.prior, dtype=float)
    _check(pri.shape == (m,) and np.all(pri >= 0.0)
           and abs(float(pri.sum()) - 1.0) <= 1e-10,
           "market: prior must be a probability vector over the states")
    _check(np.isfinite(mkt.kappa) and mkt.kappa >= 0.0, "market: kappa must be >= 0")
    _check(np.isfinite(mkt.sigma) and mkt.sigma >= 0.0, "market: sigma must be >= 0")
    _check(np.isfinite(mkt.alpha_tick) and mkt.alpha_tick > 0.0,
           "market: tick size alpha_tick must be positive")
    _check(np.isfinite(mkt.f0), "market: initial price f0 must be finite")
    _check(np.isfinite(mkt.horizon) and mkt.horizon > 0.0,
           "market: horizon must be positive")


def _validate_grid(grid: TimeGrid) -> None:
    t = np.asarray(grid.t, dtype=float)
    _check(t.ndim == 1 and len(t) >= 2, "grid: need at least two time points")
    _check(t[0] == 0.0, "grid: first time point must be 0")
    steps = np.diff(t)
    _check(np.all(steps > 0.0), "grid: times must be strictly increasing")
    dt = steps[0]
    _check(np.all(np.abs(steps - dt) <= 1e-12 * max(1.0, t[-1])),
           "grid: spacing must be uniform")


def _validate_game(spec: GameSpec) -> None:
    _validate_population(spec.population)
    _validate_market(spec.market)
    k = spec.population.n_classes
    _check(len(spec.n_agents_per_subpop) == k,
           "game: need one agent count per sub-population")
    _check(all(int(n) >= 1 and int(n) == n for n in spec.n_agents_per_subpop),
           "game: agent counts must be integers >= 1")
    if spec.target_shift is not None:
        ts = np.asarray(spec.target_shift, dtype=float)
        _check(ts.shape == (spec.n_agents,) and np.all(np.isfinite(ts)),
               "game: target_shift must give one finite value per agent")


def validate(spec) -> None:
    """Check a spec object, raising ValidationError on the first violation."""
    if isinstance(spec, SubPopulationSpec):
        _validate_subpop(spec, "subpop")
    elif isinstance(spec, PopulationSpec):
        _validate_population(spec)
    elif isinstance(spec, LatentMarketModel):
        _validate_market(spec)
    elif isinstance(spec, TimeGrid):
        _validate_grid(spec)
    elif isinstance(spec, GameSpec):
        _validate_game(spec)
    else:
        raise TypeError(f"not a spec object: {type(spec).__name__}")


def empirical_proportions(counts: Sequence[int]) -> np.ndarray:
    """Agent-count fractions N_k / N."""
    c = np.asarray(counts, dtype=float)
    total = c.sum()
    if total <= 0:
        raise ValidationError("empirical_proportions: total agent count must be > 0")
    return c / total


# ---------------------------------------------------------------------------
# stacked coefficient matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CouplingMatrices:
    """K-by-K coefficient blocks of the stacked sub-population system.

    ``inv_two_a`` is diag(1/(2 a_k)); ``lam_rows`` has identical rows
    lam * (p_1, ..., p_K), so ``lam_rows @ v`` broadcasts the proportion-
    weighted aggregate of v to every class; ``phi_diag``/``psi_diag`` are
    the diagonal penalty blocks.
    """

    inv_two_a: np.ndarray
    lam_rows: np.ndarray
    phi_diag: np.ndarray
    psi_diag: np.ndarray


def coupling_matrices(pop: PopulationSpec) -> CouplingMatrices:
    a = np.array([s.a for s in pop.subpops], dtype=float)
    phi = np.array([s.phi for s in pop.subpops], dtype=float)
    psi = np.array([s.psi for s in pop.subpops], dtype=float)
    p = pop.proportions()
    k = len(a)
    return CouplingMatrices(
        inv_two_a=np.diag(1.0 / (2.0 * a)),
        lam_rows=pop.lam * np.tile(p, (k, 1)),
        phi_diag=np.diag(phi),
        psi_diag=np.diag(psi),
    )
