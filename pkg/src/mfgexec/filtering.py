"""Posterior tracking of the hidden regime from the jump stream.

Agents never see the chain; they see the unaffected price F (after
stripping permanent impact from the quoted price) and its up/down ticks.
Between ticks the posterior follows the no-event conditioning equation,
at a tick it is tilted by the directional intensities.  The forecast of
the unobserved drift alpha_kappa*(theta - F) over the remaining horizon
feeds the aggregate control problem.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import expm

from .model import FilterError, LatentMarketModel

_CLAMP_FRACTION = 0.01
_CLAMP_MIN_STEPS = 100


@dataclass(frozen=True)
class FilterState:
    """Posterior over chain states plus the tracked unaffected price."""

    t: float
    posterior: np.ndarray
    f: float
    clamp_count: int = 0
    step_count: int = 0


@dataclass(frozen=True)
class AlphaForecast:
    """Expected unobserved drift over a future grid, given time-t data."""

    base_time: float
    horizon_grid: np.ndarray
    values: np.ndarray


def up_down_intensities(market: LatentMarketModel, f: float):
    """Directional tick intensities for every chain state at price f."""
    gap = np.asarray(market.theta_states, dtype=float) - f
    up = market.sigma + market.kappa * np.maximum(gap, 0.0)
    down = market.sigma + market.kappa * np.maximum(-gap, 0.0)
    return up, down


def propagate(state: FilterState, market: LatentMarketModel,
              dt: float) -> FilterState:
    """One explicit first-order no-event step of length dt.

    Negative posterior mass produced by the explicit step is clamped to
    zero and counted; persistent clamping (more than 1 percent of steps
    once at least 100 were taken) raises, since it means the step size is
    too coarse for the intensity spread.
    """
    pi = state.posterior
    up, down = up_down_intensities(market, state.f)
    total = up + down
    mean_total = float(pi @ total)
    drift = market.generator.T @ pi - pi * (total - mean_total)
    nxt = pi + dt * drift
    clamped = bool(np.any(nxt < 0.0))
    if clamped:
        nxt = np.maximum(nxt, 0.0)
    mass = float(nxt.sum())
    if mass <= 0.0:
        raise FilterError("posterior mass vanished during propagation")
    nxt = nxt / mass
    cc = state.clamp_count + int(clamped)
    sc = state.step_count + 1
    if sc >= _CLAMP_MIN_STEPS and cc > _CLAMP_FRACTION * sc:
        raise FilterError(
            f"posterior clamping in {cc} of {sc} steps; the grid step is too "
            f"coarse for the intensity spread of this market")
    return FilterState(t=state.t + dt, posterior=nxt, f=state.f,
                       clamp_count=cc, step_count=sc)


def jump_update(state: FilterState, market: LatentMarketModel,
                direction: int) -> FilterState:
    """Exact Bayes tilt at an observed tick; direction is +1 or -1."""
    up, down = up_down_intensities(market, state.f)
    lik = up if direction > 0 else down
    weighted = state.posterior * lik
    mass = float(weighted.sum())
    if mass <= 0.0:
        raise FilterError(
            "degenerate jump likelihood: every state gives this tick "
            "direction zero intensity at the current price")
    return replace(state, posterior=weighted / mass,
                   f=state.f + np.sign(direction) * market.alpha_tick)


def alpha_forecast(state: FilterState, market: LatentMarketModel,
                   horizon_grid: np.ndarray) -> AlphaForecast:
    """Expected drift alpha_kappa*(theta - F) on future times.

    The chain marginal advances by the exact transition semigroup; the
    price mean follows its linear pull toward the chain mean, integrated
    exactly per interval against the trapezoidal chain mean.  The first
    value (at the base time) is alpha_kappa*(posterior mean - f) with no
    integration error.
    """
    u = np.asarray(horizon_grid, dtype=float)
    if len(u) == 0 or u[0] < state.t - 1e-12:
        raise ValueError("horizon grid must start at or after the base time")
    ak = market.alpha_tick * market.kappa
    theta = np.asarray(market.theta_states, dtype=float)

    m_theta = np.empty(len(u))
    m_f = np.empty(len(u))
    pi = state.posterior @ expm((u[0] - state.t) * market.generator)
    m_theta[0] = pi @ theta
    m_f[0] = state.f
    for i in range(len(u) - 1):
        step = u[i + 1] - u[i]
        pi = pi @ expm(step * market.generator)
        m_theta[i + 1] = pi @ theta
        decay = np.exp(-ak * step)
        midpoint = 0.5 * (m_theta[i] + m_theta[i + 1])
        m_f[i + 1] = midpoint + (m_f[i] - midpoint) * decay
    return AlphaForecast(base_time=state.t, horizon_grid=u,
                         values=ak * (m_theta - m_f))


# ---------------------------------------------------------------------------
# forecast lag kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForecastKernel:
    """Linear representation of the drift forecast on a uniform grid.

    For a lag of s grid steps, the forecast made at any node from data
    (posterior pi, price f) is ``alpha_kappa * (pi @ (W[s] - V[s]) - Z[s] * f)``;
    the lag state (w, v, z) advances by the constant block operator
    ``transfer``, which is what lets downstream aggregation run in O(1)
    per step instead of refreshing the whole forecast.  Matches
    alpha_forecast exactly on the uniform grid by construction.
    """

    market: LatentMarketModel
    dt: float
    w: np.ndarray            # (n_lags + 1, M): chain value semigroup
    v: np.ndarray            # (n_lags + 1, M): price-mean response
    z: np.ndarray            # (n_lags + 1,):   price-mean memory
    transfer: np.ndarray     # (2M + 1, 2M + 1)

    @property
    def n_lags(self) -> int:
        return len(self.z) - 1

    def lag_zero(self) -> np.ndarray:
        m = self.market.n_states
        out = np.zeros(2 * m + 1)
        out[:m] = np.asarray(self.market.theta_states, dtype=float)
        out[-1] = 1.0
        return out

    def data_vector(self, posterior: np.ndarray, f: float) -> np.ndarray:
        return np.concatenate([posterior, -posterior, [-f]])

    def forecast_path(self, posterior: np.ndarray, f: float,
                      n_remaining: int) -> np.ndarray:
        """Forecast values for lags 0..n_remaining (cross-check path)."""
        ak = self.market.alpha_tick * self.market.kappa
        s = slice(0, n_remaining + 1)
        return ak * ((self.w[s] - self.v[s]) @ posterior - self.z[s] * f)


def build_forecast_kernel(market: LatentMarketModel, dt: float,
                          n_lags: int) -> ForecastKernel:
    m = market.n_states
    theta = np.asarray(market.theta_states, dtype=float)
    t_mat = expm(dt * market.generator)
    ak = market.alpha_tick * market.kappa
    rho = np.exp(-ak * dt)

    w = np.empty((n_lags + 1, m))
    v = np.empty((n_lags + 1, m))
    z = np.empty(n_lags + 1)
    w[0], v[0], z[0] = theta, np.zeros(m), 1.0
    half = 0.5 * (1.0 - rho) * (np.eye(m) + t_mat)
    for s in range(n_lags):
        w[s + 1] = t_mat @ w[s]
        v[s + 1] = rho * v[s] + half @ w[s]
        z[s + 1] = rho * z[s]

    transfer = np.zeros((2 * m + 1, 2 * m + 1))
    transfer[:m, :m] = t_mat
    transfer[m:2 * m, :m] = half
    transfer[m:2 * m, m:2 * m] = rho * np.eye(m)
    transfer[-1, -1] = rho
    return ForecastKernel(market=market, dt=dt, w=w, v=v, z=z,
                          transfer=transfer)
