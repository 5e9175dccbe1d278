"""Aggregate equilibrium flow: linear drive, mean field, agent feedback.

The class-level control rule is nu_bar = inv(2A) (g1 + g2 qbar); g2 comes
from the backward Riccati solve, g1 aggregates the forecast of the
unobserved drift against the time-ordered exponential of
f = (L + g2) inv(2A).  Individual agents add a within-class correction
(h2 / 2a) (q - qbar_k) on top of the class rule.

The g1 quadrature runs in two interchangeable ways: a direct trapezoid
sum over the remaining horizon (``compute_g1``, the contract form), and a
precomputed backward table (``DriveTable``) that contracts the filter
data vector in O(1) work per step.  Both produce identical values up to
roundoff; tests assert that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filtering import AlphaForecast, ForecastKernel
from .model import PopulationSpec, coupling_matrices
from .riccati import OrderedExponentialTable, RiccatiSolution, h2_gain


@dataclass(frozen=True)
class EquilibriumSolution:
    """Class-level equilibrium paths on the grid."""

    grid: object
    g1: np.ndarray        # (n + 1, K)
    nu_bar: np.ndarray    # (n + 1, K)
    q_bar: np.ndarray     # (n + 1, K)
    h2: np.ndarray        # (n + 1, K)


@dataclass(frozen=True)
class AgentState:
    """One agent's class index, inventory, and cash account."""

    subpop_index: int
    inventory: float
    cash: float


def compute_g1(pop: PopulationSpec, riccati: RiccatiSolution,
               table: OrderedExponentialTable, base_index: int,
               forecast: AlphaForecast) -> np.ndarray:
    """Direct trapezoid aggregation of the drift forecast from one node.

    ``forecast.values`` must be aligned with the grid nodes from
    ``base_index`` to the end.  Returns the K-vector g1 at that node.
    """
    grid = riccati.grid
    n_rem = grid.n_steps - base_index
    vals = np.asarray(forecast.values, dtype=float)
    if len(vals) != n_rem + 1:
        raise ValueError("forecast values must cover the remaining grid nodes")
    if n_rem == 0:
        return np.zeros(pop.n_classes)
    dt = grid.dt
    weights = np.full(n_rem + 1, dt)
    weights[0] = weights[-1] = 0.5 * dt
    ones = np.ones(pop.n_classes)
    out = weights[0] * vals[0] * ones
    prop = np.eye(pop.n_classes)
    for s in range(1, n_rem + 1):
        prop = prop @ table.factors[base_index + s - 1]
        out = out + weights[s] * vals[s] * (prop @ ones)
    return out


@dataclass(frozen=True)
class DriveTable:
    """Backward-aggregated g1 operator for every node.

    ``g1(n, posterior, f)`` equals the direct quadrature of the forecast
    made at node n from (posterior, f), by the recursion

        A_n = (dt/2) 1 l0' + Phi_n (A_{n+1} + (dt/2) 1 l0') Transfer'

    over the forecast kernel's lag-state transfer operator.
    """

    kernel: ForecastKernel
    tables: np.ndarray      # (n + 1, K, 2M + 1)

    def g1(self, n: int, posterior: np.ndarray, f: float) -> np.ndarray:
        ak = self.kernel.market.alpha_tick * self.kernel.market.kappa
        return ak * (self.tables[n] @ self.kernel.data_vector(posterior, f))


def build_drive_table(pop: PopulationSpec, table: OrderedExponentialTable,
                      kernel: ForecastKernel) -> DriveTable:
    grid = table.grid
    n = grid.n_steps
    k = pop.n_classes
    dim = 2 * kernel.market.n_states + 1
    half = 0.5 * grid.dt * np.outer(np.ones(k), kernel.lag_zero())
    trans_t = kernel.transfer.T
    tables = np.zeros((n + 1, k, dim))
    acc = np.zeros((k, dim))
    for i in range(n - 1, -1, -1):
        acc = half + table.factors[i] @ ((acc + half) @ trans_t)
        tables[i] = acc
    return DriveTable(kernel=kernel, tables=tables)


def deterministic_g1_path(pop: PopulationSpec, table: OrderedExponentialTable,
                          alpha_path: np.ndarray) -> np.ndarray:
    """g1 at every node when the drive path is known in advance.

    Backward recursion over the same trapezoid quadrature as compute_g1;
    used for fluid scenarios where the forecast equals the realized path.
    """
    grid = table.grid
    n = grid.n_steps
    k = pop.n_classes
    dt = grid.dt
    ones = np.ones(k)
    g1 = np.zeros((n + 1, k))
    for i in range(n - 1, -1, -1):
        g1[i] = (0.5 * dt * alpha_path[i] * ones
                 + table.factors[i] @ (g1[i + 1]
                                       + 0.5 * dt * alpha_path[i + 1] * ones))
    return g1


def class_controls(pop: PopulationSpec, g1_n: np.ndarray, g2_n: np.ndarray,
                   q_bar_n: np.ndarray) -> np.ndarray:
    cm = coupling_matrices(pop)
    return cm.inv_two_a @ (g1_n + g2_n @ q_bar_n)


def advance_mean_field(pop: PopulationSpec, g2_n, g2_next, g1_n, g1_next,
                       q_bar_n, dt: float):
    """One trapezoid-consistent step of the fictitious mean field.

    Returns (nu_bar at the current node, q_bar at the next node).  The
    step is implicit in the next node so that the node control rule and
    the trapezoid advance both hold exactly at every node.
    """
    cm = coupling_matrices(pop)
    k = pop.n_classes
    nu_n = cm.inv_two_a @ (g1_n + g2_n @ q_bar_n)
    lhs = np.eye(k) - 0.5 * dt * cm.inv_two_a @ g2_next
    rhs = q_bar_n + 0.5 * dt * (nu_n + cm.inv_two_a @ g1_next)
    q_next = np.linalg.solve(lhs, rhs)
    return nu_n, q_next


def solve_equilibrium_path(pop: PopulationSpec, riccati: RiccatiSolution,
                           table: OrderedExponentialTable,
                           g1_path: np.ndarray) -> EquilibriumSolution:
    """Forward mean-field sweep given g1 on every node."""
    grid = riccati.grid
    n = grid.n_steps
    k = pop.n_classes
    dt = grid.dt
    q_bar = np.empty((n + 1, k))
    nu_bar = np.empty((n + 1, k))
    q_bar[0] = [s.m0 for s in pop.subpops]
    for i in range(n):
        nu_bar[i], q_bar[i + 1] = advance_mean_field(
            pop, riccati.g2[i], riccati.g2[i + 1], g1_path[i], g1_path[i + 1],
            q_bar[i], dt)
    nu_bar[n] = class_controls(pop, g1_path[n], riccati.g2[n], q_bar[n])
    h2 = np.column_stack([h2_gain(s, grid.t, grid.horizon)
                          for s in pop.subpops])
    return EquilibriumSolution(grid=grid, g1=np.asarray(g1_path),
                               nu_bar=nu_bar, q_bar=q_bar, h2=h2)


def agent_control(agent: AgentState, nu_bar_k: float, q_bar_k: float,
                  h2_k: float, a_k: float) -> float:
    """Feedback control of one agent: class rule plus gap steering."""
    return nu_bar_k + (h2_k / (2.0 * a_k)) * (agent.inventory - q_bar_k)
