"""Backward quadratic gains of the stacked control system.

The K-by-K feedback gain g2 solves the terminal-value matrix equation

    -dg2/dt = (L + g2) inv(2A) g2 - 2 Phi,      g2(T) = -2 Psi,

with L the proportion-weighted permanent-impact rows, A/Phi/Psi the
diagonal cost blocks.  The equation linearizes: stack Y = (Y1, Y2) with
g2 = Y2 inv(Y1), integrate the linear block system exactly with a matrix
exponential, and read g2 off node by node.  The within-class gain h2 has
a hyperbolic closed form and is kept separate because every agent uses it
to steer toward the class mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .model import (PopulationSpec, SolverError, SubPopulationSpec, TimeGrid,
                    coupling_matrices)

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class RiccatiSolution:
    """g2 on every grid node plus the worst conditioning seen in Y1."""

    grid: TimeGrid
    g2: np.ndarray                # (n_steps + 1, K, K)
    y1_worst_condition: float


@dataclass(frozen=True)
class OrderedExponentialTable:
    """Per-interval factors of the time-ordered exponential of f = (L + g2) inv(2A).

    ``factors[n]`` approximates the ordered exponential over
    [t_n, t_{n+1}] with right multiplication convention, so the product
    ``factors[n] @ factors[n+1] @ ... @ factors[m-1]`` propagates from
    t_n to t_m.  Exact semigroup property under concatenation holds by
    construction.
    """

    grid: TimeGrid
    factors: np.ndarray           # (n_steps, K, K)


def _block_matrix(pop: PopulationSpec) -> np.ndarray:
    cm = coupling_matrices(pop)
    k = pop.n_classes
    b = np.zeros((2 * k, 2 * k))
    b[:k, k:] = -cm.inv_two_a
    b[k:, :k] = -2.0 * cm.phi_diag
    b[k:, k:] = cm.lam_rows @ cm.inv_two_a
    return b


def solve_g2(pop: PopulationSpec, grid: TimeGrid) -> RiccatiSolution:
    """Integrate the stacked gain equation backward over the whole grid.

    Returns g2 at every node.  Raises SolverError if the linearization
    denominator Y1 approaches singularity (condition number above 1e12),
    which signals a blow-up of the gain on the given horizon.
    """
    k = pop.n_classes
    b = _block_matrix(pop)
    psi = coupling_matrices(pop).psi_diag
    w = np.vstack([np.eye(k), -2.0 * psi])          # terminal stack (2K, K)

    tau = grid.horizon - np.asarray(grid.t)          # time to go, (n+1,)
    prop = expm(tau[:, None, None] * b)              # batched (n+1, 2K, 2K)
    y = prop @ w
    y1 = y[:, :k, :]
    y2 = y[:, k:, :]

    sing = np.linalg.svd(y1, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        conds = sing[:, 0] / sing[:, -1]
    worst = float(np.nanmax(conds)) if np.all(np.isfinite(sing)) else np.inf
    if not np.isfinite(worst) or worst > _COND_LIMIT:
        raise SolverError(
            f"gain linearization is singular: cond(Y1) reached {worst:.3e} "
            f"(limit {_COND_LIMIT:.0e}); the gain blows up on this horizon")
    # det(Y1) starts at 1 at t = T and can only leave (0, inf) by crossing a
    # pole of the gain, which per-node conditioning can miss between nodes
    dets = np.linalg.det(y1)
    if not np.all(np.isfinite(dets)) or np.any(dets <= 0.0):
        raise SolverError(
            "gain linearization crossed a singularity inside the horizon "
            "(det Y1 changed sign); the gain blows up before t = 0")

    # g2 = Y2 inv(Y1)  <=>  Y1^T g2^T = Y2^T
    g2 = np.linalg.solve(np.swapaxes(y1, 1, 2), np.swapaxes(y2, 1, 2))
    g2 = np.swapaxes(g2, 1, 2)
    if not np.all(np.isfinite(g2)):
        raise SolverError("gain solve produced non-finite values")
    return RiccatiSolution(grid=grid, g2=g2, y1_worst_condition=worst)


# ---------------------------------------------------------------------------
# within-class gain h2 and its decay profile
# ---------------------------------------------------------------------------

_PHI_ZERO_FACTOR = 1e-12


def h2_gain(sub: SubPopulationSpec, t, horizon: float):
    """Closed-form within-class gain at time(s) t.

    Solves -dh2 = (h2^2/(2a) - 2 phi) dt with h2(T) = -2 psi.  Written in
    tanh form so large rate-times-horizon products stay finite.  A phi of
    zero (relative to a) degenerates the hyperbolic form to the rational
    one, handled on a separate branch.
    """
    t = np.asarray(t, dtype=float)
    tau = horizon - t
    a, phi, psi = sub.a, sub.phi, sub.psi
    if phi < _PHI_ZERO_FACTOR * a:
        out = -2.0 * psi / (1.0 + psi * tau / a)
    else:
        gamma = np.sqrt(phi / a)
        xi = np.sqrt(phi * a)
        th = np.tanh(gamma * tau)
        out = -2.0 * xi * (psi + xi * th) / (xi + psi * th)
        out = np.where(tau == 0.0, -2.0 * psi, out)
    return out if out.ndim else float(out)


def gap_decay_profile(sub: SubPopulationSpec, grid: TimeGrid):
    """Exact per-interval and cumulative decay of the gap to the class mean.

    The gap q_j - qbar_k contracts by exp((1/(2a)) int h2 ds) over any
    interval; with v(tau) = xi cosh(gamma tau) + psi sinh(gamma tau) (or
    a + psi tau when phi = 0) the factor over [t_n, t_m] is exactly
    v(T - t_m) / v(T - t_n).  Returns (rho, cum) where rho[n] is the
    factor over step n and cum[n] the factor from t_0 to t_n.
    """
    t = np.asarray(grid.t, dtype=float)
    tau = grid.horizon - t
    a, phi, psi = sub.a, sub.phi, sub.psi
    if phi < _PHI_ZERO_FACTOR * a:
        v = a + psi * tau
        rho = v[1:] / v[:-1]
        cum = v / v[0]
    else:
        gamma = np.sqrt(phi / a)
        xi = np.sqrt(phi * a)
        # v(tau) * exp(-gamma tau) stays bounded; ratios restore the factor
        vt = 0.5 * ((xi + psi) + (xi - psi) * np.exp(-2.0 * gamma * tau))
        rho = np.exp(gamma * (tau[1:] - tau[:-1])) * vt[1:] / vt[:-1]
        cum = np.exp(gamma * (tau - tau[0])) * vt / vt[0]
    return rho, cum


def ordered_exponential(pop: PopulationSpec, g2_path: np.ndarray,
                        grid: TimeGrid) -> OrderedExponentialTable:
    """Midpoint-rule interval factors for the ordered exponential of f.

    f(t) = (L + g2(t)) inv(2A); each interval factor is the exponential of
    dt times the average of the endpoint f values.  An empty interval
    (dt = 0) gives the identity.
    """
    cm = coupling_matrices(pop)
    f = (cm.lam_rows[None, :, :] + np.asarray(g2_path)) @ cm.inv_two_a
    dt = np.diff(np.asarray(grid.t))
    fmid = 0.5 * (f[:-1] + f[1:])
    factors = expm(dt[:, None, None] * fmid)
    return OrderedExponentialTable(grid=grid, factors=factors)
