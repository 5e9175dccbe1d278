"""Independent numerical oracles used to pin expected values in tests.

Everything here is deliberately dumb and route-independent from the
engine: straight adaptive step-doubling RK4 for the backward gain
equations, a brute-force particle filter, and small Monte Carlo /
dynamic-programming checkers.  Keep these free of imports from mfgexec
internals beyond the public spec types.
"""

import numpy as np


def rk4_backward(rhs, y_end, t_end, t_eval, rtol=1e-10, atol=1e-13,
                 h0=None, max_steps=2_000_000):
    """Integrate dy/dt = rhs(t, y) backward from t_end down to min(t_eval).

    Classic RK4 with step doubling and Richardson extrapolation; the step
    controller clamps so every requested time in t_eval is hit exactly.
    Returns an array of y values aligned with t_eval (ascending times).
    """
    t_eval = np.asarray(t_eval, dtype=float)
    assert np.all(np.diff(t_eval) >= 0), "t_eval must be ascending"
    targets = t_eval[::-1]                   # descending
    y = np.array(y_end, dtype=float)
    out = np.empty((len(targets),) + y.shape)
    t = float(t_end)
    h = -abs(h0) if h0 else -max(1e-8 * abs(t_end), 1e-12)
    n_steps = 0

    def step(t, y, h):
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t + h, y + h * k3)
        return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    idx = 0
    while idx < len(targets):
        tgt = targets[idx]
        if t <= tgt + 1e-15 * max(1.0, abs(t_end)):
            out[idx] = y
            idx += 1
            continue
        h_try = max(h, tgt - t)              # h negative, do not overshoot
        while True:
            full = step(t, y, h_try)
            half = step(t, y, 0.5 * h_try)
            two = step(t + 0.5 * h_try, half, 0.5 * h_try)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(two))
            err = np.max(np.abs(two - full) / (15.0 * scale))
            n_steps += 1
            if n_steps > max_steps:
                raise RuntimeError("rk4_backward: step budget exhausted")
            if err <= 1.0 or abs(h_try) < 1e-14 * max(1.0, abs(t_end)):
                y = two + (two - full) / 15.0
                t = t + h_try
                grow = 0.9 * (1.0 / max(err, 1e-16)) ** 0.2
                h = h_try * min(5.0, max(0.2, grow))
                break
            h_try *= max(0.2, 0.9 * (1.0 / err) ** 0.2)
    return out[::-1]


def g2_rhs(pop):
    """Forward-time right side of the stacked gain equation for `pop`."""
    a = np.array([s.a for s in pop.subpops])
    phi = np.diag([s.phi for s in pop.subpops])
    p = np.array([s.p for s in pop.subpops])
    k = len(a)
    lam_rows = pop.lam * np.tile(p, (k, 1))
    inv2a = np.diag(1.0 / (2.0 * a))

    def rhs(t, g):
        return -((lam_rows + g) @ inv2a @ g - 2.0 * phi)
    return rhs


def g2_oracle(pop, grid_t, horizon, rtol=1e-10):
    """Backward RK4 reference for g2 at the given node times."""
    k = pop.n_classes
    psi = np.diag([s.psi for s in pop.subpops])
    return rk4_backward(g2_rhs(pop), -2.0 * psi, horizon, grid_t, rtol=rtol)


def h2_rhs(a, phi):
    def rhs(t, h):
        return -(h * h / (2.0 * a) - 2.0 * phi)
    return rhs


def h2_oracle(a, phi, psi, t_eval, horizon, rtol=1e-11):
    """Backward RK4 reference for the scalar within-class gain."""
    vals = rk4_backward(h2_rhs(a, phi), np.array(-2.0 * psi), horizon,
                        t_eval, rtol=rtol)
    return vals.reshape(len(np.atleast_1d(t_eval)))


# ---------------------------------------------------------------------------
# latent-chain oracles
# ---------------------------------------------------------------------------

def _directional_intensities(market, f):
    gap = np.asarray(market.theta_states, dtype=float) - f
    up = market.sigma + market.kappa * np.maximum(gap, 0.0)
    down = market.sigma + market.kappa * np.maximum(-gap, 0.0)
    return up, down


def _interval_state_likelihood(market, f_start, t_lo, t_hi, events):
    """Exact per-state likelihood of the tick record on one interval.

    Piecewise-constant survival between ticks plus the directional
    intensity at each tick, for every chain state held fixed over the
    interval.  Returns (likelihood vector, f at interval end).
    """
    m = len(market.theta_states)
    logw = np.zeros(m)
    f = f_start
    t_cur = t_lo
    for (te, direction) in events:
        up, down = _directional_intensities(market, f)
        total = up + down
        logw += -total * (te - t_cur)
        lik = up if direction > 0 else down
        with np.errstate(divide="ignore"):
            logw += np.log(lik)
        f += np.sign(direction) * market.alpha_tick
        t_cur = te
    up, down = _directional_intensities(market, f)
    logw += -(up + down) * (t_hi - t_cur)
    return np.exp(logw - logw.max()), f


def particle_posterior(market, grid_t, events_by_interval, n_particles, rng):
    """Bootstrap particle filter over the chain, collapsed to state counts.

    Particles only carry the chain state, so the population is a count
    vector; multinomial transition, exact interval likelihood, weighted
    estimate, then multinomial resampling.  Returns posterior estimates
    and their standard errors at every grid node.
    """
    from scipy.linalg import expm as _expm
    m = len(market.theta_states)
    n_nodes = len(grid_t)
    p_step = _expm((grid_t[1] - grid_t[0]) * np.asarray(market.generator))
    p_step = np.clip(p_step, 0.0, None)
    p_step /= p_step.sum(axis=1, keepdims=True)

    counts = rng.multinomial(n_particles, np.asarray(market.prior, dtype=float))
    post = np.empty((n_nodes, m))
    se = np.empty((n_nodes, m))
    post[0] = counts / n_particles
    se[0] = np.sqrt(post[0] * (1.0 - post[0]) / n_particles)

    f = market.f0
    for n in range(n_nodes - 1):
        moved = np.zeros(m, dtype=np.int64)
        for i in range(m):
            if counts[i]:
                moved += rng.multinomial(counts[i], p_step[i])
        w, f = _interval_state_likelihood(
            market, f, grid_t[n], grid_t[n + 1], events_by_interval[n])
        weighted = moved * w
        total = weighted.sum()
        if total <= 0.0:
            raise RuntimeError("particle filter collapsed")
        est = weighted / total
        ess = total * total / np.sum(moved * w * w)
        post[n + 1] = est
        se[n + 1] = np.sqrt(est * (1.0 - est) / ess)
        counts = rng.multinomial(n_particles, est)
    return post, se


def particle_posterior_blocks(market, grid_t, events_by_interval, n_particles,
                              n_blocks, rng):
    """Posterior mean and standard error over independent filter blocks.

    Splits the particle budget across independent bootstrap filters and
    averages them.  The across-block spread captures the full
    accumulated Monte Carlo error including resampling noise, which the
    per-step effective-sample-size bound understates.
    """
    per_block = n_particles // n_blocks
    runs = np.stack([
        particle_posterior(market, grid_t, events_by_interval, per_block,
                           rng)[0]
        for _ in range(n_blocks)])
    mean = runs.mean(axis=0)
    se = runs.std(axis=0, ddof=1) / np.sqrt(n_blocks)
    return mean, se


def mc_drift_expectation(market, posterior0, f0, lead_time, n_paths, rng,
                         n_sub=400):
    """Monte Carlo of the joint chain/price jump system.

    Independent route for the drift forecast: simulate the chain by exact
    per-substep transition probabilities and the price by Bernoulli tick
    draws, then average alpha_kappa*(theta - F) at the lead time.
    Returns (estimate, standard error).
    """
    from scipy.linalg import expm as _expm
    theta = np.asarray(market.theta_states, dtype=float)
    m = len(theta)
    dt = lead_time / n_sub
    p_step = _expm(dt * np.asarray(market.generator))
    p_step = np.clip(p_step, 0.0, None)
    p_step /= p_step.sum(axis=1, keepdims=True)
    cum = np.cumsum(p_step, axis=1)

    state = rng.choice(m, size=n_paths, p=np.asarray(posterior0, dtype=float))
    f = np.full(n_paths, float(f0))
    for _ in range(n_sub):
        u = rng.random(n_paths)
        state = (u[:, None] > cum[state]).sum(axis=1)
        gap = theta[state] - f
        up_p = (market.sigma + market.kappa * np.maximum(gap, 0.0)) * dt
        down_p = (market.sigma + market.kappa * np.maximum(-gap, 0.0)) * dt
        r = rng.random(n_paths)
        f = np.where(r < up_p, f + market.alpha_tick,
                     np.where(r < up_p + down_p, f - market.alpha_tick, f))
    vals = market.alpha_tick * market.kappa * (theta[state] - f)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_paths))
