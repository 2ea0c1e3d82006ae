"""Shared generators and independent reference implementations.

The reference filters here are deliberately written in the most boring
textbook style available (explicit loops, linear domain, no shared code
with the package) so they can serve as oracles for the package's
log-domain implementations.
"""

import numpy as np

from temperfilt import FiniteHmm, LinearGaussianModel, TemperingParams


def random_hmm(rng, n_states, n_outputs, floor=0.0):
    """Random row-stochastic model; ``floor`` mixes in uniform mass so
    every probability is at least floor / alphabet size."""

    def rows(n, m):
        raw = rng.dirichlet(np.ones(m), size=n)
        return (1.0 - floor) * raw + floor / m

    return FiniteHmm(
        p0=rows(1, n_states)[0],
        trans=rows(n_states, n_states),
        emit=rows(n_states, n_outputs),
    )


def random_lambda(rng, lo=0.25, hi=4.0):
    log_lo, log_hi = np.log(lo), np.log(hi)
    return TemperingParams(*np.exp(rng.uniform(log_lo, log_hi, size=3)))


def path_log_weights(m, y):
    """(end state, log joint weight) for every state path, linear math."""
    import itertools

    logs = []
    for path in itertools.product(range(m.n_states), repeat=len(y)):
        w = m.p0[path[0]] * m.emit[path[0], y[0]]
        for t in range(1, len(y)):
            w *= m.trans[path[t - 1], path[t]] * m.emit[path[t], y[t]]
        logs.append((path[-1], np.log(w) if w > 0 else -np.inf))
    return logs


def has_unique_maxima(m, y, gap=0.02):
    """True when every end state's best history beats its runner-up by a
    clear log-domain margin."""
    per_state = {x: [] for x in range(m.n_states)}
    for end, lw in path_log_weights(m, y):
        per_state[end].append(lw)
    for logs in per_state.values():
        logs.sort(reverse=True)
        if len(logs) > 1 and logs[0] - logs[1] < gap:
            return False
    return True


def classic_forward(m, y):
    """Standard normalized forward filter, linear domain, loop per step.

    Returns an array of shape (len(y), n_states) of filtering posteriors.
    """
    beliefs = []
    alpha = m.p0 * m.emit[:, y[0]]
    alpha = alpha / alpha.sum()
    beliefs.append(alpha)
    for t in range(1, len(y)):
        predicted = m.trans.T @ alpha
        alpha = m.emit[:, y[t]] * predicted
        alpha = alpha / alpha.sum()
        beliefs.append(alpha)
    return np.array(beliefs)


def random_linear_gaussian(rng, n, m):
    """Random stable system with well-conditioned SPD covariances."""

    def spd(size):
        a = rng.normal(size=(size, size))
        return a @ a.T + size * np.eye(size)

    a = rng.normal(size=(n, n))
    a = 0.9 * a / max(1.0, np.max(np.abs(np.linalg.eigvals(a))))
    return LinearGaussianModel(
        A=a,
        C=rng.normal(size=(m, n)),
        sigma_w=spd(n),
        sigma_v=spd(m),
        x0_mean=rng.normal(size=n),
        sigma_x0=spd(n),
    )


def textbook_kalman(system, ys):
    """Covariance-form Kalman filter with an explicit gain matrix.

    The first observation updates the initial prior directly; prediction
    happens before each later update.  Returns (means, covs) lists.
    """
    a, c = system.A, system.C
    mean = system.x0_mean.copy()
    cov = system.sigma_x0.copy()
    means, covs = [], []
    eye = np.eye(len(mean))
    for t, y in enumerate(ys):
        if t > 0:
            mean = a @ mean
            cov = a @ cov @ a.T + system.sigma_w
        gain = cov @ c.T @ np.linalg.inv(c @ cov @ c.T + system.sigma_v)
        mean = mean + gain @ (np.atleast_1d(y) - c @ mean)
        cov = (eye - gain @ c) @ cov
        means.append(mean.copy())
        covs.append(cov.copy())
    return means, covs
