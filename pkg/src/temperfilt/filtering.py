"""Tempered recursive filtering for finite HMMs.

The belief over the current hidden state is defined through three
exponents: the likelihood exponent scales each emission factor, the
posterior exponent scales the whole trajectory weight, and the belief
exponent scales the marginal over the current state after all earlier
states have been summed out.

Two implementations live here.  ``run_filter`` is the production path: a
log-domain forward recursion whose internal state carries no belief
exponent at all (the exponent is applied only when a belief is read out,
which is what makes the recursion linear in the state weights and immune
to repeated root-taking).  ``brute_force_belief`` is the reference path:
it enumerates every state trajectory and evaluates the defining sum
directly.  It is deliberately written with scalar ``math`` calls and
``itertools`` rather than the array code used everywhere else, so the two
paths share no numerics.

Also here: a deliberately naive linear-domain recursion (kept as a
regression subject for underflow behavior), the max-product filter it
interpolates toward, and the variational objective whose maximizer the
tempered trajectory posterior is.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .hmm import FiniteHmm, TemperedModel, TemperingParams, logsumexp, temper_model

__all__ = [
    "FilterCollapse",
    "LogForwardState",
    "FilterOutput",
    "filter_init",
    "filter_step",
    "belief_readout",
    "run_filter",
    "run_filter_naive",
    "brute_force_belief",
    "tempered_trajectory_posterior",
    "map_filter",
    "map_limit_check",
    "elbo_objective",
]

ENUMERATION_GUARD = 10**7


class FilterCollapse(RuntimeError):
    """Raised when every state loses all weight after an observation.

    ``step`` is the time index at which the collapse happened.
    """

    def __init__(self, step: int):
        super().__init__(
            f"belief collapsed at k={step}: observation has zero weight "
            f"under the model for every state"
        )
        self.step = step


@dataclass(frozen=True)
class LogForwardState:
    """Per-step internal state of the log-domain recursion.

    ``log_alpha`` is the normalized log forward weight over states
    (``logsumexp(log_alpha) == 0``); ``log_norm_accum`` is the running sum
    of subtracted normalizers, so ``log_alpha + log_norm_accum`` recovers
    the unnormalized log weights.  The belief exponent is absent here by
    design; see ``belief_readout``.
    """

    log_alpha: np.ndarray
    log_norm_accum: float
    step: int


@dataclass(frozen=True)
class FilterOutput:
    """Beliefs for steps ``0..h``, or a truncated prefix on collapse."""

    beliefs: np.ndarray
    collapsed_at: int | None = None


def _normalize(log_alpha: np.ndarray, step: int) -> tuple[np.ndarray, float]:
    z = logsumexp(log_alpha)
    if not np.isfinite(z):
        raise FilterCollapse(step)
    return log_alpha - z, float(z)


def filter_init(tm: TemperedModel, y0: int, lam: TemperingParams) -> LogForwardState:
    """Start the recursion from the first observation."""
    log_alpha = tm.log_emit_lp[:, y0] + tm.log_p0_p
    log_alpha, z = _normalize(log_alpha, 0)
    return LogForwardState(log_alpha=log_alpha, log_norm_accum=z, step=0)


def filter_step(state: LogForwardState, tm: TemperedModel, y: int) -> LogForwardState:
    """Advance one time step: propagate through transitions, fold in y."""
    # e[x'] = logsumexp_x(lambda_P*log trans[x, x'] + log_alpha[x])
    e = logsumexp(tm.log_trans_p + state.log_alpha[:, None], axis=0)
    log_alpha = tm.log_emit_lp[:, y] + e
    log_alpha, z = _normalize(log_alpha, state.step + 1)
    return LogForwardState(
        log_alpha=log_alpha,
        log_norm_accum=state.log_norm_accum + z,
        step=state.step + 1,
    )


def belief_readout(state: LogForwardState, lambda_B: float) -> np.ndarray:
    """Apply the belief exponent to the forward weight and normalize."""
    if lambda_B == 0.0:
        # 0 * (-inf) is nan; the zeroth power of a zero weight stays zero.
        scaled = np.where(np.isneginf(state.log_alpha), -np.inf, 0.0)
    else:
        scaled = lambda_B * state.log_alpha
    return np.exp(scaled - logsumexp(scaled))


def run_filter(
    m: FiniteHmm,
    lam: TemperingParams,
    y,
    allow_collapse: bool = False,
) -> FilterOutput:
    """Filter a whole observation sequence, one belief per step.

    On collapse, raises ``FilterCollapse`` unless ``allow_collapse`` is
    set, in which case the beliefs computed so far are returned together
    with the offending time index.
    """
    y = np.asarray(y, dtype=np.int64)
    tm = temper_model(m, lam)
    beliefs = np.zeros((len(y), m.n_states))
    try:
        state = filter_init(tm, int(y[0]), lam)
        beliefs[0] = belief_readout(state, lam.lambda_B)
        for t in range(1, len(y)):
            state = filter_step(state, tm, int(y[t]))
            beliefs[t] = belief_readout(state, lam.lambda_B)
    except FilterCollapse as exc:
        if not allow_collapse:
            raise
        return FilterOutput(beliefs=beliefs[: exc.step], collapsed_at=exc.step)
    return FilterOutput(beliefs=beliefs, collapsed_at=None)


def run_filter_naive(
    m: FiniteHmm,
    lam: TemperingParams,
    y,
    renormalize_each_step: bool = True,
    allow_collapse: bool = False,
) -> FilterOutput:
    """Linear-domain recursion on the tempered weight tables.

    Kept as the underflow regression subject: on long sequences with
    small probabilities and large exponents, entries hit exact zero (or
    the whole belief does) where the log-domain path stays finite.
    Requires a strictly positive belief exponent because the previous
    belief re-enters the recursion through its reciprocal power.
    """
    if lam.lambda_B <= 0.0:
        raise ValueError("naive recursion needs lambda_B > 0")
    y = np.asarray(y, dtype=np.int64)
    tm = temper_model(m, lam)
    beliefs = np.zeros((len(y), m.n_states))

    b = tm.emit_t[:, y[0]] * tm.p0_t**lam.lambda_B
    for t in range(len(y)):
        if t > 0:
            propagated = tm.trans_t.T @ b ** (1.0 / lam.lambda_B)
            b = tm.emit_t[:, y[t]] * propagated**lam.lambda_B
        s = b.sum()
        if s == 0.0 or not np.isfinite(s):
            if allow_collapse:
                return FilterOutput(beliefs=beliefs[:t], collapsed_at=t)
            raise FilterCollapse(t)
        beliefs[t] = b / s
        if renormalize_each_step:
            b = beliefs[t]
    return FilterOutput(beliefs=beliefs, collapsed_at=None)


def _log_weight(p: float, exponent: float) -> float:
    """log(p**exponent) with 0**0 == 1, as a plain scalar."""
    if exponent == 0.0:
        return 0.0
    if p == 0.0:
        return -math.inf
    return exponent * math.log(p)


def brute_force_belief(m: FiniteHmm, lam: TemperingParams, y, k: int) -> np.ndarray:
    """Reference belief at time ``k`` by full trajectory enumeration.

    Sums the tempered weight of every state path ``x_{0:k}`` grouped by
    its final state, applies the belief exponent to the group sums, and
    normalizes.  This is the oracle the recursive implementation is
    tested against; it intentionally avoids the array machinery above.
    """
    n = m.n_states
    if n ** (k + 1) > ENUMERATION_GUARD:
        raise ValueError(
            f"enumeration size {n}^{k + 1} exceeds guard {ENUMERATION_GUARD}"
        )
    y = [int(v) for v in y]
    p0 = m.p0.tolist()
    trans = m.trans.tolist()
    emit = m.emit.tolist()
    lam_L, lam_P, lam_B = lam.lambda_L, lam.lambda_P, lam.lambda_B

    group_logs: list[list[float]] = [[] for _ in range(n)]
    for path in itertools.product(range(n), repeat=k + 1):
        log_lik = sum(_log_weight(emit[x][y[t]], lam_L) for t, x in enumerate(path))
        log_prior = _log_weight(p0[path[0]], 1.0) + sum(
            _log_weight(trans[path[t - 1]][path[t]], 1.0) for t in range(1, k + 1)
        )
        # (lik^lam_L * prior)^lam_P in the log domain, 0**0 == 1.
        log_w = 0.0 if lam_P == 0.0 else lam_P * (log_lik + log_prior)
        if log_w > -math.inf:
            group_logs[path[-1]].append(log_w)

    # logsumexp per group, then the belief exponent, all in scalar math.
    finite = [v for g in group_logs for v in g]
    if not finite:
        raise FilterCollapse(k)
    shift = max(finite)
    group_sums = [sum(math.exp(v - shift) for v in g) for g in group_logs]
    log_groups = [
        _log_weight(s, lam_B) if s > 0.0 else -math.inf for s in group_sums
    ]
    top = max(log_groups)
    weights = [math.exp(v - top) if v > -math.inf else 0.0 for v in log_groups]
    total = sum(weights)
    return np.array([w / total for w in weights])


def tempered_trajectory_posterior(m: FiniteHmm, lam: TemperingParams, y) -> np.ndarray:
    """Distribution over all state paths ``x_{0:k}``, by enumeration.

    Entry order follows ``itertools.product(range(n_states), repeat=k+1)``
    (lexicographic).  The returned vector is the normalized posterior-
    exponent-tempered trajectory weight; no belief exponent is involved
    because nothing is marginalized.
    """
    y = np.asarray(y, dtype=np.int64)
    n = m.n_states
    k = len(y) - 1
    if n ** (k + 1) > ENUMERATION_GUARD:
        raise ValueError(
            f"enumeration size {n}^{k + 1} exceeds guard {ENUMERATION_GUARD}"
        )
    logs = np.empty(n ** (k + 1))
    for i, path in enumerate(itertools.product(range(n), repeat=k + 1)):
        log_lik = sum(
            _log_weight(m.emit[x, y[t]], lam.lambda_L) for t, x in enumerate(path)
        )
        log_prior = _log_weight(m.p0[path[0]], 1.0) + sum(
            _log_weight(m.trans[path[t - 1], path[t]], 1.0) for t in range(1, k + 1)
        )
        joint = log_lik + log_prior
        logs[i] = 0.0 if lam.lambda_P == 0.0 else lam.lambda_P * joint
    top = logs.max()
    if top == -math.inf:
        raise FilterCollapse(k)
    w = np.exp(logs - top)
    return w / w.sum()


def map_filter(m: FiniteHmm, lambda_L: float, y) -> tuple[np.ndarray, np.ndarray]:
    """Max-product filter: most probable trajectory weight per end state.

    Runs the Viterbi-style max recursion with the emission factors raised
    to ``lambda_L``, alongside a sum recursion for the evidence, so the
    returned weights are posterior trajectory probabilities (the max
    weight divided by the total observation weight).  Also returns those
    weights normalized over the end state.  Ties between equally probable
    predecessors do not affect either output.
    """
    y = np.asarray(y, dtype=np.int64)
    with np.errstate(divide="ignore"):
        log_trans = np.log(m.trans)
        log_emit_l = (
            lambda_L * np.log(m.emit) if lambda_L != 0.0 else np.zeros_like(m.emit)
        )
        log_p0 = np.log(m.p0)

    log_max = log_emit_l[:, y[0]] + log_p0
    log_sum = log_max.copy()
    for t in range(1, len(y)):
        step = log_trans + log_max[:, None]
        log_max = log_emit_l[:, y[t]] + step.max(axis=0)
        log_sum = log_emit_l[:, y[t]] + logsumexp(
            log_trans + log_sum[:, None], axis=0
        )
    log_evidence = logsumexp(log_sum)
    if not np.isfinite(log_evidence):
        raise FilterCollapse(len(y) - 1)
    weights = np.exp(log_max - log_evidence)
    total = weights.sum()
    if total == 0.0:
        raise FilterCollapse(len(y) - 1)
    return weights, weights / total


def map_limit_check(m: FiniteHmm, y, p_bar: float) -> float:
    """L-inf gap between the tempered belief at (1, p_bar, 1/p_bar) and
    the normalized max-product belief, at the final step.

    The gap shrinks as ``p_bar`` grows on instances where each end state
    has a unique most probable history.
    """
    lam = TemperingParams(1.0, float(p_bar), 1.0 / float(p_bar))
    tempered = run_filter(m, lam, y).beliefs[-1]
    _, map_belief = map_filter(m, 1.0, y)
    return float(np.max(np.abs(tempered - map_belief)))


def elbo_objective(q, m: FiniteHmm, y, lam: TemperingParams) -> float:
    """Entropy-rebalanced evidence lower bound of a trajectory proposal.

    ``q`` is a distribution over all state paths in the enumeration order
    of ``tempered_trajectory_posterior``.  The value is

        E_q[log lik] - (1/lam_L) KL(q || prior)
                     + (1/lam_L) (1/lam_P - 1) H(q),

    with ``0*log 0 := 0``.  Proposals with mass outside the prior support
    make the KL term infinite and the objective ``-inf``, which is a
    valid value rather than an error.  The likelihood and posterior
    exponents must be strictly positive.
    """
    if lam.lambda_L <= 0.0 or lam.lambda_P <= 0.0:
        raise ValueError("objective needs lambda_L > 0 and lambda_P > 0")
    q = np.asarray(q, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    n = m.n_states
    k = len(y) - 1
    if q.shape != (n ** (k + 1),):
        raise ValueError(f"q must have length {n ** (k + 1)}, got {q.shape}")
    if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("q must be a probability distribution")

    e_loglik = 0.0
    kl = 0.0
    entropy = 0.0
    for qi, path in zip(q, itertools.product(range(n), repeat=k + 1)):
        if qi == 0.0:
            continue
        log_prior = _log_weight(m.p0[path[0]], 1.0) + sum(
            _log_weight(m.trans[path[t - 1], path[t]], 1.0) for t in range(1, k + 1)
        )
        if log_prior == -math.inf:
            return -math.inf
        log_lik = sum(_log_weight(m.emit[x, y[t]], 1.0) for t, x in enumerate(path))
        e_loglik += qi * log_lik
        kl += qi * (math.log(qi) - log_prior)
        entropy -= qi * math.log(qi)
    if e_loglik == -math.inf:
        return -math.inf
    return (
        e_loglik
        - kl / lam.lambda_L
        + (1.0 / lam.lambda_P - 1.0) * entropy / lam.lambda_L
    )
