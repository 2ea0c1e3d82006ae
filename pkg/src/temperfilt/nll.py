"""Scoring a tempered filter and differentiating the score in the exponents.

The score of a filter on labeled data is the mean negative log belief
mass assigned to the realized true state, averaged uniformly over time
steps and trajectories.  Its gradient with respect to the three
tempering exponents has a closed form: per (trajectory, step) the
contribution to each partial derivative is

    sum_x  b(x) * s_i(x)  -  s_i(x_true),

where the three per-state statistics s_i are conditional expectations of
additive trajectory functionals given the end state.  Those expectations
obey a forward recursion that runs alongside the filter, which is what
``GradientAccumulators`` carries.

Two evaluation modes exist.  The dataset mode treats each observed true
state as a one-sample estimate of the inner expectation over the true
conditional; it is what tuning and experiments consume and is batched
across trajectories.  The exact mode enumerates every output sequence of
a small true system and computes expectations with no sampling at all;
it exists so gradient correctness can be asserted at tight tolerances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .hmm import (
    Dataset,
    FiniteHmm,
    TemperedModel,
    TemperingParams,
    logsumexp,
    temper_model,
)
from .filtering import FilterCollapse

__all__ = [
    "ScoreReport",
    "GradientAccumulators",
    "NllGradient",
    "nll_score",
    "gradient_init",
    "gradient_step",
    "s_components",
    "nll_gradient",
    "fd_gradient",
    "exact_nll_score",
    "exact_nll_gradient",
    "fd_gradient_exact",
]


@dataclass(frozen=True)
class ScoreReport:
    """Mean negative log belief mass at the true states.

    ``per_step_nll[k]`` averages over trajectories at step ``k``;
    ``mean_nll`` averages those uniformly, so it equals the grand mean
    over all (trajectory, step) samples.  ``zero_mass_events`` lists the
    (trajectory index, step) pairs where the filter put no mass on the
    realized state (including every step after a full collapse); any such
    event makes the score infinite.
    """

    mean_nll: float
    per_step_nll: np.ndarray
    n_samples: int
    zero_mass_events: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class NllGradient:
    """Partial derivatives of the mean score in the three exponents."""

    d_lambda_L: float
    d_lambda_P: float
    d_lambda_B: float

    def as_array(self) -> np.ndarray:
        return np.array([self.d_lambda_L, self.d_lambda_P, self.d_lambda_B])


@dataclass(frozen=True)
class GradientAccumulators:
    """Filter state plus the two additive-statistic expectations.

    ``acc_L[x]`` is the expected sum of raw log emission probabilities
    along the history, and ``acc_P[x]`` the expected tempered log joint
    weight, both conditioned on the trajectory ending in state ``x``
    under the exponent-weighted history posterior.  Entries at states
    with zero forward weight are meaningless; consumers mask them against
    the (zero) belief mass at those states.
    """

    log_alpha: np.ndarray
    acc_L: np.ndarray
    acc_P: np.ndarray
    step: int


def _batch_normalize(log_alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize (M, n) log weights; collapsed rows become all -inf."""
    z = logsumexp(log_alpha, axis=1)
    with np.errstate(invalid="ignore"):
        out = log_alpha - z[:, None]
    out[~np.isfinite(z)] = -np.inf
    return out, z


def _log_belief_rows(log_alpha: np.ndarray, lambda_B: float) -> np.ndarray:
    """Read out log beliefs row-wise from normalized (M, n) log weights."""
    if lambda_B == 0.0:
        scaled = np.where(np.isneginf(log_alpha), -np.inf, 0.0)
    else:
        scaled = lambda_B * log_alpha
    return scaled - logsumexp(scaled, axis=1)[:, None]


def _batch_filter_nll(
    m: FiniteHmm, lam: TemperingParams, obs: np.ndarray, states: np.ndarray
) -> np.ndarray:
    """Per-(trajectory, step) negative log belief mass at the true state.

    Returns an (M, T) array with +inf wherever that mass was zero.  A
    trajectory whose belief collapses outright stays +inf from the
    collapse step onward while the rest of the batch keeps filtering.
    """
    tm = temper_model(m, lam)
    M, T = obs.shape
    nll = np.full((M, T), np.inf)

    log_alpha = np.empty((M, m.n_states))
    for t in range(T):
        if t == 0:
            log_alpha = tm.log_emit_lp[:, obs[:, 0]].T + tm.log_p0_p[None, :]
        else:
            stacked = tm.log_trans_p[None, :, :] + log_alpha[:, :, None]
            e = logsumexp(stacked, axis=1)
            log_alpha = tm.log_emit_lp[:, obs[:, t]].T + e
        log_alpha, z = _batch_normalize(log_alpha)
        # Collapsed rows turn all -inf and stay dead for the remaining steps.
        alive = np.flatnonzero(np.isfinite(z))
        if len(alive) == 0:
            break
        log_b = _log_belief_rows(log_alpha[alive], lam.lambda_B)
        nll[alive, t] = -log_b[np.arange(len(alive)), states[alive, t]]
    return nll


def nll_score(m: FiniteHmm, lam: TemperingParams, data: Dataset) -> ScoreReport:
    """Score the tempered filter on labeled trajectories.

    Finite only if the belief puts positive mass on the true state at
    every step of every trajectory; otherwise +inf, with the offending
    (trajectory, step) pairs reported.
    """
    obs = data.observations_matrix()
    states = data.states_matrix()
    nll = _batch_filter_nll(m, lam, obs, states)
    events = tuple(
        (int(i), int(t)) for i, t in np.argwhere(~np.isfinite(nll))
    )
    per_step = nll.mean(axis=0)
    return ScoreReport(
        mean_nll=float(per_step.mean()),
        per_step_nll=per_step,
        n_samples=nll.size,
        zero_mass_events=events,
    )


def gradient_init(
    tm: TemperedModel, model: FiniteHmm, y0: int, lam: TemperingParams
) -> GradientAccumulators:
    """Accumulators after the first observation: single-term sums."""
    log_alpha = tm.log_emit_lp[:, y0] + tm.log_p0_p
    z = logsumexp(log_alpha)
    if not np.isfinite(z):
        raise FilterCollapse(0)
    with np.errstate(divide="ignore"):
        log_emit_y = np.log(model.emit[:, y0])
        log_p0 = np.log(model.p0)
    acc_L = log_emit_y
    acc_P = lam.lambda_P * (lam.lambda_L * log_emit_y + log_p0)
    return GradientAccumulators(
        log_alpha=log_alpha - z, acc_L=acc_L, acc_P=acc_P, step=0
    )


def gradient_step(
    acc: GradientAccumulators,
    tm: TemperedModel,
    model: FiniteHmm,
    y: int,
    lam: TemperingParams,
) -> GradientAccumulators:
    """Advance filter weight and statistic expectations one step.

    The expectations are pushed forward with the normalized one-step
    history weights w(x -> x'), then each gains the new step's log terms.
    Products are masked so that zero weight times an undefined (-inf)
    accumulator contributes zero rather than NaN.
    """
    stacked = tm.log_trans_p + acc.log_alpha[:, None]
    e = logsumexp(stacked, axis=0)
    with np.errstate(invalid="ignore"):
        w = np.exp(stacked - e[None, :])
    w = np.where(np.isfinite(e)[None, :], w, 0.0)

    with np.errstate(divide="ignore"):
        log_emit_y = np.log(model.emit[:, y])
        log_trans = np.log(model.trans)

    acc_L_safe = np.where(np.isfinite(acc.acc_L), acc.acc_L, 0.0)
    acc_P_safe = np.where(np.isfinite(acc.acc_P), acc.acc_P, 0.0)
    acc_L = w.T @ acc_L_safe + log_emit_y
    # Zero-probability transitions carry zero weight, so masking the log
    # table keeps the product NaN-free.
    lt_masked = np.where(model.trans > 0.0, lam.lambda_P * log_trans, 0.0)
    trans_term = (w * lt_masked).sum(axis=0)
    acc_P = w.T @ acc_P_safe + trans_term + lam.lambda_P * lam.lambda_L * log_emit_y

    log_alpha = tm.log_emit_lp[:, y] + e
    z = logsumexp(log_alpha)
    if not np.isfinite(z):
        raise FilterCollapse(acc.step + 1)
    return GradientAccumulators(
        log_alpha=log_alpha - z, acc_L=acc_L, acc_P=acc_P, step=acc.step + 1
    )


def s_components(
    acc: GradientAccumulators, lam: TemperingParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-state statistics whose belief-vs-truth gap is the gradient.

    Each is defined up to an additive per-sequence constant, which the
    gradient assembly cancels; running normalizers are therefore dropped.
    The likelihood component folds its own exponent cancellation in
    analytically, so ``acc_L`` is scaled only by the product of the other
    two exponents.
    """
    s_L = lam.lambda_P * lam.lambda_B * acc.acc_L
    s_P = (lam.lambda_B / lam.lambda_P) * acc.acc_P
    s_B = acc.log_alpha
    return s_L, s_P, s_B


def _contribution(
    acc: GradientAccumulators, lam: TemperingParams, true_weights: np.ndarray
) -> np.ndarray:
    """Gradient contribution at one step, weights over true end states.

    ``true_weights`` is a point mass in dataset mode and the exact true
    conditional in enumeration mode.
    """
    log_b = _log_belief_rows(acc.log_alpha[None, :], lam.lambda_B)[0]
    b = np.exp(log_b)
    out = np.empty(3)
    mask = true_weights > 0.0
    for i, s in enumerate(s_components(acc, lam)):
        s_safe = np.where(np.isfinite(s), s, 0.0)
        expected = np.where(b > 0.0, b * s_safe, 0.0).sum()
        truth = float((true_weights[mask] * s[mask]).sum())
        out[i] = expected - truth
    return out


def _batch_gradient(
    m: FiniteHmm, lam: TemperingParams, obs: np.ndarray, states: np.ndarray
) -> np.ndarray:
    """Mean gradient over all (trajectory, step) samples.

    Mirrors the single-session recursion of ``gradient_step`` with a
    leading trajectory axis; equality of the two paths is covered by
    tests.  Raises on collapse or on zero belief mass at a true state,
    since the gradient is undefined there.
    """
    tm = temper_model(m, lam)
    M, T = obs.shape
    with np.errstate(divide="ignore"):
        log_emit = np.log(m.emit)
        log_trans = np.log(m.trans)
        log_p0 = np.log(m.p0)
    # Zero-probability transitions carry zero one-step weight whenever the
    # exponents are positive, so masking the log table here keeps the
    # weighted sums NaN-free without per-step where calls.
    lt_masked = np.where(m.trans > 0.0, lam.lambda_P * log_trans, 0.0)

    total = np.zeros(3)
    log_alpha = np.empty((M, m.n_states))
    acc_L = np.empty((M, m.n_states))
    acc_P = np.empty((M, m.n_states))

    for t in range(T):
        if t == 0:
            log_alpha = tm.log_emit_lp[:, obs[:, 0]].T + tm.log_p0_p[None, :]
            acc_L = log_emit[:, obs[:, 0]].T
            acc_P = lam.lambda_P * (lam.lambda_L * acc_L + log_p0[None, :])
        else:
            stacked = tm.log_trans_p[None, :, :] + log_alpha[:, :, None]
            amax = stacked.max(axis=1, keepdims=True)
            amax = np.where(np.isfinite(amax), amax, 0.0)
            ex = np.exp(stacked - amax)
            denom = ex.sum(axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                e = np.log(denom) + amax[:, 0, :]
                w = ex / denom[:, None, :]
            w = np.where(denom[:, None, :] > 0.0, w, 0.0)

            emit_y = log_emit[:, obs[:, t]].T
            acc_L_safe = np.where(np.isfinite(acc_L), acc_L, 0.0)
            acc_P_safe = np.where(np.isfinite(acc_P), acc_P, 0.0)
            acc_L = np.einsum("mxy,mx->my", w, acc_L_safe) + emit_y
            acc_P = (
                np.einsum("mxy,mx->my", w, acc_P_safe)
                + np.einsum("mxy,xy->my", w, lt_masked)
                + lam.lambda_P * lam.lambda_L * emit_y
            )
            log_alpha = tm.log_emit_lp[:, obs[:, t]].T + e

        log_alpha, z = _batch_normalize(log_alpha)
        if not np.isfinite(z).all():
            raise FilterCollapse(t)

        log_b = _log_belief_rows(log_alpha, lam.lambda_B)
        b = np.exp(log_b)
        true_mass = b[np.arange(M), states[:, t]]
        if np.any(true_mass == 0.0):
            bad = int(np.flatnonzero(true_mass == 0.0)[0])
            raise RuntimeError(
                f"belief has zero mass at the true state "
                f"(trajectory {bad}, k={t}); gradient undefined"
            )
        s_L = lam.lambda_P * lam.lambda_B * acc_L
        s_P = (lam.lambda_B / lam.lambda_P) * acc_P
        s_B = log_alpha
        for i, s in enumerate((s_L, s_P, s_B)):
            s_safe = np.where(np.isfinite(s), s, 0.0)
            expected = np.where(b > 0.0, b * s_safe, 0.0).sum(axis=1)
            truth = s[np.arange(M), states[:, t]]
            total[i] += (expected - truth).sum()

    return total / (M * T)


def nll_gradient(m: FiniteHmm, lam: TemperingParams, data: Dataset) -> NllGradient:
    """Analytic gradient of ``nll_score`` in the three exponents.

    Each observed true state stands in for the expectation over the true
    conditional, exactly as in the score itself.  All exponents must be
    strictly positive.
    """
    _require_positive(lam)
    g = _batch_gradient(m, lam, data.observations_matrix(), data.states_matrix())
    return NllGradient(*g)


def _require_positive(lam: TemperingParams) -> None:
    if min(lam.lambda_L, lam.lambda_P, lam.lambda_B) <= 0.0:
        raise ValueError("gradient requires strictly positive exponents")


def _perturbed(lam: TemperingParams, i: int, delta: float) -> TemperingParams:
    a = lam.as_array()
    a[i] += delta
    return TemperingParams.from_array(a)


def fd_gradient(
    m: FiniteHmm, lam: TemperingParams, data: Dataset, step: float = 1e-5
) -> NllGradient:
    """Central differences of the dataset score, shared data both sides."""
    if min(lam.as_array()) - step <= 0.0:
        raise ValueError("finite-difference step would leave the positive domain")
    g = np.empty(3)
    for i in range(3):
        hi = nll_score(m, _perturbed(lam, i, +step), data).mean_nll
        lo = nll_score(m, _perturbed(lam, i, -step), data).mean_nll
        g[i] = (hi - lo) / (2.0 * step)
    return NllGradient(*g)


# --- exact-expectation mode (small systems, full output enumeration) ---


def _true_forward(true_m: FiniteHmm, y: np.ndarray) -> list[np.ndarray]:
    """Unnormalized joint weights of (state, output prefix) along y."""
    alphas = [true_m.p0 * true_m.emit[:, y[0]]]
    for t in range(1, len(y)):
        alphas.append(true_m.emit[:, y[t]] * (true_m.trans.T @ alphas[-1]))
    return alphas


def _exact_terms(true_m: FiniteHmm, horizon: int):
    """Yield (sequence, weight, per-step true conditionals) triples.

    The weight is the probability of the full output sequence under the
    true system.  The conditional at step k depends only on the prefix,
    so summing full-sequence weights against prefix functions reproduces
    the prefix marginals exactly.
    """
    for seq in itertools.product(range(true_m.n_outputs), repeat=horizon + 1):
        y = np.asarray(seq, dtype=np.int64)
        alphas = _true_forward(true_m, y)
        weight = float(alphas[-1].sum())
        if weight == 0.0:
            continue
        conditionals = [a / a.sum() for a in alphas]
        yield y, weight, conditionals


def exact_nll_score(
    true_m: FiniteHmm, model: FiniteHmm, lam: TemperingParams, horizon: int
) -> float:
    """Expected score with both expectations enumerated, no sampling."""
    tm = temper_model(model, lam)
    total = 0.0
    for y, weight, conds in _exact_terms(true_m, horizon):
        log_alpha = tm.log_emit_lp[:, y[0]] + tm.log_p0_p
        for k in range(horizon + 1):
            if k > 0:
                e = logsumexp(tm.log_trans_p + log_alpha[:, None], axis=0)
                log_alpha = tm.log_emit_lp[:, y[k]] + e
            z = logsumexp(log_alpha)
            if not np.isfinite(z):
                return math.inf
            log_alpha = log_alpha - z
            log_b = _log_belief_rows(log_alpha[None, :], lam.lambda_B)[0]
            p = conds[k]
            if np.any((p > 0.0) & np.isneginf(log_b)):
                return math.inf
            total += weight * -np.where(p > 0.0, p * log_b, 0.0).sum()
    return total / (horizon + 1)


def exact_nll_gradient(
    true_m: FiniteHmm, model: FiniteHmm, lam: TemperingParams, horizon: int
) -> NllGradient:
    """Gradient of the enumerated expected score."""
    _require_positive(lam)
    tm = temper_model(model, lam)
    total = np.zeros(3)
    for y, weight, conds in _exact_terms(true_m, horizon):
        acc = gradient_init(tm, model, int(y[0]), lam)
        total += weight * _contribution(acc, lam, conds[0])
        for k in range(1, horizon + 1):
            acc = gradient_step(acc, tm, model, int(y[k]), lam)
            total += weight * _contribution(acc, lam, conds[k])
    return NllGradient(*(total / (horizon + 1)))


def fd_gradient_exact(
    true_m: FiniteHmm,
    model: FiniteHmm,
    lam: TemperingParams,
    horizon: int,
    step: float = 1e-5,
) -> NllGradient:
    """Central differences of the enumerated expected score."""
    if min(lam.as_array()) - step <= 0.0:
        raise ValueError("finite-difference step would leave the positive domain")
    g = np.empty(3)
    for i in range(3):
        hi = exact_nll_score(true_m, model, _perturbed(lam, i, +step), horizon)
        lo = exact_nll_score(true_m, model, _perturbed(lam, i, -step), horizon)
        g[i] = (hi - lo) / (2.0 * step)
    return NllGradient(*g)
