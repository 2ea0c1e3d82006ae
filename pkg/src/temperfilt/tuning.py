"""Model identification and cross-validated tuning of the exponents.

Identification is counting with additive smoothing: every cell of the
initial, transition, and emission tables starts at a pseudocount, so the
identified model assigns small positive probability to everything it
never saw and can never collapse a filter.

Tuning searches the exponent triple by gradient descent on held-out
score.  The search runs in log space, which keeps the exponents strictly
positive without constraints, and accepts a step only when the
validation score improves, halving the step otherwise.  With K folds the
per-fold optima are averaged componentwise into the final triple.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hmm import Dataset, FiniteHmm, TemperingParams
from .nll import ScoreReport, nll_gradient, nll_score

__all__ = [
    "IdentConfig",
    "TuneConfig",
    "TuneResult",
    "FitResult",
    "identify",
    "kfold_split",
    "train_test_split",
    "tune_lambda",
    "fit_pipeline",
]

# Names of the three exponents, in parameter-vector order; used to pin
# individual components during ablation runs.
COMPONENTS = ("L", "P", "B")


@dataclass(frozen=True)
class IdentConfig:
    """Alphabet sizes and smoothing strength for identification."""

    n_states: int
    n_outputs: int
    pseudocount: float = 1.0

    def __post_init__(self):
        if self.pseudocount <= 0.0:
            raise ValueError("pseudocount must be positive")
        if self.n_states < 1 or self.n_outputs < 1:
            raise ValueError("alphabet sizes must be at least 1")


@dataclass(frozen=True)
class TuneConfig:
    """Fold count and descent hyperparameters.

    ``pinned`` lists exponent names ("L", "P", "B") that are held at 1
    throughout the search; the convergence test uses the max norm of the
    log-space gradient over the free components.
    """

    n_folds: int = 5
    max_iters: int = 200
    init_lambda: TemperingParams = field(default_factory=TemperingParams.neutral)
    step_size: float = 0.1
    convergence_tol: float = 1e-4
    seed: int = 0
    pinned: tuple[str, ...] = ()

    def __post_init__(self):
        if self.n_folds < 2:
            raise ValueError("need at least 2 folds")
        if self.step_size <= 0.0:
            raise ValueError("step_size must be positive")
        for name in self.pinned:
            if name not in COMPONENTS:
                raise ValueError(f"unknown pinned component {name!r}")


@dataclass(frozen=True)
class TuneResult:
    """Fold-averaged exponents plus the full per-fold search record.

    ``per_fold_val_nll`` holds (initial, final) validation scores per
    fold; ``trace`` holds, per fold, the accepted (lambda, score)
    sequence starting from the initial point.
    """

    lambda_star: TemperingParams
    per_fold_lambdas: tuple[TemperingParams, ...]
    per_fold_val_nll: tuple[tuple[float, float], ...]
    trace: tuple[tuple[tuple[TemperingParams, float], ...], ...]


@dataclass(frozen=True)
class FitResult:
    """Outcome of the full train/tune/test pipeline."""

    model: FiniteHmm
    lambda_star: TemperingParams
    test_untempered: ScoreReport
    test_tempered: ScoreReport
    tune_result: TuneResult


def identify(data: Dataset, cfg: IdentConfig) -> FiniteHmm:
    """Count-based tables with a pseudocount in every cell."""
    if len(data) == 0:
        raise ValueError("cannot identify from an empty dataset")
    n, m = cfg.n_states, cfg.n_outputs
    p0_counts = np.full(n, cfg.pseudocount)
    trans_counts = np.full((n, n), cfg.pseudocount)
    emit_counts = np.full((n, m), cfg.pseudocount)
    for traj in data.trajectories:
        s = traj.states
        p0_counts[s[0]] += 1.0
        np.add.at(trans_counts, (s[:-1], s[1:]), 1.0)
        np.add.at(emit_counts, (s, traj.observations), 1.0)
    return FiniteHmm(
        p0=p0_counts / p0_counts.sum(),
        trans=trans_counts / trans_counts.sum(axis=1, keepdims=True),
        emit=emit_counts / emit_counts.sum(axis=1, keepdims=True),
    )


def kfold_split(
    data: Dataset, K: int, seed: int
) -> list[tuple[Dataset, Dataset]]:
    """Shuffled trajectory-level partition into K near-equal folds."""
    M = len(data)
    if M < K:
        raise ValueError(f"need at least {K} trajectories, have {M}")
    order = np.random.default_rng(seed).permutation(M)
    folds = np.array_split(order, K)
    out = []
    for i, val_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((data.subset(np.sort(train_idx)), data.subset(np.sort(val_idx))))
    return out


def train_test_split(
    data: Dataset, ratio: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Shuffled trajectory-level split; ``ratio`` is the training share."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must be in (0, 1)")
    M = len(data)
    n_train = int(round(ratio * M))
    if n_train == 0 or n_train == M:
        raise ValueError(f"split {ratio} leaves an empty part for {M} trajectories")
    order = np.random.default_rng(seed).permutation(M)
    return data.subset(np.sort(order[:n_train])), data.subset(np.sort(order[n_train:]))


def _pin_mask(pinned: tuple[str, ...]) -> np.ndarray:
    return np.array([name not in pinned for name in COMPONENTS])


def _descend(
    model: FiniteHmm, val: Dataset, cfg: TuneConfig
) -> tuple[TemperingParams, float, float, list[tuple[TemperingParams, float]]]:
    """Log-space descent of the validation score for one fold.

    Returns the tuned exponents, the initial and final scores, and the
    accepted-iterate trace.  Candidates that score infinite (collapse) are
    rejected like any non-improving step.
    """
    free = _pin_mask(cfg.pinned)
    lam = cfg.init_lambda
    theta = np.log(lam.as_array())
    score = nll_score(model, lam, val).mean_nll
    initial_score = score
    trace = [(lam, score)]
    step = cfg.step_size
    min_step = 1e-8

    for _ in range(cfg.max_iters):
        grad_theta = lam.as_array() * nll_gradient(model, lam, val).as_array()
        grad_theta[~free] = 0.0
        if np.max(np.abs(grad_theta)) <= cfg.convergence_tol:
            break
        accepted = False
        while step >= min_step:
            theta_new = theta - step * grad_theta
            arr = np.exp(theta_new)
            arr[~free] = 1.0
            lam_new = TemperingParams.from_array(arr)
            score_new = nll_score(model, lam_new, val).mean_nll
            if score_new < score:
                theta, lam, score = theta_new, lam_new, score_new
                trace.append((lam, score))
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return lam, initial_score, score, trace


def tune_lambda(
    data: Dataset, cfg: TuneConfig, ident: IdentConfig
) -> TuneResult:
    """K-fold search for the exponent triple.

    Each fold identifies its own model on the fold's training share and
    descends the validation score from the initial exponents; the fold
    optima are averaged componentwise.
    """
    folds = kfold_split(data, cfg.n_folds, cfg.seed)
    per_fold_lambdas: list[TemperingParams] = []
    per_fold_scores: list[tuple[float, float]] = []
    traces: list[tuple[tuple[TemperingParams, float], ...]] = []
    for train, val in folds:
        model = identify(train, ident)
        lam, before, after, trace = _descend(model, val, cfg)
        per_fold_lambdas.append(lam)
        per_fold_scores.append((before, after))
        traces.append(tuple(trace))
    lambda_star = TemperingParams.from_array(
        np.mean([l.as_array() for l in per_fold_lambdas], axis=0)
    )
    return TuneResult(
        lambda_star=lambda_star,
        per_fold_lambdas=tuple(per_fold_lambdas),
        per_fold_val_nll=tuple(per_fold_scores),
        trace=tuple(traces),
    )


def fit_pipeline(
    data: Dataset,
    split_ratio: float,
    tune_cfg: TuneConfig,
    ident_cfg: IdentConfig,
) -> FitResult:
    """Split, tune on the training share, identify, score both filters.

    The test share is scored once with neutral exponents and once with
    the tuned triple, both against the model identified on the full
    training share.
    """
    train, test = train_test_split(data, split_ratio, tune_cfg.seed)
    tune_result = tune_lambda(train, tune_cfg, ident_cfg)
    model = identify(train, ident_cfg)
    return FitResult(
        model=model,
        lambda_star=tune_result.lambda_star,
        test_untempered=nll_score(model, TemperingParams.neutral(), test),
        test_tempered=nll_score(model, tune_result.lambda_star, test),
        tune_result=tune_result,
    )
