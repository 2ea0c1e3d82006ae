"""Core types for finite hidden Markov models and tempering parameters.

A finite HMM is stored row-stochastically: ``trans[i, j]`` is the
probability of moving from state ``i`` to state ``j``, and ``emit[i, m]``
the probability of emitting output symbol ``m`` while in state ``i``.
States and outputs are 0-based indices.

Tempering raises probability tables to componentwise powers.  The
convention ``0**0 == 1`` is used throughout (numpy's native behavior),
so zero tempering exponents produce all-ones weight tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FiniteHmm",
    "TemperingParams",
    "TemperedModel",
    "Trajectory",
    "Dataset",
    "ValidationReport",
    "validate_model",
    "sample_trajectory",
    "temper_model",
    "temper_distribution",
    "log_power",
    "logsumexp",
]

# Row sums of stochastic tables must match 1 to this tolerance.
STOCHASTIC_TOL = 1e-12


def logsumexp(a: np.ndarray, axis: int | None = None):
    """log(sum(exp(a))) with the max subtracted first.

    Hand-rolled rather than delegated: the filter recursions call this in
    tight per-step loops where wrapper overhead dominates.  All-(-inf)
    input yields -inf with no warning, matching the convention that a
    zero total weight is representable, not an error.
    """
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True)) + amax
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True)
class FiniteHmm:
    """A finite-alphabet hidden Markov model.

    Attributes
    ----------
    p0 : ndarray, shape (n_states,)
        Initial state distribution.
    trans : ndarray, shape (n_states, n_states)
        Row-stochastic transition table, ``trans[i, j] = P(x'=j | x=i)``.
    emit : ndarray, shape (n_states, n_outputs)
        Row-stochastic emission table, ``emit[i, m] = P(y=m | x=i)``.
    """

    p0: np.ndarray
    trans: np.ndarray
    emit: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=float))
        object.__setattr__(self, "emit", np.asarray(self.emit, dtype=float))

    @property
    def n_states(self) -> int:
        return self.p0.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.emit.shape[1]


@dataclass(frozen=True)
class TemperingParams:
    """The triple of nonnegative tempering exponents.

    ``lambda_L`` tempers the likelihood, ``lambda_P`` the full posterior,
    and ``lambda_B`` the marginalized belief.  The neutral point
    ``(1, 1, 1)`` leaves the filter untouched.
    """

    lambda_L: float = 1.0
    lambda_P: float = 1.0
    lambda_B: float = 1.0

    def __post_init__(self):
        for name in ("lambda_L", "lambda_P", "lambda_B"):
            v = getattr(self, name)
            if not (v >= 0.0):
                raise ValueError(f"{name} must be nonnegative, got {v}")

    @classmethod
    def neutral(cls) -> "TemperingParams":
        return cls(1.0, 1.0, 1.0)

    @classmethod
    def from_array(cls, a) -> "TemperingParams":
        L, P, B = np.asarray(a, dtype=float)
        return cls(float(L), float(P), float(B))

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda_L, self.lambda_P, self.lambda_B])

    def is_neutral(self) -> bool:
        return self.lambda_L == 1.0 and self.lambda_P == 1.0 and self.lambda_B == 1.0


@dataclass(frozen=True)
class TemperedModel:
    """Precomputed tempered weight tables for a model and a parameter triple.

    The linear-domain tables are entrywise powers of the base model:
    ``trans_t = trans**lambda_P``, ``emit_t = emit**(lambda_L*lambda_P*lambda_B)``,
    ``p0_t = p0**lambda_P``.  Rows are weight vectors, not distributions,
    and need not sum to one.

    The log-domain tables are what the numerically stable filter consumes.
    The belief exponent ``lambda_B`` is deliberately absent from
    ``log_emit_lp``: the recursive filter propagates a belief-exponent-free
    forward weight and applies ``lambda_B`` only when a belief is read out.
    """

    model: FiniteHmm
    lam: TemperingParams
    trans_t: np.ndarray
    emit_t: np.ndarray
    p0_t: np.ndarray
    # Log-domain tables for the stable recursion (lambda_B-free).
    log_trans_p: np.ndarray = field(repr=False)
    log_emit_lp: np.ndarray = field(repr=False)
    log_p0_p: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class Trajectory:
    """One sampled state/output path of length ``horizon + 1``."""

    states: np.ndarray
    observations: np.ndarray
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=np.int64))
        object.__setattr__(
            self, "observations", np.asarray(self.observations, dtype=np.int64)
        )
        if self.states.shape != self.observations.shape:
            raise ValueError("states and observations must have equal length")

    @property
    def horizon(self) -> int:
        return len(self.states) - 1


@dataclass(frozen=True)
class Dataset:
    """A collection of trajectories sharing one horizon."""

    trajectories: tuple[Trajectory, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        horizons = {t.horizon for t in self.trajectories}
        if len(horizons) > 1:
            raise ValueError(f"trajectories have mixed horizons: {sorted(horizons)}")

    @property
    def horizon(self) -> int:
        return self.trajectories[0].horizon

    def __len__(self) -> int:
        return len(self.trajectories)

    def subset(self, indices) -> "Dataset":
        return Dataset(
            tuple(self.trajectories[i] for i in indices), dict(self.provenance)
        )

    def states_matrix(self) -> np.ndarray:
        """All state paths stacked into shape (n_traj, horizon + 1)."""
        return np.stack([t.states for t in self.trajectories])

    def observations_matrix(self) -> np.ndarray:
        """All output paths stacked into shape (n_traj, horizon + 1)."""
        return np.stack([t.observations for t in self.trajectories])


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of model validation; ``ok`` with an empty problem list on success."""

    ok: bool
    problems: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.ok


def validate_model(m: FiniteHmm) -> ValidationReport:
    """Check all stochasticity invariants of a model, never raising.

    Every violated row or entry is named in the returned report.
    """
    problems: list[str] = []
    if m.n_states < 1:
        problems.append("n_states must be >= 1")
    if m.n_outputs < 1:
        problems.append("n_outputs must be >= 1")
    if m.p0.ndim != 1:
        problems.append(f"p0 must be a vector, got ndim={m.p0.ndim}")
    if m.trans.shape != (m.n_states, m.n_states):
        problems.append(f"trans has shape {m.trans.shape}, expected square over states")
    if m.emit.shape[0] != m.n_states:
        problems.append(f"emit has {m.emit.shape[0]} rows, expected {m.n_states}")

    def check_rows(name: str, table: np.ndarray) -> None:
        if np.any((table < 0) | (table > 1)):
            bad = np.argwhere((table < 0) | (table > 1))
            problems.append(f"{name} entries outside [0, 1] at {bad[:5].tolist()}")
        sums = table.sum(axis=-1)
        off = np.abs(sums - 1.0) > STOCHASTIC_TOL
        if table.ndim == 1:
            if off:
                problems.append(f"{name} sums to {sums:.17g}, expected 1")
        else:
            for i in np.flatnonzero(off):
                problems.append(f"{name} row {i} sums to {sums[i]:.17g}, expected 1")

    if not problems:
        check_rows("p0", m.p0)
        check_rows("trans", m.trans)
        check_rows("emit", m.emit)
    return ValidationReport(ok=not problems, problems=tuple(problems))


def sample_trajectory(m: FiniteHmm, horizon: int, seed: int) -> Trajectory:
    """Draw one state/output path of length ``horizon + 1``, deterministic per seed."""
    rng = np.random.default_rng(seed)
    states = np.empty(horizon + 1, dtype=np.int64)
    obs = np.empty(horizon + 1, dtype=np.int64)
    x = rng.choice(m.n_states, p=m.p0)
    for k in range(horizon + 1):
        states[k] = x
        obs[k] = rng.choice(m.n_outputs, p=m.emit[x])
        if k < horizon:
            x = rng.choice(m.n_states, p=m.trans[x])
    return Trajectory(states=states, observations=obs, seed=seed)


def log_power(table: np.ndarray, exponent: float) -> np.ndarray:
    """``exponent * log(table)`` with the weight-table conventions.

    A zero exponent yields an all-zero log table (``0**0 == 1``); zero
    probabilities map to ``-inf`` for positive exponents.
    """
    table = np.asarray(table, dtype=float)
    if exponent == 0.0:
        return np.zeros_like(table)
    with np.errstate(divide="ignore"):
        return exponent * np.log(table)


def temper_model(m: FiniteHmm, lam: TemperingParams) -> TemperedModel:
    """Raise the model tables to their tempering exponents.

    Transition and initial tables carry the posterior exponent; the
    emission table carries the combined likelihood/posterior/belief
    exponent.  The attached log tables keep the belief exponent out so the
    recursive filter can defer it to read-out.
    """
    lp = lam.lambda_L * lam.lambda_P
    lpb = lp * lam.lambda_B
    return TemperedModel(
        model=m,
        lam=lam,
        trans_t=np.power(m.trans, lam.lambda_P),
        emit_t=np.power(m.emit, lpb),
        p0_t=np.power(m.p0, lam.lambda_P),
        log_trans_p=log_power(m.trans, lam.lambda_P),
        log_emit_lp=log_power(m.emit, lp),
        log_p0_p=log_power(m.p0, lam.lambda_P),
    )


def temper_distribution(p, alpha: float) -> np.ndarray:
    """Renormalized entrywise power ``p**alpha / sum(p**alpha)``.

    Computed in the log domain so extreme exponents concentrate cleanly on
    the argmax instead of underflowing.  ``alpha == 0`` returns the uniform
    distribution over the strictly positive support of ``p``.  Unnormalized
    nonnegative input is accepted; the output is always normalized.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError("distribution entries must be nonnegative")
    support = p > 0
    if not support.any():
        raise ValueError("empty distribution")
    if alpha == 0.0:
        out = np.zeros_like(p)
        out[support] = 1.0 / support.sum()
        return out
    with np.errstate(divide="ignore"):
        logp = alpha * np.log(p)
    logp -= logp.max()
    w = np.exp(logp)
    return w / w.sum()
