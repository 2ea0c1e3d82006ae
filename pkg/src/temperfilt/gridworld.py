"""A one-dimensional partially observable benchmark world.

An agent starts with even odds at either end of a line of cells.  Left
of the absorbing home cell the motion is noisy (it mostly drifts one
cell toward home but can overshoot, stall, or slip back); right of home
it decrements deterministically.  Sensors report the current cell
corrupted by Gaussian noise, discretized back onto the cell grid.

Cells are labeled 1..n_x in the description above; the built model uses
0-based indices throughout, so cell c is state index c - 1.

This module also hosts the experiment harness: dataset generation, the
data-size sweep with optional exponent ablations, the validation-score
landscape over a 2-d exponent grid, and the tempered-table export.
"""

from __future__ import annotations

import dataclasses
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import io
from .hmm import Dataset, FiniteHmm, TemperingParams, temper_model, sample_trajectory
from .nll import nll_score
from .tuning import IdentConfig, TuneConfig, fit_pipeline

__all__ = [
    "GridworldSpec",
    "SweepRow",
    "ExperimentResult",
    "LandscapeResult",
    "ABLATION_MODES",
    "build_gridworld",
    "generate_dataset",
    "sweep_experiment",
    "cost_landscape",
    "export_tempered_model",
]

logger = logging.getLogger(__name__)

# Move offsets and probabilities in the noisy region, before boundary
# folding: mostly one step toward home, with overshoot and slip.
STOCH_MOVES = ((3, 0.1), (2, 0.15), (1, 0.5), (0, 0.15), (-1, 0.1))

ABLATION_MODES = ("none", "fix_L", "fix_P", "fix_B")

_PINNED_BY_MODE = {
    "none": (),
    "fix_L": ("L",),
    "fix_P": ("P",),
    "fix_B": ("B",),
}


@dataclass(frozen=True)
class GridworldSpec:
    """World geometry and sensing parameters.

    ``x_home`` is the 1-based label of the absorbing cell.  ``obs_std``
    and ``n_outputs`` default to n_x / 8 and n_x when left unset.
    """

    n_x: int = 39
    x_home: int = 20
    obs_std: float | None = None
    horizon: int = 40
    n_outputs: int | None = None

    def __post_init__(self):
        if not 1 < self.x_home < self.n_x:
            raise ValueError("x_home must lie strictly inside 1..n_x")
        if self.obs_std is None:
            object.__setattr__(self, "obs_std", self.n_x / 8.0)
        if self.obs_std <= 0.0:
            raise ValueError("obs_std must be positive")
        if self.n_outputs is None:
            object.__setattr__(self, "n_outputs", self.n_x)


def build_gridworld(spec: GridworldSpec) -> FiniteHmm:
    """Construct the finite model for a world description."""
    n = spec.n_x
    home = spec.x_home - 1
    trans = np.zeros((n, n))
    trans[home, home] = 1.0
    for i in range(home + 1, n):
        trans[i, i - 1] = 1.0
    for i in range(home):
        for move, prob in STOCH_MOVES:
            j = min(max(i + move, 0), home)
            trans[i, j] += prob

    # Each sensor reading bins a Gaussian centered on the true cell onto
    # the output grid; the outer bins absorb both tails so rows sum to 1.
    edges = np.concatenate(
        [[-np.inf], np.arange(spec.n_outputs - 1) + 0.5, [np.inf]]
    )
    cdf = ndtr((edges[None, :] - np.arange(n)[:, None]) / spec.obs_std)
    emit = np.diff(cdf, axis=1)

    p0 = np.zeros(n)
    p0[0] = 0.5
    p0[n - 1] = 0.5
    return FiniteHmm(p0=p0, trans=trans, emit=emit)


def generate_dataset(spec: GridworldSpec, N: int, seed: int) -> Dataset:
    """Sample N trajectories; per-trajectory seeds derive from ``seed``."""
    m = build_gridworld(spec)
    trajectories = [
        sample_trajectory(m, spec.horizon, (seed * 1000003 + i) % 2**63)
        for i in range(N)
    ]
    return Dataset(
        tuple(trajectories),
        provenance={"world": dataclasses.asdict(spec), "n": N, "seed": seed},
    )


@dataclass(frozen=True)
class SweepRow:
    """One (dataset size, seed) cell of a sweep."""

    n: int
    seed: int
    nll_untempered: float
    nll_tempered: float
    lambda_star: TemperingParams | None
    ablation_mode: str
    error: str = ""


@dataclass(frozen=True)
class ExperimentResult:
    rows: tuple[SweepRow, ...]
    config: dict


def _resolve_jobs(n_jobs: int | None) -> int:
    if n_jobs is not None:
        return max(1, n_jobs)
    env = os.environ.get("TEMPERFILT_JOBS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _sweep_cell(args) -> SweepRow:
    spec, n, seed, ablation_mode, split_ratio, tune_cfg, ident_cfg = args
    try:
        data = generate_dataset(spec, n, seed)
        cfg = dataclasses.replace(
            tune_cfg, seed=seed, pinned=_PINNED_BY_MODE[ablation_mode]
        )
        fit = fit_pipeline(data, split_ratio, cfg, ident_cfg)
        return SweepRow(
            n=n,
            seed=seed,
            nll_untempered=fit.test_untempered.mean_nll,
            nll_tempered=fit.test_tempered.mean_nll,
            lambda_star=fit.lambda_star,
            ablation_mode=ablation_mode,
        )
    except Exception as exc:  # keep the sweep alive; the row records why
        return SweepRow(
            n=n,
            seed=seed,
            nll_untempered=float("nan"),
            nll_tempered=float("nan"),
            lambda_star=None,
            ablation_mode=ablation_mode,
            error=f"{type(exc).__name__}: {exc}",
        )


def sweep_experiment(
    sizes,
    seeds,
    spec: GridworldSpec | None = None,
    ablation_mode: str = "none",
    split_ratio: float = 0.7,
    tune_cfg: TuneConfig | None = None,
    pseudocount: float = 1.0,
    n_jobs: int | None = None,
) -> ExperimentResult:
    """Tune and score the filter across dataset sizes and seeds.

    Every (size, seed) cell is independent: generate data, run the full
    pipeline, record both test scores and the tuned exponents.  Cells
    run on a worker pool; failures become error rows instead of aborting
    the sweep.  Rows come back sorted by (size, seed).
    """
    if ablation_mode not in ABLATION_MODES:
        raise ValueError(f"ablation_mode must be one of {ABLATION_MODES}")
    spec = spec or GridworldSpec()
    tune_cfg = tune_cfg or TuneConfig()
    ident_cfg = IdentConfig(
        n_states=spec.n_x, n_outputs=spec.n_outputs, pseudocount=pseudocount
    )
    jobs = [
        (spec, int(n), int(seed), ablation_mode, split_ratio, tune_cfg, ident_cfg)
        for n in sizes
        for seed in seeds
    ]
    n_workers = min(_resolve_jobs(n_jobs), len(jobs))
    rows: list[SweepRow] = []
    if n_workers <= 1:
        for job in jobs:
            rows.append(_sweep_cell(job))
            _log_row(rows[-1])
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for row in pool.map(_sweep_cell, jobs):
                rows.append(row)
                _log_row(row)
    rows.sort(key=lambda r: (r.n, r.seed))
    config = {
        "sizes": [int(n) for n in sizes],
        "seeds": [int(s) for s in seeds],
        "world": dataclasses.asdict(spec),
        "ablation_mode": ablation_mode,
        "split_ratio": split_ratio,
        "tune": dataclasses.asdict(tune_cfg),
        "pseudocount": pseudocount,
    }
    return ExperimentResult(rows=tuple(rows), config=config)


def _log_row(row: SweepRow) -> None:
    if row.error:
        logger.warning("cell n=%d seed=%d failed: %s", row.n, row.seed, row.error)
    else:
        logger.info(
            "cell n=%d seed=%d untempered=%.4f tempered=%.4f",
            row.n,
            row.seed,
            row.nll_untempered,
            row.nll_tempered,
        )


@dataclass(frozen=True)
class LandscapeResult:
    """Validation score over a 2-d exponent grid, third exponent fixed."""

    axes: tuple[str, str]
    values: tuple[np.ndarray, np.ndarray]
    nll: np.ndarray
    fixed: tuple[str, float]


def cost_landscape(
    data: Dataset,
    model: FiniteHmm,
    grid: dict,
    fixed: dict,
) -> LandscapeResult:
    """Score the filter over a rectangular grid of exponent pairs.

    ``grid`` maps exactly two of "L", "P", "B" to value arrays; ``fixed``
    maps the remaining one to its pinned value (typically its tuned
    optimum).  Cells where the score is infinite are recorded as such.
    """
    names = tuple(grid)
    if len(names) != 2 or len(fixed) != 1 or set(names) | set(fixed) != {
        "L",
        "P",
        "B",
    }:
        raise ValueError(
            "grid must name two exponents and fixed the remaining one"
        )
    (fixed_name, fixed_value), = fixed.items()
    a_vals = np.asarray(grid[names[0]], dtype=float)
    b_vals = np.asarray(grid[names[1]], dtype=float)
    nll = np.empty((len(a_vals), len(b_vals)))
    for i, a in enumerate(a_vals):
        for j, b in enumerate(b_vals):
            triple = {names[0]: a, names[1]: b, fixed_name: fixed_value}
            lam = TemperingParams(triple["L"], triple["P"], triple["B"])
            nll[i, j] = nll_score(model, lam, data).mean_nll
    return LandscapeResult(
        axes=names,
        values=(a_vals, b_vals),
        nll=nll,
        fixed=(fixed_name, float(fixed_value)),
    )


def export_tempered_model(
    m: FiniteHmm, lam: TemperingParams, path=None, extra: dict | None = None
) -> dict:
    """Tempered weight tables plus a row-normalized view for display.

    The raw tables are entrywise powers and need not sum to 1 per row;
    the display tables renormalize each row (rows that sum to zero stay
    zero) and are flagged so readers do not mistake them for the filter's
    actual weights.  When ``path`` is given the payload is also written
    there as JSON.
    """
    tm = temper_model(m, lam)

    def display(table: np.ndarray) -> np.ndarray:
        table = np.atleast_2d(table)
        sums = table.sum(axis=1, keepdims=True)
        return np.divide(table, sums, out=np.zeros_like(table), where=sums > 0)

    payload = {
        "lambda": {
            "L": lam.lambda_L,
            "P": lam.lambda_P,
            "B": lam.lambda_B,
        },
        "raw_weights": {
            "p0": tm.p0_t.tolist(),
            "trans": tm.trans_t.tolist(),
            "emit": tm.emit_t.tolist(),
        },
        "display_normalized": True,
        "display": {
            "p0": display(tm.p0_t)[0].tolist(),
            "trans": display(tm.trans_t).tolist(),
            "emit": display(tm.emit_t).tolist(),
        },
    }
    if extra:
        payload.update(extra)
    if path is not None:
        io.write_json(path, payload)
    return payload
