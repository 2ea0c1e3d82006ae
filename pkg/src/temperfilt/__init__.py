"""Tempered Bayes filtering for finite HMMs and linear-Gaussian systems.

The package generalizes recursive state estimation with three exponents:
one on the likelihood, one on the full posterior, and one on the
marginalized belief.  The neutral triple (1, 1, 1) is the classic Bayes
filter; other settings trade posterior sharpness against model mismatch
and can be tuned by cross-validated gradient descent on held-out
negative log likelihood.
"""

from .hmm import (
    Dataset,
    FiniteHmm,
    TemperedModel,
    TemperingParams,
    Trajectory,
    ValidationReport,
    log_power,
    logsumexp,
    sample_trajectory,
    temper_distribution,
    temper_model,
    validate_model,
)
from .filtering import (
    FilterCollapse,
    FilterOutput,
    LogForwardState,
    belief_readout,
    brute_force_belief,
    elbo_objective,
    filter_init,
    filter_step,
    map_filter,
    map_limit_check,
    run_filter,
    run_filter_naive,
    tempered_trajectory_posterior,
)
from .nll import (
    GradientAccumulators,
    NllGradient,
    ScoreReport,
    exact_nll_gradient,
    exact_nll_score,
    fd_gradient,
    fd_gradient_exact,
    gradient_init,
    gradient_step,
    nll_gradient,
    nll_score,
    s_components,
)
from .kalman import GaussianBelief, LinearGaussianModel, tk_init, tk_run, tk_step
from .tuning import (
    FitResult,
    IdentConfig,
    TuneConfig,
    TuneResult,
    fit_pipeline,
    identify,
    kfold_split,
    train_test_split,
    tune_lambda,
)
from .gridworld import (
    ABLATION_MODES,
    ExperimentResult,
    GridworldSpec,
    LandscapeResult,
    SweepRow,
    build_gridworld,
    cost_landscape,
    export_tempered_model,
    generate_dataset,
    sweep_experiment,
)
from .io import (
    config_hash,
    read_csv_rows,
    read_dataset,
    read_json,
    read_jsonl,
    read_model,
    read_system,
    write_csv,
    write_dataset,
    write_json,
    write_jsonl,
    write_model,
    write_system,
)

__version__ = "0.1.0"
