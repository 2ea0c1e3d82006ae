"""Command-line entry point.

One executable with subcommands for world/model generation, dataset
sampling, identification, filtering, scoring, gradients, Gaussian runs,
exponent tuning, the data-size sweep, and the score landscape.

Conventions: machine-readable results go to files (or stdout for the
small JSON reports); diagnostics and progress go to stderr.  Exit code 0
on success, 1 on usage errors, 2 on runtime failures.  Flags override
values from an optional JSON config file (``--config``), which in turn
override built-in defaults; the resolved configuration is echoed into
every output file for provenance.  Non-finite numbers are serialized as
null in JSON outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .hmm import Dataset, FiniteHmm, TemperingParams, validate_model
from .filtering import run_filter
from .nll import NllGradient, ScoreReport, fd_gradient, nll_gradient, nll_score
from .kalman import tk_run
from .tuning import IdentConfig, TuneConfig, fit_pipeline
from .gridworld import (
    ABLATION_MODES,
    GridworldSpec,
    build_gridworld,
    cost_landscape,
    export_tempered_model,
    generate_dataset,
    sweep_experiment,
)
from . import io

__all__ = ["main", "app"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

DESK_SIZES = (39, 60, 100, 150, 195, 300, 500, 1000)
DESK_SEEDS = tuple(range(5))


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_lambda(text: str) -> TemperingParams:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated values")
    try:
        return TemperingParams(*(float(p) for p in parts))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _as_lambda(value) -> TemperingParams:
    """Accept the flag type, a config-file list, or a bare string."""
    if isinstance(value, TemperingParams):
        return value
    if isinstance(value, str):
        return _parse_lambda(value)
    if isinstance(value, (list, tuple)) and len(value) == 3:
        return TemperingParams(*(float(v) for v in value))
    raise _UsageError(f"cannot interpret {value!r} as an exponent triple")


def _parse_int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v != ""]


def _parse_grid(text: str) -> np.ndarray:
    """lo:hi:steps, log-spaced (exponents live on a ratio scale)."""
    try:
        lo_s, hi_s, steps_s = str(text).split(":")
        lo, hi, steps = float(lo_s), float(hi_s), int(steps_s)
    except ValueError as exc:
        raise _UsageError(f"bad grid {text!r}, expected lo:hi:steps") from exc
    if lo <= 0 or hi <= lo or steps < 2:
        raise _UsageError("grid needs 0 < lo < hi and at least 2 steps")
    return np.geomspace(lo, hi, steps)


def _resolved_config(args: argparse.Namespace) -> dict:
    out = {}
    for key, value in vars(args).items():
        if key in ("func", "config", "parser"):
            continue
        if isinstance(value, TemperingParams):
            value = [value.lambda_L, value.lambda_P, value.lambda_B]
        elif isinstance(value, Path):
            value = str(value)
        out[key] = value
    return out


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise _UsageError(f"--{name.replace('_', '-')} is required")


def _finite_or_none(value: float):
    return float(value) if np.isfinite(value) else None


def _score_payload(report: ScoreReport) -> dict:
    return {
        "mean_nll": _finite_or_none(report.mean_nll),
        "per_step_nll": [_finite_or_none(v) for v in report.per_step_nll],
        "n_samples": report.n_samples,
        "zero_mass_events": [list(e) for e in report.zero_mass_events],
    }


def _gradient_payload(grad: NllGradient) -> dict:
    return {
        "d_lambda_L": grad.d_lambda_L,
        "d_lambda_P": grad.d_lambda_P,
        "d_lambda_B": grad.d_lambda_B,
    }


def _lambda_payload(lam: TemperingParams) -> list[float]:
    return [lam.lambda_L, lam.lambda_P, lam.lambda_B]


def _emit_json(payload: dict, out: str | None) -> None:
    if out:
        io.write_json(out, payload)
    else:
        json.dump(payload, sys.stdout, indent=2)
        sys.stdout.write("\n")


def _world_spec(args) -> GridworldSpec:
    return GridworldSpec(
        n_x=args.n_x,
        x_home=args.x_home,
        obs_std=args.obs_std,
        horizon=args.horizon,
        n_outputs=args.n_outputs,
    )


def _add_world_flags(sub) -> None:
    sub.add_argument("--n-x", type=int, default=39, help="number of cells")
    sub.add_argument("--x-home", type=int, default=20, help="absorbing cell (1-based)")
    sub.add_argument("--obs-std", type=float, default=None,
                     help="sensor noise std (default n_x/8)")
    sub.add_argument("--horizon", type=int, default=40, help="steps per trajectory")
    sub.add_argument("--n-outputs", type=int, default=None,
                     help="output alphabet size (default n_x)")


def _alphabet(args, data: Dataset) -> tuple[int, int]:
    n_states = args.n_states
    n_outputs = args.n_outputs
    if n_states is None:
        n_states = 1 + max(int(t.states.max()) for t in data.trajectories)
    if n_outputs is None:
        n_outputs = 1 + max(int(t.observations.max()) for t in data.trajectories)
    return n_states, n_outputs


# --- subcommands ---


def _cmd_gen_world(args) -> int:
    _require(args, "out")
    m = build_gridworld(_world_spec(args))
    io.write_model(args.out, m, extra={"_config": _resolved_config(args)})
    return EXIT_OK


def _cmd_gen_data(args) -> int:
    _require(args, "out", "n")
    data = generate_dataset(_world_spec(args), args.n, args.seed)
    io.write_dataset(args.out, data)
    return EXIT_OK


def _cmd_validate(args) -> int:
    _require(args, "model")
    payload = io.read_json(args.model)
    m = FiniteHmm(p0=payload["p0"], trans=payload["trans"], emit=payload["emit"])
    report = validate_model(m)
    if report:
        print("ok")
        return EXIT_OK
    for problem in report.problems:
        print(problem, file=sys.stderr)
    return EXIT_RUNTIME


def _cmd_identify(args) -> int:
    _require(args, "data", "out")
    data = io.read_dataset(args.data)
    n_states, n_outputs = _alphabet(args, data)
    from .tuning import identify

    m = identify(
        data,
        IdentConfig(
            n_states=n_states, n_outputs=n_outputs, pseudocount=args.pseudocount
        ),
    )
    io.write_model(args.out, m, extra={"_config": _resolved_config(args)})
    return EXIT_OK


def _cmd_filter(args) -> int:
    _require(args, "model", "data", "out")
    m = io.read_model(args.model)
    lam = _as_lambda(args.lam)
    _, records = io.read_jsonl(args.data)
    out_records = []
    for i, record in enumerate(records):
        if "observations" not in record:
            raise ValueError(f"record {i} in {args.data} has no observations")
        y = record["observations"]
        result = run_filter(m, lam, y, allow_collapse=True)
        entry: dict = {
            "trajectory": i,
            "beliefs": [b.tolist() for b in result.beliefs],
            "collapsed_at": result.collapsed_at,
        }
        states = record.get("states")
        if states is not None:
            nll = []
            for k, belief in enumerate(result.beliefs):
                mass = belief[int(states[k])]
                nll.append(-float(np.log(mass)) if mass > 0 else None)
            entry["nll"] = nll
        out_records.append(entry)
    io.write_jsonl(args.out, out_records, meta=_resolved_config(args))
    return EXIT_OK


def _cmd_kalman(args) -> int:
    _require(args, "system", "data", "out")
    system = io.read_system(args.system)
    lam = _as_lambda(args.lam)
    _, records = io.read_jsonl(args.data)
    out_records = []
    for i, record in enumerate(records):
        if "observations" not in record:
            raise ValueError(f"record {i} in {args.data} has no observations")
        beliefs = tk_run(system, lam, record["observations"])
        out_records.append(
            {
                "trajectory": i,
                "means": [b.mean.tolist() for b in beliefs],
                "covs": [b.cov.tolist() for b in beliefs],
            }
        )
    io.write_jsonl(args.out, out_records, meta=_resolved_config(args))
    return EXIT_OK


def _cmd_eval(args) -> int:
    _require(args, "model", "data")
    report = nll_score(
        io.read_model(args.model), _as_lambda(args.lam), io.read_dataset(args.data)
    )
    payload = _score_payload(report)
    payload["config"] = _resolved_config(args)
    _emit_json(payload, args.out)
    return EXIT_OK


def _cmd_grad(args) -> int:
    _require(args, "model", "data")
    m = io.read_model(args.model)
    lam = _as_lambda(args.lam)
    data = io.read_dataset(args.data)
    payload = _gradient_payload(nll_gradient(m, lam, data))
    if args.fd:
        payload["fd"] = _gradient_payload(fd_gradient(m, lam, data, args.fd_step))
    payload["config"] = _resolved_config(args)
    _emit_json(payload, args.out)
    return EXIT_OK


def _cmd_tune(args) -> int:
    _require(args, "data", "out")
    data = io.read_dataset(args.data)
    n_states, n_outputs = _alphabet(args, data)
    ident_cfg = IdentConfig(
        n_states=n_states, n_outputs=n_outputs, pseudocount=args.pseudocount
    )
    pinned = {"none": (), "fix_L": ("L",), "fix_P": ("P",), "fix_B": ("B",)}[
        args.ablation
    ]
    tune_cfg = TuneConfig(
        n_folds=args.folds,
        max_iters=args.max_iters,
        seed=args.seed,
        pinned=pinned,
    )
    fit = fit_pipeline(data, args.split, tune_cfg, ident_cfg)
    model_path = Path(args.out).with_name(Path(args.out).stem + "_model.json")
    io.write_model(model_path, fit.model, extra={"_config": _resolved_config(args)})
    tr = fit.tune_result
    payload = {
        "lambda_star": _lambda_payload(fit.lambda_star),
        "per_fold_lambdas": [_lambda_payload(l) for l in tr.per_fold_lambdas],
        "per_fold_val_nll": [
            [_finite_or_none(a), _finite_or_none(b)] for a, b in tr.per_fold_val_nll
        ],
        "trace": [
            [[_lambda_payload(l), _finite_or_none(s)] for l, s in fold_trace]
            for fold_trace in tr.trace
        ],
        "test_untempered": _score_payload(fit.test_untempered),
        "test_tempered": _score_payload(fit.test_tempered),
        "model_path": str(model_path),
        "config": _resolved_config(args),
    }
    io.write_json(args.out, payload)
    return EXIT_OK


def _cmd_export(args) -> int:
    _require(args, "model", "out")
    m = io.read_model(args.model)
    export_tempered_model(
        m, _as_lambda(args.lam), path=args.out,
        extra={"config": _resolved_config(args)},
    )
    return EXIT_OK


def _sweep_rows(result) -> list[list]:
    rows = []
    for r in result.rows:
        lam = r.lambda_star
        rows.append(
            [
                r.n,
                r.seed,
                r.nll_untempered,
                r.nll_tempered,
                "" if lam is None else lam.lambda_L,
                "" if lam is None else lam.lambda_P,
                "" if lam is None else lam.lambda_B,
                r.ablation_mode,
                r.error,
            ]
        )
    return rows


def _cmd_sweep(args) -> int:
    _require(args, "out")
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    if args.full_scale:
        sizes = np.unique(np.round(np.linspace(39, 1000, 100)).astype(int)).tolist()
        seeds = list(range(20))
    else:
        sizes = _parse_int_list(args.sizes)
        seeds = _parse_int_list(args.seeds)
    result = sweep_experiment(
        sizes,
        seeds,
        spec=_world_spec(args),
        ablation_mode=args.ablation,
        split_ratio=args.split,
        tune_cfg=TuneConfig(n_folds=args.folds, max_iters=args.max_iters),
        pseudocount=args.pseudocount,
        n_jobs=args.jobs,
    )
    header = [
        "n",
        "seed",
        "nll_untempered",
        "nll_tempered",
        "lambda_L",
        "lambda_P",
        "lambda_B",
        "ablation_mode",
        "error",
    ]
    io.write_csv(args.out, header, _sweep_rows(result), result.config)
    if not args.no_plot:
        from .plots import plot_sweep

        figure = Path(args.out).with_suffix(".png")
        plot_sweep(result, figure)
        print(f"figure written to {figure}", file=sys.stderr)
    return EXIT_OK


def _cmd_landscape(args) -> int:
    _require(args, "model", "data", "out")
    model = io.read_model(args.model)
    data = io.read_dataset(args.data)
    axes = args.axes.upper()
    if sorted(axes) not in (["B", "P"], ["L", "P"], ["B", "L"]):
        raise _UsageError("--axes must be one of PB, LP, LB")
    fixed_name = ({"L", "P", "B"} - set(axes)).pop()
    values = _parse_grid(args.grid)
    result = cost_landscape(
        data,
        model,
        grid={axes[0]: values, axes[1]: values},
        fixed={fixed_name: args.fixed},
    )
    rows = []
    for i, a in enumerate(result.values[0]):
        for j, b in enumerate(result.values[1]):
            rows.append([a, b, _finite_or_none(result.nll[i, j])])
    io.write_csv(
        args.out,
        [f"lambda_{axes[0]}", f"lambda_{axes[1]}", "nll"],
        rows,
        _resolved_config(args),
    )
    if not args.no_plot:
        from .plots import plot_landscape

        figure = Path(args.out).with_suffix(".png")
        plot_landscape(result, figure)
        print(f"figure written to {figure}", file=sys.stderr)
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="temperfilt",
        description="Tempered Bayes filtering for finite HMMs and "
        "linear-Gaussian systems.",
    )
    parser.add_argument("--config", default=None, help="JSON file with flag defaults")
    subs = parser.add_subparsers(dest="subcommand", parser_class=_Parser)

    def sub(name, func, **kwargs):
        s = subs.add_parser(name, **kwargs)
        s.add_argument("--config", default=None, help=argparse.SUPPRESS)
        s.set_defaults(func=func)
        return s

    s = sub("gen-world", _cmd_gen_world, help="write the benchmark world model")
    _add_world_flags(s)
    s.add_argument("--out", help="model JSON path")

    s = sub("gen-data", _cmd_gen_data, help="sample trajectories from the world")
    _add_world_flags(s)
    s.add_argument("--n", type=int, help="number of trajectories")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="dataset JSONL path")

    s = sub("validate", _cmd_validate, help="check a model file's invariants")
    s.add_argument("--model")

    s = sub("identify", _cmd_identify, help="count-based model from labeled data")
    s.add_argument("--data")
    s.add_argument("--n-states", type=int, default=None)
    s.add_argument("--n-outputs", type=int, default=None)
    s.add_argument("--pseudocount", type=float, default=1.0)
    s.add_argument("--out", help="model JSON path")

    s = sub("filter", _cmd_filter, help="run the tempered filter over sequences")
    s.add_argument("--model")
    s.add_argument("--data", help="JSONL with observations (states optional)")
    s.add_argument("--lambda", dest="lam", type=_parse_lambda,
                   default=TemperingParams.neutral())
    s.add_argument("--out", help="JSONL of per-step beliefs")

    s = sub("kalman", _cmd_kalman, help="run the Gaussian filter over sequences")
    s.add_argument("--system", help="JSON with A, C, covariances, init")
    s.add_argument("--data", help="JSONL with observations")
    s.add_argument("--lambda", dest="lam", type=_parse_lambda,
                   default=TemperingParams.neutral())
    s.add_argument("--out", help="JSONL of per-step means and covariances")

    s = sub("eval", _cmd_eval, help="score a filter on labeled data")
    s.add_argument("--model")
    s.add_argument("--data")
    s.add_argument("--lambda", dest="lam", type=_parse_lambda,
                   default=TemperingParams.neutral())
    s.add_argument("--out", default=None, help="JSON path (default stdout)")

    s = sub("grad", _cmd_grad, help="score gradient in the exponents")
    s.add_argument("--model")
    s.add_argument("--data")
    s.add_argument("--lambda", dest="lam", type=_parse_lambda,
                   default=TemperingParams.neutral())
    s.add_argument("--fd", action="store_true",
                   help="add a finite-difference cross-check")
    s.add_argument("--fd-step", type=float, default=1e-5)
    s.add_argument("--out", default=None, help="JSON path (default stdout)")

    s = sub("tune", _cmd_tune, help="cross-validated exponent search")
    s.add_argument("--data")
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--split", type=float, default=0.7)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-iters", type=int, default=200)
    s.add_argument("--ablation", choices=ABLATION_MODES, default="none")
    s.add_argument("--n-states", type=int, default=None)
    s.add_argument("--n-outputs", type=int, default=None)
    s.add_argument("--pseudocount", type=float, default=1.0)
    s.add_argument("--out", help="result JSON path")

    s = sub("export", _cmd_export, help="tempered weight tables of a model")
    s.add_argument("--model")
    s.add_argument("--lambda", dest="lam", type=_parse_lambda,
                   default=TemperingParams.neutral())
    s.add_argument("--out", help="JSON path")

    s = sub("sweep", _cmd_sweep, help="tune and score across dataset sizes")
    _add_world_flags(s)
    s.add_argument("--sizes", default=",".join(str(v) for v in DESK_SIZES))
    s.add_argument("--seeds", default=",".join(str(v) for v in DESK_SEEDS))
    s.add_argument("--full-scale", action="store_true",
                   help="100 sizes x 20 seeds (long run)")
    s.add_argument("--ablation", choices=ABLATION_MODES, default="none")
    s.add_argument("--split", type=float, default=0.7)
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--max-iters", type=int, default=200)
    s.add_argument("--pseudocount", type=float, default=1.0)
    s.add_argument("--jobs", type=int, default=None,
                   help="worker processes (default: all cores, or TEMPERFILT_JOBS)")
    s.add_argument("--no-plot", action="store_true")
    s.add_argument("--out", help="CSV path; figure lands next to it")

    s = sub("landscape", _cmd_landscape, help="score over a 2-d exponent grid")
    s.add_argument("--model")
    s.add_argument("--data")
    s.add_argument("--axes", default="PB", help="which two exponents vary: PB, LP, LB")
    s.add_argument("--grid", default="0.25:4:13", help="lo:hi:steps, log-spaced")
    s.add_argument("--fixed", type=float, default=1.0,
                   help="value for the remaining exponent")
    s.add_argument("--no-plot", action="store_true")
    s.add_argument("--out", help="CSV path; figure lands next to it")

    return parser


def _apply_config_defaults(parser: _Parser, config: dict) -> None:
    """Install config values as defaults wherever a flag with that
    destination exists, so explicit flags still win.  Subcommand parsers
    apply their own defaults into a fresh namespace, which is why the
    values must be planted per parser rather than pre-seeded once."""
    parsers = [parser]
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            parsers.extend(action.choices.values())
    for p in parsers:
        dests = {a.dest for a in p._actions}
        matched = {k: v for k, v in config.items() if k in dests}
        if matched:
            p.set_defaults(**matched)


def main(argv) -> int:
    parser = _build_parser()
    probe = _Parser(add_help=False)
    probe.add_argument("--config", default=None)
    try:
        known, _ = probe.parse_known_args(argv)
        if known.config:
            try:
                config = io.read_json(known.config)
            except (OSError, json.JSONDecodeError) as exc:
                print(f"error: cannot read config {known.config}: {exc}",
                      file=sys.stderr)
                return EXIT_RUNTIME
            _apply_config_defaults(parser, config)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def app() -> None:
    sys.exit(main(sys.argv[1:]))
