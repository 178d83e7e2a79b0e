"""Command-line entry point: ``r4 {fit,path,simulate,breakdown}``.

Any option can also come from a JSON object passed with ``--config``; keys
are the option names with dashes replaced by underscores, and flags given on
the command line win. Errors print one line ``error: <reason>: <detail>`` to
stderr and exit with 2 (bad input), 3 (numerical failure) or 4 (I/O).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import InvalidInput, R4Error
from .io import (
    build_var_design,
    ensure_dir,
    load_csv_matrix,
    trimmed_mse,
    write_fit,
    write_json,
    write_matrix,
    write_results,
)
from .rrr import RegressionData, rrr_fit
from .simbench import METHODS, SimConfig, breakdown_sweep, generate_instance, run_study
from .solver import (
    Constrained,
    PenalizedElementwise,
    PenalizedRowwise,
    R4Problem,
    SolverOptions,
    multistart_fit,
)
from .thresholding import ThresholdRule
from .tuning import GridSpec, fit_path, pic

log = logging.getLogger("r4")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidInput(message)


def _parse_ranks(text) -> list:
    """``"3"``, ``"1..5"`` or ``"1,2,4"``."""
    if isinstance(text, (list, tuple)):
        return [int(r) for r in text]
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InvalidInput(f"cannot parse ranks {text!r}; use '3', '1..5' or '1,2,4'") from None


def _parse_floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise InvalidInput(f"cannot parse number list {text!r}") from None


def _add_data_args(p):
    p.add_argument("--x", help="design matrix CSV (n x p)")
    p.add_argument("--y", help="response matrix CSV (n x m)")
    p.add_argument("--gamma", help="optional SPD weighting matrix CSV (m x m)")
    p.add_argument("--series", help="time series CSV (T x m); regress each row on the one --lag earlier")
    p.add_argument("--lag", type=int, default=1)
    p.add_argument("--split", type=int, default=None,
                   help="with --series: fit on the first SPLIT regression pairs, forecast the rest")


def _add_solver_args(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--multistart", type=int, default=0, help="subsample-seeded restarts")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-8)


def _add_common(p):
    p.add_argument("--config", help="JSON file with option values; flags override it")
    p.add_argument("--out", required=False, help="output directory")
    p.add_argument("--no-timestamp", action="store_true", help="omit the creation time from JSON output")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="r4", description="Robust reduced-rank regression.")
    parser.add_argument("--version", action="version", version=f"r4 {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit at a fixed rank and threshold / outlier budget")
    _add_data_args(p)
    p.add_argument("--rank", type=int)
    p.add_argument("--lambda", dest="lam", type=float, help="threshold level (penalized form)")
    p.add_argument("--rule", default="hard", help="soft, hard or hard_ridge")
    p.add_argument("--rho-count", type=int, help="maximum number of outlier rows (constrained form)")
    p.add_argument("--eta", type=float, default=0.0, help="ridge shrinkage of flagged rows")
    p.add_argument("--elementwise", action="store_true", help="penalize entries instead of rows")
    _add_solver_args(p)
    _add_common(p)

    p = sub.add_parser("path", help="fit a (threshold, rank) grid and select by PIC")
    _add_data_args(p)
    p.add_argument("--ranks", default=None, help="'1..R', '1,2,3' or a single rank (default all)")
    p.add_argument("--grid", type=int, default=100, help="number of grid points per rank")
    p.add_argument("--vmin", type=float, default=0.0, help="smallest outlier fraction on the grid")
    p.add_argument("--vmax", type=float, default=0.4, help="largest outlier fraction on the grid")
    p.add_argument("--rule", default="hard")
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--constrained", action="store_true", help="grid over outlier counts instead of lambda")
    _add_solver_args(p)
    _add_common(p)

    p = sub.add_parser("simulate", help="run the synthetic benchmark")
    p.add_argument("--model", default="I", choices=["I", "II", "III"])
    p.add_argument("--contamination", type=float, default=0.05)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--snr", type=float, default=0.75)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--vmax", type=float, default=0.4)
    p.add_argument("--no-leverage", action="store_true")
    p.add_argument("--methods", default="R4,RRR,RRS,RRO", help=f"comma list from {','.join(METHODS)}")
    p.add_argument("--comparator-tuning", default="pic", choices=["pic", "cv"],
                   help="how RRR and RRS pick rank / ridge level")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--multistart", type=int, default=10)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-8)
    _add_common(p)

    p = sub.add_parser("breakdown", help="single-entry contamination sweep, RRR vs R4")
    _add_data_args(p)
    p.add_argument("--model", default="I", choices=["I", "II", "III"],
                   help="generate clean data from this model when --x/--y are absent")
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="threshold level (default: 3 x median RRR residual row norm)")
    p.add_argument("--rule", default="hard")
    p.add_argument("--magnitudes", default="1e2,1e4,1e6")
    p.add_argument("--row", type=int, default=None)
    p.add_argument("--col", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--multistart", type=int, default=10)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-8)
    _add_common(p)
    return parser


def _apply_config(parser, argv):
    """Parse, then re-parse with values from ``--config`` as defaults."""
    args = parser.parse_args(argv)
    if args.command is None:
        raise InvalidInput("missing command; choose fit, path, simulate or breakdown")
    if not args.config:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise InvalidInput(f"cannot read config {args.config}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"config {args.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InvalidInput("config must be a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    if "lambda" in cfg:
        cfg["lam"] = cfg.pop("lambda")
    cfg.pop("command", None)
    known = set(vars(args))
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise InvalidInput(f"unknown config keys {unknown}")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def _opts(args) -> SolverOptions:
    return SolverOptions(max_iterations=args.max_iter, tolerance=args.tol,
                         multistart=args.multistart, seed=args.seed)


def _load_data(args):
    """Returns ``(train_data, holdout)`` where holdout is ``(X, Y)`` or None."""
    if args.series:
        if args.x or args.y:
            raise InvalidInput("use either --series or --x/--y, not both")
        full = build_var_design(load_csv_matrix(args.series), args.lag)
        gamma = load_csv_matrix(args.gamma) if args.gamma else None
        if args.split is None:
            return RegressionData(full.X, full.Y, gamma), None
        k = args.split
        if not 0 < k < full.n:
            raise InvalidInput(f"--split must lie in [1, {full.n - 1}], got {k}")
        return RegressionData(full.X[:k], full.Y[:k], gamma), (full.X[k:], full.Y[k:])
    if not (args.x and args.y):
        raise InvalidInput("need --x and --y (or --series)")
    X, Y = load_csv_matrix(args.x), load_csv_matrix(args.y)
    gamma = load_csv_matrix(args.gamma) if args.gamma else None
    return RegressionData(X, Y, gamma), None


def _forecast(fit, holdout) -> dict:
    if holdout is None:
        return {}
    Xt, Yt = holdout
    pred = Xt @ fit.B_hat
    return {"forecast_rows": int(Yt.shape[0]),
            "forecast_mse": trimmed_mse(pred, Yt, 0.0),
            "forecast_trimmed_mse_40": trimmed_mse(pred, Yt, 0.4)}


def _stamp(args) -> dict:
    if args.no_timestamp:
        return {}
    return {"created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}


def _out_dir(args) -> Path:
    if not args.out:
        raise InvalidInput("--out is required")
    return Path(args.out)


def cmd_fit(args) -> list:
    data, holdout = _load_data(args)
    if args.rank is None:
        raise InvalidInput("--rank is required")
    if (args.lam is None) == (args.rho_count is None):
        raise InvalidInput("give exactly one of --lambda or --rho-count")
    if args.rho_count is not None:
        if args.elementwise:
            raise InvalidInput("--elementwise applies to the penalized form only")
        spec = Constrained(args.rho_count, args.eta)
    else:
        rule = ThresholdRule(args.rule, args.lam, args.eta)
        spec = PenalizedElementwise(rule) if args.elementwise else PenalizedRowwise(rule)
    fit = multistart_fit(R4Problem(data, args.rank, spec), _opts(args))
    value = pic(data.Y, data.X, fit.B_hat, fit.C_hat, q=data.factor.rank, Gamma=data.Gamma)
    return write_fit(fit, _out_dir(args), pic_value=value,
                     extra={**_forecast(fit, holdout), "seed": args.seed, **_stamp(args)})


def cmd_path(args) -> list:
    data, holdout = _load_data(args)
    ranks = (_parse_ranks(args.ranks) if args.ranks is not None
             else list(range(1, min(data.m, data.factor.rank) + 1)))
    grid = GridSpec(ranks, lambda_count=args.grid, outlier_fraction_bounds=(args.vmin, args.vmax),
                    spec_kind="constrained" if args.constrained else "penalized",
                    rule_kind=args.rule, eta=args.eta)
    result = fit_path(data, grid, _opts(args))
    extra = {"seed": args.seed, **_stamp(args)}
    if result.selected_fit is not None:
        extra.update(_forecast(result.selected_fit, holdout))
    return write_results(result, _out_dir(args), extra=extra)


def cmd_simulate(args) -> list:
    cfg = SimConfig.for_model(args.model, outlier_fraction=args.contamination, alpha=args.alpha,
                              snr=args.snr, replications=args.reps, seed=args.seed,
                              leverage=not args.no_leverage, lambda_count=args.grid, vmax=args.vmax,
                              comparator_tuning=args.comparator_tuning)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    report = run_study(cfg, methods, _opts(args), n_jobs=args.jobs)
    return write_results(report, _out_dir(args), extra=_stamp(args))


def cmd_breakdown(args) -> list:
    if args.x or args.y or args.series:
        data, _ = _load_data(args)
    else:
        cfg = SimConfig.for_model(args.model, outlier_fraction=0.0, leverage=False, seed=args.seed)
        data = generate_instance(cfg, 0).data
    lam = args.lam
    if lam is None:
        resid = data.Y - rrr_fit(data, args.rank).fitted
        lam = 3.0 * float(np.median(np.linalg.norm(resid, axis=1)))
    res = breakdown_sweep(data, _parse_floats(args.magnitudes), args.rank, lam,
                          rule_kind=args.rule, row=args.row, col=args.col, opts=_opts(args))
    out = ensure_dir(_out_dir(args))
    write_matrix(out / "breakdown.csv",
                 np.column_stack([res["magnitude"], res["rrr"], res["r4"]]),
                 header=["magnitude", "rrr_fit_norm", "r4_fit_norm"])
    write_json(out / "breakdown.json", {**res, "lambda": lam, "rank": args.rank, **_stamp(args)})
    return [out / "breakdown.csv", out / "breakdown.json"]


COMMANDS = {"fit": cmd_fit, "path": cmd_path, "simulate": cmd_simulate, "breakdown": cmd_breakdown}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                            format="%(levelname)s %(name)s: %(message)s")
        files = COMMANDS[args.command](args)
    except R4Error as exc:
        print(f"error: {exc.reason}: {_one_line(exc)}", file=sys.stderr)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"error: numerical_failure: {_one_line(exc)}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: io_error: {_one_line(exc)}", file=sys.stderr)
        return 4
    for f in files:
        print(f)
    return 0


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
