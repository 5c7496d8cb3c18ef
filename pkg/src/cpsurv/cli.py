"""Command-line interface: ``cpsurv {fit,ci,test,simulate,reproduce-table1}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .data import DataError, default_bounds, load_dataset, validate, write_dataset
from .estimator import NonConvergenceError, fit_npmle
from .families import DomainError, parse_family
from .inference import InsufficientDataError, WeightScheme, bootstrap_psi, cp_confidence_interval
from .likelihood import NumericError
from .scoretest import run_test
from .sim import Scenario, TableConfig, reproduce_table1, scenario_dict, simulate_dataset, write_table

log = logging.getLogger("cpsurv")

STOCHASTIC = {"fit", "ci", "test", "simulate", "reproduce-table1"}


class UsageError(Exception):
    pass


def _family(text):
    try:
        return parse_family(text)
    except (ValueError, DomainError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(text):
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _strings(text):
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


def _common(p, *, data=True):
    p.add_argument("--config", help="JSON or key=value file; command-line flags take precedence")
    p.add_argument("--seed", type=int, help="master seed (required)")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--output", "-o", help="output path (default: standard output)")
    p.add_argument("--verbose", "-v", action="store_true")
    if data:
        p.add_argument("--family", type=_family, default="cox")
        p.add_argument("--data", help="subjects CSV")
        p.add_argument("--covariates", help="long-format covariate CSV for time-varying paths")
        p.add_argument("--q", type=int, default=1, help="number of trailing covariates in Z2")
        p.add_argument("--tau", type=float)
        p.add_argument("--a", type=float)
        p.add_argument("--b", type=float)
        p.add_argument("--inner-frac", type=float, default=0.8)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpsurv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="NPMLE with bootstrap standard errors and a threshold CI")
    _common(p)
    p.add_argument("--B", type=int, default=250, help="weighted-bootstrap replicates")
    p.add_argument("--draws", type=int, default=2000, help="argmax draws for the threshold CI")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--weights", default="exp-truncated",
                   choices=("exp-truncated", "exponential"))

    p = sub.add_parser("ci", help="NPMLE and the threshold confidence interval only")
    _common(p)
    p.add_argument("--draws", type=int, default=2000)
    p.add_argument("--level", type=float, default=0.95)

    p = sub.add_parser("test", help="sup and integrated score tests for a change-point")
    _common(p)
    p.add_argument("--M", type=int, default=250, help="bootstrap score processes")
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--weights", default="exp-truncated",
                   choices=("exp-truncated", "exponential"))
    p.add_argument("--envelope", help="CSV path for the score process and bootstrap envelope")

    p = sub.add_parser("simulate", help="draw a dataset from the model")
    _common(p, data=False)
    p.add_argument("--family", type=_family, default="cox")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--eta", type=_floats, default=(0.0,))
    p.add_argument("--beta", type=_floats, default=(1.0,))
    p.add_argument("--alpha0", type=float, default=0.0)
    p.add_argument("--zeta0", type=float, default=0.0)
    p.add_argument("--censor-rate", type=float, default=0.1)
    p.add_argument("--censor-cap", type=float, default=10.0)
    p.add_argument("--covariates", help="covariate CSV path, used only for time-varying paths")

    p = sub.add_parser("reproduce-table1", help="power study over the eta grid")
    _common(p, data=False)
    p.add_argument("--reps", type=int, default=250)
    p.add_argument("--M", type=int, default=250)
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--etas", type=_floats, default=(0.0, -0.5, -1.0, -2.0, -3.0))
    p.add_argument("--families", type=_strings, default=("cox", "odds-rate:1"))
    p.add_argument("--json", help="also write the table as JSON here")
    return parser


def read_config(path) -> dict:
    """JSON object, or ``key = value`` lines (``#`` starts a comment)."""
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        obj = {}
        for num, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{num}: expected key = value")
            obj[key.strip()] = value.strip()
    if not isinstance(obj, dict):
        raise UsageError(f"{path}: config must be an object")
    return {k.replace("-", "_"): v for k, v in obj.items()}


def _apply_config(parser, sub, argv, args):
    """Re-parse with config values as defaults so explicit flags win."""
    cfg = read_config(args.config)
    actions = {a.dest: a for a in sub._actions}
    cfg.pop("command", None)
    defaults = {}
    for key, value in cfg.items():
        act = actions.get(key)
        if act is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        if isinstance(act, argparse._StoreTrueAction):
            value = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
        elif act.type is not None:
            value = act.type(str(value))
        defaults[key] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _emit(text: str, path) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _dump(obj, path) -> None:
    _emit(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", path)


def _load(args):
    if not args.data:
        raise UsageError("--data is required")
    for path in (args.data, args.covariates):
        if path and not Path(path).is_file():
            raise UsageError(f"no such file: {path}")
    return load_dataset(args.data, args.covariates, q=args.q, tau=args.tau)


def _bounds(args, ds):
    a, b = default_bounds(ds.y, args.inner_frac)
    a = a if args.a is None else args.a
    b = b if args.b is None else args.b
    rep = validate(ds, a, b)
    for w in rep.warnings:
        log.warning(w)
    return a, b


def _fit_common(args):
    ds = _load(args)
    a, b = _bounds(args, ds)
    fit = fit_npmle(ds, args.family, a, b)
    out = {
        "family": args.family.spec,
        "seed": args.seed,
        "n": ds.n,
        "a": a, "b": b,
        "zeta_hat": fit.zeta,
        "loglik": fit.loglik,
        "converged": fit.converged,
        "gradient_norm": fit.gradient_norm,
        "iterations": fit.iterations,
        "gamma": dict(zip(_names(ds), fit.psi.gamma)),
        "A": {"times": fit.psi.A.times, "cumulative": np.cumsum(fit.psi.A.jumps)},
        "profile": {"zeta": fit.profile_curve[:, 0], "loglik": fit.profile_curve[:, 1]},
    }
    return ds, fit, out


def _names(ds):
    from .inference import gamma_names

    return gamma_names(ds.q, ds.d)


def cmd_fit(args, ss):
    ds, fit, out = _fit_common(args)
    s_boot, s_ci = ss.spawn(2)
    boot = bootstrap_psi(ds, fit, args.B, WeightScheme(args.weights), s_boot, args.level,
                         n_jobs=args.threads)
    out["bootstrap"] = boot.to_dict()
    out["zeta_ci"] = cp_confidence_interval(ds, fit, args.level, args.draws, s_ci).to_dict()
    _dump(out, args.output)


def cmd_ci(args, ss):
    ds, fit, out = _fit_common(args)
    out["zeta_ci"] = cp_confidence_interval(ds, fit, args.level, args.draws, ss).to_dict()
    _dump(out, args.output)


def cmd_test(args, ss):
    ds = _load(args)
    a, b = _bounds(args, ds)
    res = run_test(ds, args.family, a, b, M=args.M, scheme=WeightScheme(args.weights),
                   level=args.level, rng=ss, n_jobs=args.threads)
    out = res.to_dict()
    out["family"] = args.family.spec
    out["seed"] = args.seed
    out["n"] = ds.n
    _dump(out, args.output)
    if args.envelope:
        with open(args.envelope, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["zeta", "component", "score", "boot_mean", "boot_sd"])
            for z, c, s, m, sd in res.envelope_rows():
                wr.writerow([repr(float(z)), c, repr(float(s)), repr(float(m)), repr(float(sd))])


def cmd_simulate(args, ss):
    scn = Scenario(family=args.family, n=args.n, eta0=args.eta, beta0=args.beta,
                   zeta0=args.zeta0, alpha0=args.alpha0, censor_rate=args.censor_rate,
                   censor_cap=args.censor_cap)
    ds = simulate_dataset(scn, np.random.default_rng(ss))
    if args.output in (None, "-"):
        raise UsageError("simulate needs --output for the subjects CSV")
    write_dataset(ds, args.output, args.covariates)
    log.info("wrote %d subjects (%s)", ds.n, json.dumps(scenario_dict(scn), sort_keys=True))


def cmd_table(args, ss):
    cfg = TableConfig(reps=args.reps, M=args.M, seed=args.seed, n=args.n, level=args.level,
                      etas=tuple(args.etas), families=tuple(args.families), n_jobs=args.threads)
    rows = reproduce_table1(cfg)
    if args.output in (None, "-"):
        import io

        buf = io.StringIO()
        wr = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        wr.writeheader()
        wr.writerows(rows)
        _emit(buf.getvalue(), None)
        if args.json:
            write_table(rows, json_path=args.json)
    else:
        write_table(rows, args.output, args.json)


COMMANDS = {"fit": cmd_fit, "ci": cmd_ci, "test": cmd_test, "simulate": cmd_simulate,
            "reproduce-table1": cmd_table}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.INFO if args.verbose else logging.WARNING, force=True)
    logging.captureWarnings(True)
    try:
        if args.config:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            try:
                args = _apply_config(parser, sub, argv, args)
            except SystemExit as exc:
                return 0 if exc.code in (0, None) else 2
            except (OSError, ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"bad config: {exc}") from None
        if args.command in STOCHASTIC and args.seed is None:
            raise UsageError(f"{args.command} needs --seed")
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        ss = np.random.SeedSequence(args.seed)
        with threadpool_limits(limits=1):
            COMMANDS[args.command](args, ss)
    except UsageError as exc:
        print(f"cpsurv: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, DomainError, InsufficientDataError, NonConvergenceError, NumericError,
            np.linalg.LinAlgError, ValueError, OSError) as exc:
        print(f"cpsurv: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
