"""Command-line front end.

    pmdep test-pmit --input d.csv --response y --z z1,z2 --w w1..w5 --adaptive
    pmdep test-cmit --input d.csv --response y --w w1..w5 --xi 0.8
    pmdep pgmc      --input d.csv --response y --z z1,z2 --w w1..w5
    pmdep simulate  --scenario a1 --regime null --N 300 --reps 200 --seed 1

Results go to stdout (or ``--output``) as JSON carrying ``"schema":
"pmdep/1"``; ``simulate`` prints a CSV table instead and writes the JSON log
to ``--output``.  A one-line summary goes to stderr.  The JSON is a pure
function of the arguments; run metadata (time, version, command line) is
kept apart in the optional ``--metadata`` file.

Exit status: 0 success, 2 usage error, 3 bad input, 4 degenerate data.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import re
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np

from pmdep import __version__
from pmdep.dataset import DataError, Dataset, load_csv
from pmdep.pgmc import pgmc_estimate, pgmc_with_screening
from pmdep.pmit import DEFAULT_XI_GRID, DegenerateDataError, adaptive_xi, cmit_single, pmit_multi
from pmdep.regress import FitError, RegressorSpec, spec_from_dict, spec_to_dict
from pmdep.sim import load_experiments, run_experiment, write_rows

SCHEMA = "pmdep/1"
THREADS_ENV = "PMDEP_THREADS"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_DEGENERATE = 4


class InputError(ValueError):
    """Bad arguments detected after parsing (columns, configs, combinations)."""


# ----------------------------------------------------------------- parsing


def _scalar(text: str) -> Any:
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("none", "null"):
        return None
    return text


def parse_regressor(text: str, allow_oracle: bool = False) -> RegressorSpec | str:
    """``kind`` or ``kind:key=value,key=value`` (e.g. ``gbt:max_depth=3``)."""
    text = text.strip()
    if allow_oracle and text == "oracle":
        return "oracle"
    kind, _, rest = text.partition(":")
    params: dict[str, Any] = {"kind": kind}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq:
            raise InputError(f"bad regressor parameter {item!r} in {text!r}")
        params[key.strip()] = _scalar(value.strip())
    try:
        return spec_from_dict(params)
    except ValueError as exc:
        raise InputError(str(exc)) from None


_RANGE = re.compile(r"^(.*?)(\d+)\.\.(.*?)(\d+)$")


def expand_columns(text: str | None, header: Sequence[str]) -> list[str]:
    """Comma-separated names; ``w1..w5`` expands to ``w1, w2, ..., w5``.

    Every expanded name must be present in ``header``.
    """
    if not text:
        return []
    out: list[str] = []
    for item in (s.strip() for s in text.split(",")):
        if not item:
            continue
        m = _RANGE.match(item)
        if m is None:
            if ".." in item:
                raise InputError(f"bad column range {item!r}; expected like w1..w5")
            out.append(item)
            continue
        prefix, lo, prefix2, hi = m.group(1), int(m.group(2)), m.group(3), int(m.group(4))
        if prefix != prefix2 or hi < lo:
            raise InputError(f"bad column range {item!r}")
        names = [f"{prefix}{i}" for i in range(lo, hi + 1)]
        missing = [n for n in names if n not in header]
        if missing:
            raise InputError(f"range {item!r} names columns absent from the header: {missing}")
        out.extend(names)
    return out


def _read_header(path: str) -> list[str]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"no such file: {p}")
    with p.open(encoding="utf-8") as fh:
        first = fh.readline()
    return [h.strip() for h in first.rstrip("\r\n").split(",")]


def _load(args: argparse.Namespace, need_z: bool = True) -> Dataset:
    for flag in ("input", "response", "w"):
        if not getattr(args, flag):
            raise InputError(f"--{flag} is required (on the command line or in --config)")
    header = _read_header(args.input)
    z = expand_columns(args.z, header) if need_z else []
    w = expand_columns(args.w, header)
    data = load_csv(args.input, args.response, z, w)
    if args.zscore:
        sd = data.x.std(axis=0)
        if np.any(sd == 0.0):
            bad = [n for n, s in zip(data.names, sd) if s == 0.0]
            raise DegenerateDataError(f"cannot standardize constant columns: {bad}")
        x = (data.x - data.x.mean(axis=0)) / sd
        data = Dataset(data.y, x, data.z_cols, data.w_cols, data.names, data.response_name)
    return data


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise InputError(f"{THREADS_ENV} must be positive")
    return value


def _xi_grid(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="JSON file of option defaults (keys are option names with underscores)")
    p.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default ${THREADS_ENV} or 1)")
    p.add_argument("--output", metavar="FILE", help="write the JSON record here instead of stdout")
    p.add_argument("--metadata", metavar="FILE",
                   help="write run metadata (timestamp, version, argv) to this JSON file")


def _add_data(p: argparse.ArgumentParser, z: bool = True) -> None:
    p.add_argument("--input", metavar="CSV", help="headed CSV file (required)")
    p.add_argument("--response", help="response column (required)")
    if z:
        p.add_argument("--z", default="", help="control columns, e.g. z1,z2 or z1..z3")
    p.add_argument("--w", help="tested columns, e.g. w1..w5 (required)")
    p.add_argument("--zscore", action="store_true",
                   help="standardize covariate columns before fitting")


def _add_split(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--xi", type=float, help="fixed split ratio n1/N")
    group.add_argument("--adaptive", action="store_true",
                       help="choose the split ratio by permutation (default when --xi is absent)")
    p.add_argument("--xi-grid", type=_xi_grid, default=DEFAULT_XI_GRID,
                   help="comma-separated candidate ratios (default 1/2,...,9/10)")
    p.add_argument("--M", type=int, default=200, help="permutations per candidate (default 200)")
    p.add_argument("--fast", action="store_true",
                   help="reuse one split and h fit per candidate during the search")


def build_parser(
    command_defaults: dict[str, Any] | None = None, command: str | None = None
) -> argparse.ArgumentParser:
    """The argument parser; ``command_defaults`` overrides the defaults of
    subcommand ``command`` (used to apply ``--config`` files)."""
    parser = argparse.ArgumentParser(
        prog="pmdep",
        description="Partial mean independence testing and partial measure-of-correlation "
                    "estimation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("test-pmit", help="test E(Y|Z,W) = E(Y|Z)")
    _add_data(p)
    _add_split(p)
    p.add_argument("--h", default="gbt", help="learner for E(Y|Z), e.g. gbt:max_depth=3")
    p.add_argument("--g", default="gbt", help="learner for the residual regression")
    p.add_argument("--g-recipe", choices=("residual", "difference"), default="residual")
    p.add_argument("--B", type=int, default=10, help="number of splits (default 10)")
    p.add_argument("--aggregator", choices=("cauchy", "quantile"), default="cauchy")
    p.add_argument("--tau", type=float, default=1.0, help="power-enhancement weight")
    p.add_argument("--alpha", type=float, default=0.05)
    _add_common(p)

    p = sub.add_parser("test-cmit", help="test E(Y|W) = E(Y) (no control block)")
    _add_data(p, z=False)
    p.add_argument("--xi", type=float, default=0.8, help="split ratio n1/N (default 0.8)")
    p.add_argument("--m", default="gbt", help="learner for E(Y|W)")
    p.add_argument("--alpha", type=float, default=0.05)
    _add_common(p)

    p = sub.add_parser("pgmc", help="estimate the partial measure of correlation")
    _add_data(p)
    p.add_argument("--m", default="gbt", help="learner for E(Y|Z,W)")
    p.add_argument("--h", default="gbt", help="learner for E(Y|Z)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--keep", type=int, help="distance-correlation screening: columns kept")
    _add_common(p)

    p = sub.add_parser("simulate", help="Monte Carlo size/power or coverage runs")
    p.add_argument("--experiments", metavar="FILE",
                   help="JSON experiment file; replaces the scenario options below")
    p.add_argument("--scenario", choices=("a1", "a2", "b1", "b2"), type=str.lower)
    p.add_argument("--regime", choices=("null", "sparse", "dense"), default="null")
    p.add_argument("--N", type=int, default=300)
    p.add_argument("--p", type=int, help="total dimension (B family; default 100)")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--coverage", action="store_true", help="run interval coverage instead")
    p.add_argument("--method", choices=("pmit", "multi", "cmit"), default="pmit")
    _add_split(p)
    p.add_argument("--per-replicate", action="store_true",
                   help="rerun the split-ratio search on every replicate")
    p.add_argument("--h", default="gbt", help="learner for E(Y|Z), or 'oracle'")
    p.add_argument("--g", default="gbt", help="learner for the residual regression")
    p.add_argument("--m", default="gbt", help="learner for E(Y|X) (coverage), or 'oracle'")
    p.add_argument("--B", type=int, default=10)
    p.add_argument("--aggregator", choices=("cauchy", "quantile"), default="cauchy")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--keep", type=int)
    p.add_argument("--csv", metavar="FILE", help="also write the CSV table here")
    _add_common(p)
    if command_defaults and command:
        sub.choices[command].set_defaults(**command_defaults)
    return parser


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise InputError("config file must hold a JSON object")
        known = vars(args)
        unknown = sorted(k for k in cfg if k.replace("-", "_") not in known)
        if unknown:
            raise InputError(f"unknown config keys: {unknown}")
        defaults = {k.replace("-", "_"): v for k, v in cfg.items()}
        args = build_parser(defaults, args.command).parse_args(argv)
    if getattr(args, "xi", None) is not None and getattr(args, "adaptive", False):
        raise InputError("--xi and --adaptive are mutually exclusive")
    if args.threads is None:
        args.threads = _default_threads()
    if args.threads < 1:
        raise InputError("--threads must be positive")
    return args


# ---------------------------------------------------------------- commands


def _spec(text: Any, allow_oracle: bool = False) -> RegressorSpec | str:
    if isinstance(text, dict):
        return spec_from_dict(text)
    return parse_regressor(str(text), allow_oracle)


def _data_block(args: argparse.Namespace, data: Dataset) -> dict[str, Any]:
    return {
        "input": str(args.input),
        "response": data.response_name,
        "z": [data.names[j] for j in data.z_cols],
        "w": [data.names[j] for j in data.w_cols],
        "n": data.n,
        "zscore": bool(args.zscore),
    }


def cmd_test_pmit(args: argparse.Namespace) -> tuple[dict[str, Any], str]:
    data = _load(args)
    spec_h, spec_g = _spec(args.h), _spec(args.g)
    if args.xi is None:
        search = adaptive_xi(data, spec_h, spec_g, candidates=args.xi_grid, M=args.M,
                             alpha=args.alpha, seed=args.seed, tau=args.tau,
                             g_recipe=args.g_recipe, fast=args.fast, threads=args.threads)
        xi = search.xi
        xi_block = {"mode": "adaptive", **search.to_dict()}
    else:
        xi = args.xi
        xi_block = {"mode": "fixed", "xi": xi}
    res = pmit_multi(data, spec_h, spec_g, xi, args.B, args.aggregator, args.seed,
                     args.tau, args.g_recipe, args.threads)
    record = {
        "data": _data_block(args, data),
        "settings": {"h": spec_to_dict(spec_h), "g": spec_to_dict(spec_g),
                     "g_recipe": args.g_recipe, "B": args.B, "aggregator": args.aggregator,
                     "tau": args.tau, "alpha": args.alpha, "seed": args.seed},
        "split_ratio": xi_block,
        "result": {**res.to_dict(), "reject": res.reject(args.alpha),
                   "reject_enhanced": res.reject(args.alpha, enhanced=True)},
    }
    summary = (f"p_star={res.p_star:.4g} p_star_enhanced={res.p_star_enhanced:.4g} "
               f"xi={xi:.4g} B={args.B}")
    return record, summary


def cmd_test_cmit(args: argparse.Namespace) -> tuple[dict[str, Any], str]:
    args.z = ""
    data = _load(args, need_z=False)
    spec_m = _spec(args.m)
    res = cmit_single(data, spec_m, args.xi, args.seed)
    record = {
        "data": _data_block(args, data),
        "settings": {"m": spec_to_dict(spec_m), "xi": args.xi, "alpha": args.alpha,
                     "seed": args.seed},
        "result": {**res.to_dict(), "reject": res.p_value < args.alpha},
    }
    return record, f"p_value={res.p_value:.4g} v={res.v:.4g} xi={res.xi:.4g}"


def cmd_pgmc(args: argparse.Namespace) -> tuple[dict[str, Any], str]:
    data = _load(args)
    spec_m, spec_h = _spec(args.m), _spec(args.h)
    if args.keep is None:
        est = pgmc_estimate(data, spec_m, spec_h, args.alpha, args.seed)
    else:
        est = pgmc_with_screening(data, args.keep, spec_m, spec_h, args.alpha, args.seed)
    record = {
        "data": _data_block(args, data),
        "settings": {"m": spec_to_dict(spec_m), "h": spec_to_dict(spec_h),
                     "alpha": args.alpha, "keep": args.keep, "seed": args.seed},
        "result": est.to_dict(),
    }
    summary = f"r2_hat={est.r2_hat:.4g} ci=[{est.ci_low:.4g}, {est.ci_high:.4g}]"
    return record, summary


def _experiments_from_flags(args: argparse.Namespace) -> list[dict[str, Any]]:
    if args.scenario is None:
        raise InputError("simulate needs --scenario or --experiments")
    scenario: dict[str, Any] = {"family": args.scenario.upper(), "N": args.N}
    if args.scenario.startswith("a"):
        scenario["regime"] = args.regime
    if args.p is not None:
        scenario["p"] = args.p
    base = {"scenario": scenario, "reps": args.reps, "alpha": args.alpha, "seed": args.seed}
    if args.coverage:
        m, h = _spec(args.m, True), _spec(args.h, True)
        return [{**base, "type": "coverage", "keep": args.keep,
                 "m": m if isinstance(m, str) else spec_to_dict(m),
                 "h": h if isinstance(h, str) else spec_to_dict(h)}]
    h, g = _spec(args.h, True), _spec(args.g)
    method = {
        "kind": args.method, "h": h if isinstance(h, str) else spec_to_dict(h),
        "g": spec_to_dict(g), "xi": args.xi,
        "adaptive": "per_replicate" if args.per_replicate else "pilot",
        "candidates": list(args.xi_grid), "M": args.M, "B": args.B,
        "aggregator": args.aggregator, "tau": args.tau, "fast": args.fast,
    }
    return [{**base, "type": "size_power", "method": method}]


def cmd_simulate(args: argparse.Namespace) -> tuple[dict[str, Any], str]:
    experiments = (load_experiments(args.experiments) if args.experiments
                   else _experiments_from_flags(args))
    results = []
    for exp in experiments:
        try:
            results.append(run_experiment(exp, threads=args.threads))
        except TypeError as exc:
            raise InputError(f"bad experiment: {exc}") from None
    rows = [r.row() for r in results]
    table = write_rows(rows, args.csv)
    record = {"experiments": experiments, "results": [r.to_dict() for r in results]}
    return record, table


COMMANDS = {
    "test-pmit": cmd_test_pmit,
    "test-cmit": cmd_test_cmit,
    "pgmc": cmd_pgmc,
    "simulate": cmd_simulate,
}


def _json_default(o: Any) -> Any:
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (tuple, set)):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def render(record: dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, indent=2, default=_json_default) + "\n"


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except InputError as exc:
        print(f"pmdep: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        body, summary = COMMANDS[args.command](args)
    except (DegenerateDataError, FitError) as exc:
        print(f"pmdep: degenerate data: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (DataError, InputError, ValueError, OSError) as exc:
        print(f"pmdep: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    text = render({"schema": SCHEMA, "command": args.command, **body})
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    elif args.command != "simulate":
        sys.stdout.write(text)
    if args.command == "simulate":
        sys.stdout.write(summary)
    else:
        print(summary, file=sys.stderr)
    if args.metadata:
        meta = {
            "schema": SCHEMA,
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "version": __version__,
            "argv": list(sys.argv[1:] if argv is None else argv),
            "threads": args.threads,
        }
        Path(args.metadata).write_text(render(meta), encoding="utf-8")
    return EXIT_OK


def main() -> None:
    sys.exit(run())
