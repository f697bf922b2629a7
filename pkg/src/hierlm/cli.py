"""Command-line interface: fit, simulate, predict, compare.

Model specifications are given either as a JSON file or with a small
flag language that maps one-to-one onto the JSON form::

    --fixed "1 + age11 + girl"  --random "1 + t | child"  --resid ar1:occ

Exit codes: 0 success, 1 user or data error, 2 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .data import CATEGORICAL, NUMERIC, Dataset, load_long_csv
from .design import AR1, ModelSpec, Residual, build_design, describe
from .errors import ConfigError, ConvergenceError, HierlmError
from .fitting import FitOptions, FitResult, fit
from .inference import lrt_from_deviances
from .prediction import caterpillar, cluster_lines
from .simulate import (
    SimulationParams,
    apply_dropout,
    completeness,
    simulate_clustered,
    simulate_longitudinal,
)

THREADS_ENV = "HIERARCH_THREADS"


def _default_threads() -> int:
    value = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def parse_term_list(text: str) -> tuple[str, ...]:
    """Parse "1 + a + b:c" into a term tuple."""
    terms = tuple(t.strip() for t in text.split("+"))
    if any(not t for t in terms):
        raise ConfigError(f"malformed term list {text!r}")
    return terms


def parse_random_part(text: str) -> tuple[tuple[str, ...], str]:
    """Parse "1 + t | child" into (terms, cluster)."""
    if "|" not in text:
        raise ConfigError(
            f"random part must look like '1 + t | cluster', got {text!r}"
        )
    terms_text, cluster = text.split("|", 1)
    cluster = cluster.strip()
    if not cluster:
        raise ConfigError("random part names no cluster column")
    return parse_term_list(terms_text), cluster


def parse_residual(text: str) -> Residual:
    """Parse "iid" or "ar1:<occasion column>"."""
    text = text.strip()
    if text == "iid":
        return Residual()
    if text.startswith("ar1:"):
        return Residual(kind=AR1, occasion=text.split(":", 1)[1].strip())
    raise ConfigError(f"residual must be 'iid' or 'ar1:<occasion>', got {text!r}")


def spec_from_args(args) -> ModelSpec:
    if args.spec is not None:
        with open(args.spec, encoding="utf-8") as handle:
            return ModelSpec.from_json_dict(json.load(handle))
    missing = [
        flag
        for flag, value in (
            ("--response", args.response),
            ("--fixed", args.fixed),
            ("--random", args.random),
        )
        if value is None
    ]
    if missing:
        raise ConfigError(f"either --spec or all of {missing} are required")
    random_terms, cluster = parse_random_part(args.random)
    return ModelSpec(
        response=args.response,
        fixed=parse_term_list(args.fixed),
        random=random_terms,
        cluster=cluster,
        residual=parse_residual(args.resid),
    )


def load_for_spec(path: str, spec: ModelSpec) -> Dataset:
    """Load exactly the columns a spec needs; covariates must be numeric."""
    schema = {col: NUMERIC for col in spec.base_columns()}
    schema[spec.cluster] = CATEGORICAL
    occasion = spec.residual.occasion
    if occasion is not None:
        schema[occasion] = NUMERIC
    return load_long_csv(path, schema, cluster=spec.cluster, occasion=occasion)


def _options_from_args(args) -> FitOptions:
    return FitOptions(
        max_iter=args.max_iter,
        grad_tol=args.grad_tol,
        fd_step=args.fd_step,
        seed=args.seed,
        compute_se=not args.no_se,
        threads=args.threads,
    )


def cmd_fit(args) -> int:
    spec = spec_from_args(args)
    ds = load_for_spec(args.data, spec)
    result = fit(ds, spec, _options_from_args(args))
    doc = result.to_json_dict()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            json.dump(doc, handle, indent=2)
            handle.write("\n")
    if args.table or not args.out:
        print(result.summary())
    return 0


def cmd_simulate(args) -> int:
    with open(args.params, encoding="utf-8") as handle:
        doc = json.load(handle)
    kind = doc.get("kind", "longitudinal")
    params = SimulationParams.from_json_dict(doc)
    if kind == "longitudinal":
        ds = simulate_longitudinal(params)
        if params.dropout is not None:
            ds = apply_dropout(ds, params.dropout, seed=params.seed + 1)
        complete = completeness(ds, len(params.occasions))
        summary = (
            f"J = {params.n_clusters}, n = {ds.n_rows}, "
            f"complete = {100.0 * complete:.1f}%"
        )
    elif kind == "clustered":
        ds = simulate_clustered(params)
        summary = f"J = {params.n_clusters}, n = {ds.n_rows}"
    else:
        raise ConfigError(f"unknown simulation kind {kind!r}")
    ds.to_csv(args.out)
    print(summary)
    return 0


def parse_grid(specs: list[str]):
    """Parse repeated "name=start:stop:count" or "name=v1,v2,..." flags."""
    grid: dict[str, np.ndarray] = {}
    for text in specs:
        if "=" not in text:
            raise ConfigError(f"grid must look like 'name=0:1:6', got {text!r}")
        name, values = text.split("=", 1)
        name = name.strip()
        try:
            if ":" in values:
                start, stop, count = values.split(":")
                grid[name] = np.linspace(float(start), float(stop), int(count))
            else:
                grid[name] = np.array([float(v) for v in values.split(",")])
        except ValueError as exc:
            raise ConfigError(f"malformed grid {text!r}: {exc}") from exc
    lengths = {len(v) for v in grid.values()}
    if len(lengths) > 1:
        raise ConfigError("all grid columns must have the same length")
    return grid


def cmd_predict(args) -> int:
    with open(args.fit, encoding="utf-8") as handle:
        result = FitResult.from_json_dict(json.load(handle))
    ds = load_for_spec(args.data, result.spec)
    dm = build_design(ds, result.spec)
    if dm.J != result.J or dm.n != result.n:
        raise ConfigError(
            f"data does not match the fit: fit saw n={result.n}, J={result.J} "
            f"but this file gives n={dm.n}, J={dm.J}"
        )
    if args.caterpillar:
        caterpillar(result, dm, args.level).to_csv(args.caterpillar, index=False)
    if args.lines:
        grid = parse_grid(args.grid)
        cluster_lines(result, dm, grid).to_csv(args.lines, index=False)
    return 0


def _params_from_fit_file(path: str) -> tuple[float, int]:
    with open(path, encoding="utf-8") as handle:
        doc = json.load(handle)
    counts = doc["counts"]
    q = counts["q"]
    n_params = counts["p"] + q * (q + 1) // 2 + 1
    if doc["random"].get("ar1_corr") is not None:
        n_params += 1
    return float(doc["deviance"]), n_params


def cmd_compare(args) -> int:
    if args.deviance_full is not None or args.deviance_nested is not None:
        if args.deviance_full is None or args.deviance_nested is None:
            raise ConfigError("--deviance-full and --deviance-nested go together")
        if args.df is None:
            raise ConfigError("--df is required with explicit deviances")
        d_full, d_nested, df = args.deviance_full, args.deviance_nested, args.df
    else:
        if not (args.fit_full and args.fit_nested):
            raise ConfigError(
                "give --fit-full and --fit-nested, or explicit deviances"
            )
        d_full, k_full = _params_from_fit_file(args.fit_full)
        d_nested, k_nested = _params_from_fit_file(args.fit_nested)
        df = args.df if args.df is not None else k_full - k_nested
        if df < 1:
            raise ConfigError(
                f"the full fit has no extra parameters (df={df}); pass --df"
            )

    statistic = d_nested - d_full
    if statistic < -1e-6:
        print(
            f"warning: deviance ordering violated (L = {statistic:.6g}); "
            f"models may not be nested or a fit did not converge",
            file=sys.stderr,
        )
    test = lrt_from_deviances(d_nested, d_full, df, boundary=False)
    print(f"L = {test.statistic:.6g}, df = {df}, p = {test.p_value:.6g}")
    if args.boundary:
        halved = lrt_from_deviances(d_nested, d_full, df, boundary=True)
        print(f"p (boundary, halved) = {halved.p_value:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hierlm",
        description="Two-level linear mixed models: fit, simulate, predict, compare.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model to a long-format CSV")
    p_fit.add_argument("--data", required=True, help="long-format CSV file")
    p_fit.add_argument("--out", help="write the fit result JSON here")
    p_fit.add_argument("--spec", help="model spec JSON file")
    p_fit.add_argument("--response", help="response column")
    p_fit.add_argument("--fixed", help="fixed terms, e.g. '1 + age11 + girl'")
    p_fit.add_argument("--random", help="random part, e.g. '1 + t | child'")
    p_fit.add_argument("--resid", default="iid", help="'iid' or 'ar1:<occasion>'")
    p_fit.add_argument("--table", action="store_true", help="print a summary table")
    p_fit.add_argument("--max-iter", type=int, default=500)
    p_fit.add_argument("--grad-tol", type=float, default=1e-6)
    p_fit.add_argument("--fd-step", type=float, default=1e-5)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--no-se", action="store_true", help="skip standard errors")
    p_fit.add_argument("--threads", type=int, default=_default_threads())
    p_fit.set_defaults(handler=cmd_fit)

    p_sim = sub.add_parser("simulate", help="generate synthetic data")
    p_sim.add_argument("--params", required=True, help="SimulationParams JSON file")
    p_sim.add_argument("--out", required=True, help="write the CSV here")
    p_sim.set_defaults(handler=cmd_simulate)

    p_pred = sub.add_parser("predict", help="cluster effects and fitted lines")
    p_pred.add_argument("--fit", required=True, help="fit result JSON")
    p_pred.add_argument("--data", required=True, help="the fitted data CSV")
    p_pred.add_argument("--caterpillar", help="write the ranked effects CSV here")
    p_pred.add_argument("--lines", help="write the per-cluster lines CSV here")
    p_pred.add_argument(
        "--grid",
        action="append",
        default=[],
        help="grid column, 'name=start:stop:count' or 'name=v1,v2,...'",
    )
    p_pred.add_argument("--level", type=float, default=0.95)
    p_pred.set_defaults(handler=cmd_predict)

    p_cmp = sub.add_parser("compare", help="likelihood-ratio test of two fits")
    p_cmp.add_argument("--fit-full", help="fit result JSON of the larger model")
    p_cmp.add_argument("--fit-nested", help="fit result JSON of the restriction")
    p_cmp.add_argument("--deviance-full", type=float)
    p_cmp.add_argument("--deviance-nested", type=float)
    p_cmp.add_argument("--df", type=int)
    p_cmp.add_argument("--boundary", action="store_true",
                       help="also print the halved boundary p-value (df=1)")
    p_cmp.set_defaults(handler=cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConvergenceError as exc:
        print(f"hierlm: did not converge: {exc}", file=sys.stderr)
        return 2
    except HierlmError as exc:
        print(f"hierlm: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"hierlm: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
