"""``memv`` command line interface.

Commands
--------
test      fit under a presumed error model and run the validity test
sweep     run the test over a grid of kappa with ``S = kappa * S_w``
simulate  run the Monte Carlo grid and write summary tables
suggest   print the rule-of-thumb presumed response variance RSS/(n-m)

Exit status: 0 success, 2 usage error, 3 data error, 4 numerical degeneracy.
The test decision never changes the exit status.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from memv import io as mio
from memv.core import DataError, Dataset, ErrorModel, als_estimate, r_squared
from memv.inference import (
    DEFAULT_Z_ALPHA,
    DegenerateResidualError,
    memv_test,
    suggest_sigma0,
    z_from_alpha,
)
from memv.plot import sweep_svg
from memv.simulation import STRATA, GridSpec, run_grid
from memv.sweep import DEFAULT_GRID, KnownBlock, sweep

EXIT_USAGE, EXIT_DATA, EXIT_DEGENERATE = 2, 3, 4

EXCLUSIVE = (
    ("s_matrix", "s_stddevs", "kappa_grid"),
    ("sigma0", "sigma0_rel"),
    ("z_alpha", "alpha"),
)
OPTIONS = (
    "input", "response", "covariates", "filter", "s_matrix", "s_stddevs", "kappa_grid",
    "known_stddevs", "sigma0", "sigma0_rel", "z_alpha", "alpha", "out", "svg", "seed",
    "workers", "replications", "ns", "x_error_factors", "y_error_factors", "pa_levels",
    "fs", "c_true", "x3_coef",
)


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    add = common.add_argument
    add("--config", help="flat 'key = value' file; command line flags take precedence")
    add("--input", help="CSV file with a header row")
    add("--response", help="response column")
    add("--covariates", help="comma-separated covariate columns")
    add("--filter", action="append", help="keep rows with COLUMN=VALUE (repeatable)")
    add("--s-matrix", dest="s_matrix", help="file with the m x m covariate error covariance")
    add("--s-stddevs", dest="s_stddevs", help="comma-separated covariate error standard deviations")
    add("--kappa-grid", dest="kappa_grid", help="kappa values 'a,b,c' or 'start:stop:step' (stop inclusive)")
    add("--known-stddevs", dest="known_stddevs", help="sweep only: COLUMN=SD,... with known error levels")
    add("--sigma0", type=float, help="presumed response error variance")
    add("--sigma0-rel", dest="sigma0_rel", type=float, help="presumed response error sd as a fraction of std(y)")
    add("--z-alpha", dest="z_alpha", type=float, help=f"critical value (default {DEFAULT_Z_ALPHA:g})")
    add("--alpha", type=float, help="significance level, converted to a critical value")
    add("--out", help="output file (test, sweep) or directory (simulate)")
    add("--svg", help="sweep chart path (default: --out with .svg suffix)")
    add("--seed", type=int)
    add("--workers", type=int)
    add("--replications", type=int)
    add("--ns", help="simulate: comma-separated sample sizes")
    add("--x-error-factors", dest="x_error_factors")
    add("--y-error-factors", dest="y_error_factors")
    add("--pa-levels", dest="pa_levels")
    add("--fs")
    add("--c-true", dest="c_true")
    add("--x3-coef", dest="x3_coef", type=float)

    parser = argparse.ArgumentParser(prog="memv", description="Measurement error model validity test")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("test", "run the validity test with a presumed error model"),
        ("sweep", "run the test over a kappa grid with S = kappa * S_w"),
        ("simulate", "run the Monte Carlo study"),
        ("suggest", "rule-of-thumb presumed response variance RSS/(n-m)"),
    ):
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def merge_config(args: argparse.Namespace) -> dict:
    """Combine flags with the config file; flags win, also across exclusive groups."""
    cli = {k: getattr(args, k) for k in OPTIONS}
    cfg: dict = {}
    if args.config:
        raw = mio.read_config(args.config)
        unknown = sorted(set(raw) - set(OPTIONS))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        cfg = dict(raw)
        if "filter" in cfg:
            cfg["filter"] = [f.strip() for f in cfg["filter"].split(";") if f.strip()]
        for group in EXCLUSIVE:
            if any(cli[k] is not None for k in group):
                for k in group:
                    cfg.pop(k, None)
    merged = {k: cli[k] if cli[k] is not None else cfg.get(k) for k in OPTIONS}
    for group in EXCLUSIVE:
        given = [k for k in group if merged[k] is not None]
        if len(given) > 1:
            raise UsageError("options are mutually exclusive: " + ", ".join("--" + k.replace("_", "-") for k in given))
    return merged


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _float(value, what: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise UsageError(f"{what}: expected a number, got {value!r}") from None


def parse_grid(text: str) -> list[float]:
    if ":" in text:
        parts = _floats(text.replace(":", ","), "--kappa-grid")
        if len(parts) != 3 or parts[2] <= 0:
            raise UsageError("--kappa-grid range must be start:stop:step with step > 0")
        start, stop, step = parts
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(count)]
    return _floats(text, "--kappa-grid")


def _filters(items) -> dict[str, float]:
    out = {}
    for item in items or []:
        col, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--filter expects COLUMN=VALUE, got {item!r}")
        out[col.strip()] = _float(val, "--filter")
    return out


def _z_alpha(opts) -> float:
    if opts["alpha"] is not None:
        try:
            return z_from_alpha(_float(opts["alpha"], "--alpha"))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    z = DEFAULT_Z_ALPHA if opts["z_alpha"] is None else _float(opts["z_alpha"], "--z-alpha")
    if z <= 0:
        raise UsageError("--z-alpha must be positive")
    return z


def load_dataset(opts) -> Dataset:
    for key in ("input", "response", "covariates"):
        if opts[key] is None:
            raise UsageError(f"--{key} is required")
    covs = [c.strip() for c in str(opts["covariates"]).split(",") if c.strip()]
    return mio.load_csv(opts["input"], opts["response"], covs, _filters(opts["filter"]))


def resolve_sigma0(opts, d: Dataset) -> tuple[float, str]:
    if opts["sigma0"] is not None:
        return _float(opts["sigma0"], "--sigma0"), "absolute"
    if opts["sigma0_rel"] is not None:
        rho = _float(opts["sigma0_rel"], "--sigma0-rel")
        if d.n < 2:
            raise DataError("relative sigma0 needs at least two observations")
        sd = float(np.std(d.y, ddof=1))
        return (rho * sd) ** 2, f"relative {mio.fmt(rho)} of std(y)={mio.fmt(sd)}"
    raise UsageError("one of --sigma0 or --sigma0-rel is required")


def resolve_S(opts, d: Dataset) -> np.ndarray:
    if opts["kappa_grid"] is not None:
        raise UsageError("--kappa-grid applies to the sweep command only")
    if opts["s_matrix"] is not None:
        return mio.read_matrix(opts["s_matrix"], d.m)
    if opts["s_stddevs"] is not None:
        tau = _floats(opts["s_stddevs"], "--s-stddevs")
        if len(tau) != d.m:
            raise UsageError(f"--s-stddevs needs {d.m} values, got {len(tau)}")
        return ErrorModel.from_stddevs(tau).S
    raise UsageError("one of --s-matrix or --s-stddevs is required")


def _emit(text: str, out) -> None:
    if out:
        mio.atomic_write(out, text)
    else:
        sys.stdout.write(text)


def report_lines(d: Dataset, res, sigma0_source: str) -> list[tuple[str, object]]:
    theta = res.theta
    names = d.column_names or tuple(f"w{j + 1}" for j in range(d.m))
    ols = als_estimate(d, ErrorModel.zero(d.m))
    rows: list[tuple[str, object]] = [("n", d.n), ("m", d.m)]
    rows += [(f"c_hat[{name}]", float(c)) for name, c in zip(names, theta.c_hat)]
    rows += [
        ("sigma_tilde_sq", theta.sigma_tilde_sq),
        ("sigma_hat_sq", theta.sigma_hat_sq),
        ("rss", theta.rss),
        ("r_squared", r_squared(d, theta.c_hat)),
        ("r_squared_ols", r_squared(d, ols.c_hat)),
        ("se_hat", res.se_hat),
        ("sigma0_sq", res.sigma0_sq),
        ("sigma0_source", sigma0_source),
        ("z_alpha", res.z_alpha),
        ("alpha", res.alpha),
        ("T", res.T),
        ("p_value", res.p_value),
        ("decision", "reject H0" if res.reject else "do not reject H0"),
        ("suggested_sigma0_sq", suggest_sigma0(d, theta) if d.n > d.m else None),
        ("gram_singular", theta.gram_singular),
        ("bracket_gap", res.bracket_gap),
    ]
    return rows


def cmd_test(opts) -> int:
    d = load_dataset(opts)
    S = resolve_S(opts, d)
    sigma0_sq, source = resolve_sigma0(opts, d)
    res = memv_test(d, ErrorModel(S, sigma0_sq), _z_alpha(opts))
    text = "".join(f"{k}: {mio.fmt(v)}\n" for k, v in report_lines(d, res, source))
    _emit(text, opts["out"])
    return 0


def _known_block(opts, d: Dataset) -> KnownBlock | None:
    if opts["known_stddevs"] is None:
        return None
    names = list(d.column_names or ())
    idx, sds = [], []
    for item in str(opts["known_stddevs"]).split(","):
        col, sep, val = item.partition("=")
        if not sep or col.strip() not in names:
            raise UsageError(f"--known-stddevs expects COLUMN=SD for selected covariates, got {item!r}")
        idx.append(names.index(col.strip()))
        sds.append(_float(val, "--known-stddevs"))
    return KnownBlock(idx, np.diag(np.square(sds)))


def curve_csv(curve) -> str:
    rows = []
    for pt in curve.points:
        t = pt.test
        rows.append(
            (
                pt.kappa,
                None if t is None else t.p_value,
                None if t is None else t.T,
                None if t is None else pt.A_n,
                None if t is None else t.reject,
                pt.degenerate,
            )
        )
    return mio.write_rows(("kappa", "p_value", "T", "A_n", "reject", "degenerate"), rows)


def cmd_sweep(opts) -> int:
    if opts["s_matrix"] is not None or opts["s_stddevs"] is not None:
        raise UsageError("sweep derives S from --kappa-grid; use --known-stddevs for known blocks")
    d = load_dataset(opts)
    sigma0_sq, _ = resolve_sigma0(opts, d)
    grid = DEFAULT_GRID if opts["kappa_grid"] is None else parse_grid(str(opts["kappa_grid"]))
    curve = sweep(d, sigma0_sq, grid, _z_alpha(opts), _known_block(opts, d))
    _emit(curve_csv(curve), opts["out"])
    svg = opts["svg"] or (str(Path(opts["out"]).with_suffix(".svg")) if opts["out"] else None)
    if svg:
        mio.atomic_write(svg, sweep_svg(curve))
    if opts["out"]:
        fmt_iv = lambda ivs: " ".join(f"[{mio.fmt(a)}, {mio.fmt(b)}]" for a, b in ivs) or "none"  # noqa: E731
        print(f"alpha: {mio.fmt(curve.alpha)}")
        print(f"reject_intervals: {fmt_iv(curve.reject_intervals)}")
        print(f"accept_intervals: {fmt_iv(curve.accept_intervals)}")
    return 0


def grid_spec(opts) -> GridSpec:
    kw = {}
    for key, conv in (
        ("ns", lambda t: tuple(int(v) for v in _floats(t, "--ns"))),
        ("x_error_factors", lambda t: tuple(_floats(t, "--x-error-factors"))),
        ("y_error_factors", lambda t: tuple(_floats(t, "--y-error-factors"))),
        ("pa_levels", lambda t: tuple(_floats(t, "--pa-levels"))),
        ("fs", lambda t: tuple(_floats(t, "--fs"))),
        ("c_true", lambda t: tuple(_floats(t, "--c-true"))),
        ("x3_coef", lambda t: _float(t, "--x3-coef")),
        ("replications", lambda t: int(_float(t, "--replications"))),
    ):
        if opts[key] is not None:
            kw[key] = conv(opts[key])
    kw["z_alpha"] = _z_alpha(opts)
    try:
        return GridSpec(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def table1_csv(result) -> str:
    t1 = result.table1()
    ns = result.ns
    rows = []
    for indicator in ("rejection_rate", "mean_r2", "type2_rate", "mean_p", "corr_p_reject", "corr_p_r2", "corr_p_type2"):
        for stratum in STRATA:
            vals = t1[(indicator, stratum)]
            rows.append((indicator, stratum, *(vals[n] for n in ns)))
    return mio.write_rows(("indicator", "stratum", *(f"n={n}" for n in ns)), rows)


def table2_csv(result) -> str:
    rows = [
        (factor, level, s["rejection_rate"], s["mean_r2"], s["type2_rate"], s["mean_p"])
        for factor, level, s in result.table2()
    ]
    return mio.write_rows(("factor", "level", "rejection_rate", "mean_r2", "type2_rate", "mean_p"), rows)


def cells_csv(result) -> str:
    rows = []
    for c in result.cells:
        cfg = c.config
        rows.append(
            (cfg.n, cfg.x_error_factor, cfg.y_error_factor, cfg.pa_level, cfg.inclusion, cfg.f,
             cfg.replications, c.rejection_rate, c.type1_rate, c.type2_rate, c.mean_r2, c.mean_p)
        )
    header = ("n", "x_error_factor", "y_error_factor", "pa_level", "inclusion", "f", "replications",
              "rejection_rate", "type1_rate", "type2_rate", "mean_r2", "mean_p")
    return mio.write_rows(header, rows)


def cmd_simulate(opts) -> int:
    if not opts["out"]:
        raise UsageError("simulate needs --out DIRECTORY")
    spec = grid_spec(opts)
    seed = 0 if opts["seed"] is None else int(opts["seed"])
    workers = 1 if opts["workers"] is None else int(opts["workers"])
    result = run_grid(spec, seed, workers)
    out = Path(opts["out"])
    mio.atomic_write(out / "table1.csv", table1_csv(result))
    mio.atomic_write(out / "table2.csv", table2_csv(result))
    mio.atomic_write(out / "cells.csv", cells_csv(result))
    return 0


def cmd_suggest(opts) -> int:
    d = load_dataset(opts)
    S = np.zeros((d.m, d.m))
    if opts["s_matrix"] is not None or opts["s_stddevs"] is not None:
        S = resolve_S(opts, d)
    theta = als_estimate(d, ErrorModel(S))
    s0 = suggest_sigma0(d, theta)
    sd = float(np.std(d.y, ddof=1)) if d.n > 1 else float("nan")
    text = (
        f"suggested_sigma0_sq: {mio.fmt(s0)}\n"
        f"relative_error: {mio.fmt(np.sqrt(s0) / sd if sd > 0 else None)}\n"
    )
    _emit(text, opts["out"])
    return 0


COMMANDS = {"test": cmd_test, "sweep": cmd_sweep, "simulate": cmd_simulate, "suggest": cmd_suggest}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        opts = merge_config(args)
        return COMMANDS[args.command](opts)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"memv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DegenerateResidualError as exc:
        print(f"memv: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (DataError, OSError) as exc:
        print(f"memv: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
