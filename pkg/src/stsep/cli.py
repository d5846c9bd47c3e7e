"""
Command-line interface.

Subcommands ``simulate``, ``estimate``, ``test``, ``ci`` and ``reproduce``.
Every command reads either a field CSV (``--input``) or simulates one from
``--model``.  Exit codes: 0 success / not rejected, 3 rejected, 2 usage or
input-format error, 1 any other failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, covmodels, estimator, fieldgen, inference, montecarlo
from .errors import CapExceededError, CsvFormatError, InvalidInputError, StsepError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_REJECT = 3

DEFAULTS = {
    "model": None,
    "input": None,
    "n": 100,
    "T": 100,
    "scenario": 1,
    "grid": None,
    "alpha": 0.05,
    "psi": None,
    "delta": 0.0,
    "B": inference.DEFAULT_B,
    "seed": 0,
    "threads": 1,
    "bandwidth": None,
    "out": None,
    "method": "auto",
    "kernel": "epanechnikov",
    "test": "exact-pt",
    "quantile_mode": "montecarlo",
    "k": 1,
    "measure": "svd",
    "table": None,
    "reps": 100,
    "cap": fieldgen.DENSE_CAP,
}


class UsageError(Exception):
    pass


def _add(p, *flags, dest, help, **kw):
    default = DEFAULTS[dest]
    shown = "none" if default is None else default
    p.add_argument(*flags, dest=dest, default=None, help=f"{help} (default: {shown})", **kw)


def _data_flags(p):
    _add(p, "--model", dest="model", help="model id 0-3 or JSON model description for simulation mode")
    _add(p, "--input", dest="input", help="field CSV with header loc_id,x,y,t,value (data mode)")
    _add(p, "--n", dest="n", type=int, help="number of locations in simulation mode")
    _add(p, "--T", dest="T", type=int, help="number of time points in simulation mode")
    _add(p, "--seed", dest="seed", type=int, help="root random seed")
    _add(p, "--method", dest="method", choices=["auto", "kronecker", "dense", "toeplitz"],
         help="field simulation method")
    _add(p, "--cap", dest="cap", type=int, help="largest n*T accepted by the dense and toeplitz simulators")


def _estimate_flags(p):
    _add(p, "--scenario", dest="scenario", type=int, choices=[1, 2], help="lag grid scenario")
    _add(p, "--grid", dest="grid", help='JSON grid file {"h": [[h1, h2], ...], "v": [...]}')
    _add(p, "--bandwidth", dest="bandwidth", type=float, help="fixed bandwidth; the rule bandwidth when omitted")
    _add(p, "--kernel", dest="kernel", choices=["epanechnikov", "triangular", "uniform"], help="smoothing kernel")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stsep",
        description="Estimate and test separability of spatio-temporal covariances.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON file of option values; explicit flags take precedence")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("simulate", help="simulate a field and write field and design CSV files")
    _data_flags(p)
    _add(p, "--out", dest="out", help="field CSV path; the design goes to <stem>_design.csv")

    p = sub.add_parser("estimate", help="estimate the grid covariance matrix (JSON on stdout)")
    _data_flags(p)
    _estimate_flags(p)
    _add(p, "--out", dest="out", help="also write the JSON to this path")

    p = sub.add_parser("test", help="run a separability test; exit 3 on rejection")
    _data_flags(p)
    _estimate_flags(p)
    _add(p, "--test", dest="test", choices=list(inference.TEST_KINDS), help="test to run")
    _add(p, "--alpha", dest="alpha", type=float, help="nominal level")
    _add(p, "--psi", dest="psi", help="comma-separated direction for the partial-trace test")
    _add(p, "--delta", dest="delta", type=float, help="threshold of the relevant tests")
    _add(p, "--B", dest="B", type=int, help="Monte-Carlo draws for the critical value")
    _add(p, "--quantile-mode", dest="quantile_mode", choices=["montecarlo", "chisquare"],
         help="calibration of the SVD-type tests")
    _add(p, "--k", dest="k", type=int, help="rank of the rank-k test")
    _add(p, "--measure", dest="measure", choices=["svd", "pt"], help="measure used by the relevant tests")
    _add(p, "--out", dest="out", help="also write the JSON report to this path")

    p = sub.add_parser("ci", help="confidence interval for a deviation measure")
    _data_flags(p)
    _estimate_flags(p)
    _add(p, "--measure", dest="measure", choices=["svd", "pt"], help="deviation measure")
    _add(p, "--alpha", dest="alpha", type=float, help="one minus the confidence level")
    _add(p, "--psi", dest="psi", help="comma-separated direction for the partial-trace measure")
    _add(p, "--out", dest="out", help="also write the JSON interval to this path")

    p = sub.add_parser("reproduce", help="rejection-rate table of the simulation study (CSV)")
    p.add_argument("--table", dest="table", type=int, choices=sorted(montecarlo.STUDY_TABLES), required=True,
                   help="table number: 1 null, 2-4 alternatives")
    _add(p, "--reps", dest="reps", type=int, help="replications per row")
    _add(p, "--seed", dest="seed", type=int, help="root random seed")
    _add(p, "--threads", dest="threads", type=int, help="worker processes")
    _add(p, "--B", dest="B", type=int, help="Monte-Carlo draws for the partial-trace critical value")
    _add(p, "--alpha", dest="alpha", type=float, help="nominal level")
    _add(p, "--cap", dest="cap", type=int, help="rows with n*T above this are skipped")
    _add(p, "--out", dest="out", help="CSV path (stdout when omitted); a JSON manifest is written next to it")
    return parser


def _resolve(args):
    config = {}
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(config, dict):
            raise UsageError("config file must hold a JSON object")
    opts = dict(DEFAULTS)
    for key in DEFAULTS:
        if key in config:
            opts[key] = config[key]
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = val
    opts["command"] = args.command
    return opts


def _parse_model(spec):
    text = str(spec).strip()
    if text.isdigit():
        return covmodels.builtin_model(int(text))
    path = Path(text)
    if not text.startswith("{") and path.exists():
        text = path.read_text()
    try:
        return covmodels.model_from_json(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"cannot parse model {spec!r}: {exc}") from None


def _sample(opts):
    if (opts["input"] is None) == (opts["model"] is None):
        raise UsageError("give exactly one of --input and --model")
    if opts["input"] is not None:
        return fieldgen.read_field_csv(opts["input"]), None
    model = _parse_model(opts["model"])
    n, T, seed = int(opts["n"]), int(opts["T"]), int(opts["seed"])
    loc_seed = np.random.SeedSequence(seed, spawn_key=(0,))
    field_seed = np.random.SeedSequence(seed, spawn_key=(1,))
    design = fieldgen.sample_locations(fieldgen.UniformSquare(math.sqrt(n)), n, loc_seed)
    sample = fieldgen.simulate_field(model, design, T, field_seed, method=opts["method"], cap=int(opts["cap"]))
    return sample, model


def _grid(opts, n):
    if opts["grid"] is not None:
        try:
            return covmodels.LagGrid.from_dict(json.loads(Path(opts["grid"]).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read grid {opts['grid']}: {exc}") from None
    return covmodels.scenario_grid(int(opts["scenario"]), n)


def _bandwidth(opts, sample, model, grid, kernel, use_pt):
    if opts["bandwidth"] is not None:
        return float(opts["bandwidth"])
    M, N = grid.shape
    if model is not None:
        m2, f = model.variance, covmodels.f_mn(model, grid)
    else:
        m2 = float(np.mean(sample.X ** 2))
        f = estimator.estimate_f_mn(sample, grid, kernel)
    rule = estimator.bandwidth_pt if use_pt else estimator.bandwidth_svd
    return rule(sample.n, sample.T, M, N, m2, f)


def _psi(opts):
    if opts["psi"] is None:
        return None
    try:
        return np.array([float(x) for x in str(opts["psi"]).split(",")])
    except ValueError:
        raise UsageError(f"cannot parse --psi {opts['psi']!r}") from None


def _estimate(opts, use_pt):
    sample, model = _sample(opts)
    grid = _grid(opts, sample.n)
    kernel = estimator.KernelSpec(opts["kernel"])
    b = _bandwidth(opts, sample, model, grid, kernel, use_pt)
    return estimator.estimate_cov_matrix(sample, grid, b, kernel)


def _emit(text, out):
    print(text)
    if out:
        Path(out).write_text(text + "\n")


def cmd_simulate(opts):
    if not opts["out"]:
        raise UsageError("simulate needs --out")
    sample, _ = _sample(opts)
    out = Path(opts["out"])
    fieldgen.write_field_csv(sample, out)
    fieldgen.write_design_csv(sample.design, out.with_name(out.stem + "_design.csv"))
    return EXIT_OK


def cmd_estimate(opts):
    est = _estimate(opts, use_pt=False)
    _emit(est.to_json(), opts["out"])
    return EXIT_OK


def cmd_test(opts):
    kind = opts["test"]
    use_pt = kind == "exact-pt" or (kind.startswith("relevant") and opts["measure"] == "pt")
    est = _estimate(opts, use_pt)
    spec = inference.TestSpec(
        kind,
        float(opts["alpha"]),
        _psi(opts),
        int(opts["B"]),
        opts["quantile_mode"],
        np.random.SeedSequence(int(opts["seed"]), spawn_key=(2,)),
        k=int(opts["k"]),
        delta=float(opts["delta"]),
        measure=opts["measure"],
    )
    report = inference.run_test(est, spec)
    _emit(report.to_json(), opts["out"])
    return EXIT_REJECT if report.reject else EXIT_OK


def cmd_ci(opts):
    est = _estimate(opts, use_pt=opts["measure"] == "pt")
    if opts["measure"] == "pt":
        ci = inference.ci_pt(est, _psi(opts), float(opts["alpha"]))
    else:
        ci = inference.ci_svd(est, float(opts["alpha"]))
    _emit(ci.to_json(), opts["out"])
    return EXIT_OK


def cmd_reproduce(opts):
    tests = montecarlo.default_tests(B=int(opts["B"]), alpha=float(opts["alpha"]))
    table = montecarlo.run_table(
        int(opts["table"]), int(opts["seed"]), int(opts["reps"]),
        tests=tests, max_threads=int(opts["threads"]), cap=int(opts["cap"]),
    )
    if opts["out"]:
        montecarlo.emit_csv(table, opts["out"])
        montecarlo.write_manifest(table, str(opts["out"]) + ".json", {"table": int(opts["table"])})
    else:
        montecarlo.emit_csv(table, "-")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "test": cmd_test,
    "ci": cmd_ci,
    "reproduce": cmd_reproduce,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = _resolve(args)
        return COMMANDS[args.command](opts)
    except (UsageError, CsvFormatError, InvalidInputError) as exc:
        print(f"stsep: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CapExceededError as exc:
        print(f"stsep: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (StsepError, OSError) as exc:
        print(f"stsep: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
