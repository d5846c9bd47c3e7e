"""
Replicated simulation experiments producing rejection-rate tables.

Every replication draws its random numbers from
``SeedSequence(root_seed, spawn_key=(row, rep, stream))``, so results are a
pure function of the configuration and do not depend on how replications are
scheduled across workers.  BLAS is pinned to one thread inside replications
for the same reason.
"""
from __future__ import annotations

import csv
import json
import math
import platform
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, covmodels, estimator, fieldgen, inference
from .errors import ExperimentUnstableError, InvalidInputError, StsepError

__all__ = [
    "ExperimentConfig",
    "TableRow",
    "Replication",
    "RejectionTable",
    "STUDY_ROWS",
    "STUDY_TABLES",
    "default_tests",
    "replication_seed",
    "run_experiment",
    "run_null_suite",
    "run_power_suite",
    "run_table",
    "emit_csv",
    "read_csv",
    "write_manifest",
    "CSV_HEADER",
    "MAX_FAILURE_FRACTION",
]

#: ``(n, T)`` rows of the published tables.
STUDY_ROWS = ((75, 100), (100, 100), (150, 100), (100, 200), (150, 200), (200, 200), (200, 250), (250, 250))

#: Table number -> model id (table 1 is the separable null).
STUDY_TABLES = {1: 0, 2: 1, 3: 2, 4: 3}

CSV_HEADER = ["n", "T", "scenario", "test", "rate", "se", "reps", "seconds"]
SKIP_MARK = "—"
MAX_FAILURE_FRACTION = 0.05

_STREAM_LOCATIONS = 0
_STREAM_FIELD = 1
_STREAM_TESTS = 2


def default_tests(B=inference.DEFAULT_B, alpha=0.05, svd_mode="chisquare"):
    """The two exact tests of the simulation study."""
    return (
        inference.TestSpec("exact-pt", alpha, B=B),
        inference.TestSpec("exact-svd", alpha, B=B, quantile_mode=svd_mode),
    )


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """One ``(model, n, T, scenario)`` cell of a simulation study.

    ``bandwidth_mode`` is ``"rule"`` (partial-trace tests use the PT rule,
    all others the SVD rule), ``"rulePT"``, ``"ruleSVD"`` or a positive
    float for a fixed bandwidth.
    """

    model: covmodels.CovarianceModel
    n: int
    T: int
    scenario: int = 1
    tests: tuple = field(default_factory=default_tests)
    reps: int = 100
    root_seed: int = 0
    max_threads: int = 1
    bandwidth_mode: object = "rule"
    row: int = 0
    method: str = "auto"
    kernel: estimator.KernelSpec = estimator.EPANECHNIKOV
    cap: int = fieldgen.DENSE_CAP

    def __post_init__(self):
        if int(self.reps) != self.reps or self.reps < 1:
            raise InvalidInputError("reps must be a positive integer")
        if self.n < 10 or self.T < 10:
            raise InvalidInputError("n and T must be at least 10")
        if self.scenario not in (1, 2):
            raise InvalidInputError("scenario must be 1 or 2")
        if self.max_threads < 1:
            raise InvalidInputError("max_threads must be >= 1")
        mode = self.bandwidth_mode
        if isinstance(mode, str):
            if mode not in ("rule", "rulePT", "ruleSVD"):
                raise InvalidInputError(f"unknown bandwidth mode {mode!r}")
        elif not (isinstance(mode, (int, float)) and mode > 0):
            raise InvalidInputError("fixed bandwidth must be > 0")
        object.__setattr__(self, "tests", tuple(self.tests))

    @property
    def grid(self):
        return covmodels.scenario_grid(self.scenario, self.n)

    def bandwidths(self):
        """Bandwidth per test, using the model's variance and derivative ratio."""
        mode = self.bandwidth_mode
        if not isinstance(mode, str):
            return [float(mode)] * len(self.tests)
        grid = self.grid
        M, N = grid.shape
        m2 = self.model.variance
        f = covmodels.f_mn(self.model, grid)
        b_pt = estimator.bandwidth_pt(self.n, self.T, M, N, m2, f)
        b_svd = estimator.bandwidth_svd(self.n, self.T, M, N, m2, f)
        if mode == "rulePT":
            return [b_pt] * len(self.tests)
        if mode == "ruleSVD":
            return [b_svd] * len(self.tests)
        return [b_pt if _uses_pt(t) else b_svd for t in self.tests]

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "n": self.n,
            "T": self.T,
            "scenario": self.scenario,
            "tests": [t.to_dict() for t in self.tests],
            "reps": self.reps,
            "rootSeed": self.root_seed,
            "maxThreads": self.max_threads,
            "bandwidthMode": self.bandwidth_mode,
            "row": self.row,
            "method": self.method,
            "kernel": self.kernel.name,
            "cap": self.cap,
        }


def _uses_pt(spec):
    return spec.kind == "exact-pt" or (spec.kind.startswith("relevant") and spec.measure == "pt")


def replication_seed(root_seed, row, rep, stream):
    """Counter-derived seed of one random stream of one replication."""
    return np.random.SeedSequence(int(root_seed), spawn_key=(int(row), int(rep), int(stream)))


@dataclass(frozen=True, eq=False)
class Replication:
    """Outcome of one replication; ``estimates`` maps bandwidth -> CovEstimate."""

    rep: int
    rejects: tuple = ()
    statistics: tuple = ()
    estimates: dict = field(default_factory=dict)
    test_bandwidths: tuple = ()
    error: str | None = None

    @property
    def ok(self):
        return self.error is None

    def estimate_for(self, test_index):
        return self.estimates[self.test_bandwidths[test_index]]


@dataclass(frozen=True)
class TableRow:
    n: int
    T: int
    scenario: int
    test: str
    rate: float | None
    se: float | None
    reps: int
    seconds: float

    @property
    def skipped(self):
        return self.rate is None


@dataclass(eq=False)
class RejectionTable:
    rows: list = field(default_factory=list)
    replications: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    configs: list = field(default_factory=list)

    def extend(self, other):
        self.rows.extend(other.rows)
        self.replications.update(other.replications)
        self.failures.update(other.failures)
        self.configs.extend(other.configs)
        return self

    def rate(self, n, T, scenario, test):
        for r in self.rows:
            if (r.n, r.T, r.scenario, r.test) == (n, T, scenario, test):
                return r.rate
        raise KeyError((n, T, scenario, test))

    def fingerprint(self):
        """Everything except wall time, for determinism comparisons."""
        rows = [(r.n, r.T, r.scenario, r.test, r.rate, r.se, r.reps) for r in self.rows]
        reps = {
            key: [(x.rep, x.rejects, x.statistics, x.error) for x in val]
            for key, val in sorted(self.replications.items())
        }
        return rows, reps


def _one_replication(config, rep):
    grid = config.grid
    try:
        with threadpool_limits(1):
            design = fieldgen.sample_locations(
                fieldgen.UniformSquare(math.sqrt(config.n)),
                config.n,
                replication_seed(config.root_seed, config.row, rep, _STREAM_LOCATIONS),
            )
            sample = fieldgen.simulate_field(
                config.model,
                design,
                config.T,
                replication_seed(config.root_seed, config.row, rep, _STREAM_FIELD),
                method=config.method,
                cap=config.cap,
            )
            bws = config.bandwidths()
            estimates = {}
            for b in bws:
                if b not in estimates:
                    estimates[b] = estimator.estimate_cov_matrix(sample, grid, b, config.kernel)
            rejects, stats = [], []
            for k, (spec, b) in enumerate(zip(config.tests, bws)):
                seed = replication_seed(config.root_seed, config.row, rep, _STREAM_TESTS + k)
                report = inference.run_test(estimates[b], replace(spec, seed=seed))
                rejects.append(report.reject)
                stats.append((report.statistic, report.scaled_statistic, report.critical_value))
    except (StsepError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return Replication(rep, error=f"{type(exc).__name__}: {exc}")
    return Replication(rep, tuple(rejects), tuple(stats), estimates, tuple(bws))


def _worker(args):
    return _one_replication(*args)


def _replicate(config):
    jobs = [(config, r) for r in range(config.reps)]
    if config.max_threads == 1:
        return [_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=config.max_threads) as pool:
        return list(pool.map(_worker, jobs, chunksize=1))


def run_experiment(config):
    """Run all replications of one configuration.

    Returns
    -------
    RejectionTable
        One row per test.  Rates are over the successful replications.

    Raises
    ------
    ExperimentUnstableError
        When more than 5 % of the replications fail.
    """
    start = time.perf_counter()
    reps = _replicate(config)
    seconds = time.perf_counter() - start
    good = [r for r in reps if r.ok]
    failures = len(reps) - len(good)
    if failures > MAX_FAILURE_FRACTION * len(reps):
        raise ExperimentUnstableError(
            f"{failures} of {len(reps)} replications failed; first: {next(r.error for r in reps if not r.ok)}",
            failures=failures,
            reps=len(reps),
        )
    key = (config.n, config.T, config.scenario)
    table = RejectionTable(replications={key: reps}, failures={key: failures}, configs=[config])
    R = len(good)
    for k, spec in enumerate(config.tests):
        p = sum(r.rejects[k] for r in good) / R
        table.rows.append(
            TableRow(config.n, config.T, config.scenario, spec.label(), p, math.sqrt(p * (1 - p) / R), R, seconds)
        )
    return table


def _suite(model, seed, R, rows, scenarios, tests, max_threads, cap, method):
    if R < 50:
        raise InvalidInputError("suites need at least 50 replications per row")
    table = RejectionTable()
    index = 0
    for n, T in rows:
        for scenario in scenarios:
            if n * T > cap:
                for spec in tests:
                    table.rows.append(TableRow(n, T, scenario, spec.label(), None, None, 0, 0.0))
            else:
                cfg = ExperimentConfig(
                    model, n, T, scenario, tests, R, seed, max_threads, "rule", index, method, cap=cap
                )
                table.extend(run_experiment(cfg))
            index += 1
    return table


def run_null_suite(seed, R, rows=STUDY_ROWS, scenarios=(1, 2), tests=None, max_threads=1,
                   cap=fieldgen.DENSE_CAP, method="auto"):
    """Rejection rates under the separable exponential model.

    Rows with ``n * T`` above ``cap`` are emitted as skipped.
    """
    tests = default_tests() if tests is None else tests
    return _suite(covmodels.builtin_model(0), seed, R, rows, scenarios, tests, max_threads, cap, method)


def run_power_suite(model_id, seed, R, rows=STUDY_ROWS, scenarios=(1, 2), tests=None, max_threads=1,
                    cap=fieldgen.DENSE_CAP, method="auto"):
    """Rejection rates under one of the three non-separable alternatives."""
    if model_id not in (1, 2, 3):
        raise InvalidInputError(f"power suite model must be 1, 2 or 3, got {model_id!r}")
    tests = default_tests() if tests is None else tests
    return _suite(covmodels.builtin_model(model_id), seed, R, rows, scenarios, tests, max_threads, cap, method)


def run_table(table_id, seed, R, **kw):
    """Reproduce one published table (1 = null, 2-4 = alternatives)."""
    if table_id not in STUDY_TABLES:
        raise InvalidInputError(f"table must be one of {sorted(STUDY_TABLES)}, got {table_id!r}")
    if table_id == 1:
        return run_null_suite(seed, R, **kw)
    return run_power_suite(STUDY_TABLES[table_id], seed, R, **kw)


def emit_csv(table, path):
    """Write the table; rates and standard errors with four decimals.

    ``path="-"`` writes to standard output.
    """
    if path == "-":
        _write_rows(table, sys.stdout)
        return
    try:
        with open(path, "w", newline="") as fh:
            _write_rows(table, fh)
    except OSError as exc:
        raise OSError(f"cannot write table to {path}: {exc.strerror}") from exc


def _write_rows(table, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in table.rows:
        rate = SKIP_MARK if r.skipped else f"{r.rate:.4f}"
        se = SKIP_MARK if r.skipped else f"{r.se:.4f}"
        w.writerow([r.n, r.T, r.scenario, r.test, rate, se, r.reps, f"{r.seconds:.2f}"])


def read_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            skipped = rec["rate"] == SKIP_MARK
            rows.append(TableRow(
                int(rec["n"]), int(rec["T"]), int(rec["scenario"]), rec["test"],
                None if skipped else float(rec["rate"]),
                None if skipped else float(rec["se"]),
                int(rec["reps"]), float(rec["seconds"]),
            ))
    return RejectionTable(rows=rows)


def _git_hash():
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


def write_manifest(table, path, extra=None):
    """JSON provenance record: configurations, versions, failures."""
    doc = {
        "version": __version__,
        "git": _git_hash(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "configs": [c.to_dict() for c in table.configs],
        "failures": [{"n": k[0], "T": k[1], "scenario": k[2], "count": v} for k, v in table.failures.items()],
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2))
