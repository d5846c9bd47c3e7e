"""Acceptance criteria, each printing one PASS/FAIL line.

Criteria 1-5, 8, 11 and 12 share simulation runs at (n, T) = (100, 100)
that are computed once per module.  On a single core the module takes
well over an hour.
"""
import math

import numpy as np
import pytest

from oracles import als_rank1_residual, brute_force_estimate
from stsep import covmodels as cm
from stsep import estimator as est
from stsep import fieldgen as fg
from stsep import inference as inf
from stsep import measures as ms
from stsep import montecarlo as mc

pytestmark = pytest.mark.acceptance

ROOT_SEED = 20240601
N = T = 100
ROW = mc.STUDY_ROWS.index((N, T))
NULL_REPS = 500
POWER_REPS = 300
EXPERIMENTS = {"null": (0, NULL_REPS), "model3": (3, POWER_REPS), "model1": (1, POWER_REPS), "model2": (2, POWER_REPS)}


def report(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def config(name, threads=1):
    model_id, reps = EXPERIMENTS[name]
    return mc.ExperimentConfig(
        cm.builtin_model(model_id), N, T, 1, mc.default_tests(), reps, ROOT_SEED,
        max_threads=threads, row=ROW,
    )


@pytest.fixture(scope="module")
def runs():
    return {name: mc.run_experiment(config(name)) for name in EXPERIMENTS}


def rates(table):
    return {r.test: r.rate for r in table.rows}


def test_c01_null_level_pt(runs, capsys):
    r = rates(runs["null"])["exact-pt"]
    report(capsys, 1, 0.025 <= r <= 0.08, f"PT null rate {r:.4f}, accept [0.025, 0.080]")


def test_c02_null_level_svd(runs, capsys):
    r = rates(runs["null"])["exact-svd-chi2"]
    report(capsys, 2, 0.025 <= r <= 0.08, f"SVD chi2 null rate {r:.4f}, accept [0.025, 0.080]")


def test_c03_power_gneiting_wind(runs, capsys):
    r = rates(runs["model3"])
    ok = r["exact-pt"] >= 0.70 and r["exact-svd-chi2"] >= 0.70
    report(capsys, 3, ok, f"model 3 power PT {r['exact-pt']:.4f} SVD {r['exact-svd-chi2']:.4f}, accept both >= 0.70")


def test_c04_power_extended_gneiting(runs, capsys):
    r = rates(runs["model1"])
    ok = r["exact-pt"] >= 0.55 and r["exact-svd-chi2"] >= 0.50
    report(capsys, 4, ok, f"model 1 power PT {r['exact-pt']:.4f} SVD {r['exact-svd-chi2']:.4f}, accept >= 0.55 / 0.50")


def test_c05_power_product_sum(runs, capsys):
    r = rates(runs["model2"])
    ok = all(0.30 <= r[t] <= 0.75 for t in r)
    report(capsys, 5, ok, f"model 2 power PT {r['exact-pt']:.4f} SVD {r['exact-svd-chi2']:.4f}, accept [0.30, 0.75]")


def test_c06_projector_chi2_identity(capsys):
    rng = np.random.default_rng(6)
    worst, total, bad = 0.0, 0, 0
    for M in (3, 5):
        for alpha in (0.01, 0.05, 0.10):
            for _ in range(20):
                C = rng.standard_normal((M, M)) + 1
                tau2 = rng.uniform(0.5, 2)
                q_mc, se = inf.simulate_quantile_svd(C, tau2, alpha, 4000, seed=rng.integers(2 ** 32))
                q_chi, _ = inf.simulate_quantile_svd(C, tau2, alpha, 4000, mode="chisquare")
                z = abs(q_mc - q_chi) / se
                worst = max(worst, z)
                bad += z > 3
                total += 1
    report(capsys, 6, bad == 0, f"{bad}/{total} comparisons beyond 3 MC SE (worst {worst:.2f} SE)")


def test_c07_eckart_young(capsys):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        C = rng.standard_normal(tuple(rng.integers(2, 7, size=2)))
        worst = max(worst, abs(ms.d_rank1(C) - als_rank1_residual(C, starts=20)))
    report(capsys, 7, worst <= 1e-8, f"max |d_rank1 - ALS oracle| = {worst:.2e} over 200 matrices")


def _ordering_violations(C):
    chain = [ms.d_psi(C), ms.d_rank1(C)] + [ms.d_rank_k(C, k) for k in range(2, min(C.shape))]
    tol = 1e-10 * float(np.sum(C * C))
    return sum(a < b - tol for a, b in zip(chain, chain[1:])) + (chain[-1] < 0)


def test_c08_ordering(runs, capsys):
    rng = np.random.default_rng(8)
    bad = sum(_ordering_violations(rng.standard_normal((3, 3))) for _ in range(1000))
    count = 0
    for table in runs.values():
        for reps in table.replications.values():
            for rep in reps:
                for E in rep.estimates.values():
                    bad += _ordering_violations(E.Chat)
                    count += 1
    report(capsys, 8, bad == 0, f"{bad} violations over 1000 random and {count} estimated matrices")


def test_c09_brute_force(capsys):
    worst = 0.0
    sc = est.ScalingSpec(3.0, 1.0)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d = fg.sample_locations(fg.UniformSquare(3), 10, rng)
        s = fg.FieldSample(rng.standard_normal((10, 40)), d)
        rng = np.random.default_rng(1000 + seed)
        h, v, b = rng.uniform(-1.5, 1.5, 2), rng.uniform(0, 6), rng.uniform(0.08, 0.4)
        got = est.estimate_cov_point(s, h, v, b, est.EPANECHNIKOV, sc)
        want = brute_force_estimate(s.X, s.locations, h, v, b, 3.0, 1.0)
        worst = max(worst, abs(got - want) / max(abs(want), 1e-2))
    report(capsys, 9, worst <= 1e-12, f"max relative difference {worst:.2e} over 20 seeds")


def test_c10_simulator_moments(capsys):
    model = cm.builtin_model(0)
    n = T = 15
    d = fg.sample_locations(fg.UniformSquare(math.sqrt(n)), n, seed=10)
    probes = [(0, 0, 0), (0, 1, 0), (0, 0, 1), (1, 2, 1), (2, 3, 2)]
    worst = 0.0
    for method in ("kronecker", "dense"):
        rng = np.random.default_rng(100)
        prods = np.empty((2000, len(probes)))
        for r in range(2000):
            X = fg.simulate_field(model, d, T, rng, method=method).X
            prods[r] = [X[i, 0] * X[j, lag] for i, j, lag in probes]
        for k, (i, j, lag) in enumerate(probes):
            h = d.locations[i] - d.locations[j]
            truth = cm.evaluate(model, (h[0], h[1], lag))
            z = abs(prods[:, k].mean() - truth) / (prods[:, k].std(ddof=1) / math.sqrt(2000))
            worst = max(worst, z)
    report(capsys, 10, worst < 3, f"largest deviation {worst:.2f} MC SE over 5 probes x 2 paths")


def test_c11_ci_coverage(runs, capsys):
    model = cm.builtin_model(3)
    grid = cm.scenario_grid(1, N)
    truth = ms.d_rank1(cm.build_cov_matrix(model, grid))
    svd_index = [t.kind for t in config("model3").tests].index("exact-svd")
    covered = total = 0
    for rep in runs["model3"].replications[(N, T, 1)]:
        if not rep.ok:
            continue
        ci = inf.ci_svd(rep.estimate_for(svd_index), 0.05)
        covered += ci.lo <= truth <= ci.hi
        total += 1
    cov = covered / total
    report(capsys, 11, cov >= 0.88, f"coverage {cov:.4f} of true D = {truth:.3e} over {total} reps, accept >= 0.88")


def test_c12_thread_determinism(runs, capsys):
    same = {name: mc.run_experiment(config(name, threads=4)).fingerprint() == runs[name].fingerprint()
            for name in EXPERIMENTS}
    report(capsys, 12, all(same.values()), f"identical under 1 vs 4 workers: {same}")
