import math

import numpy as np
import pytest

from stsep import covmodels as cm
from stsep import inference as inf
from stsep import montecarlo as mc
from stsep.errors import ExperimentUnstableError, InvalidInputError

FAST_TESTS = mc.default_tests(B=200)


def small_config(**kw):
    base = dict(model=cm.builtin_model(3), n=20, T=20, tests=FAST_TESTS, reps=6, root_seed=5)
    base.update(kw)
    return mc.ExperimentConfig(**base)


def test_single_replication_deterministic():
    a = mc.run_experiment(small_config(reps=1))
    b = mc.run_experiment(small_config(reps=1))
    assert a.fingerprint() == b.fingerprint()


def test_thread_count_invariance():
    a = mc.run_experiment(small_config(max_threads=1))
    b = mc.run_experiment(small_config(max_threads=4))
    assert a.fingerprint() == b.fingerprint()


def test_binomial_se_and_rates():
    t = mc.run_experiment(small_config(model=cm.builtin_model(2), reps=10))
    for row in t.rows:
        assert 0 <= row.rate <= 1
        assert row.se == pytest.approx(math.sqrt(row.rate * (1 - row.rate) / row.reps), abs=1e-12)
    assert [r.test for r in t.rows] == ["exact-pt", "exact-svd-chi2"]


def test_replication_records_estimates():
    t = mc.run_experiment(small_config(reps=2))
    rep = t.replications[(20, 20, 1)][0]
    assert rep.ok and len(rep.rejects) == 2
    assert rep.estimate_for(0).b != rep.estimate_for(1).b


def test_bandwidth_modes():
    cfg = small_config()
    b_pt, b_svd = cfg.bandwidths()
    assert small_config(bandwidth_mode="rulePT").bandwidths() == [b_pt, b_pt]
    assert small_config(bandwidth_mode="ruleSVD").bandwidths() == [b_svd, b_svd]
    assert small_config(bandwidth_mode=0.2).bandwidths() == [0.2, 0.2]
    with pytest.raises(InvalidInputError):
        small_config(bandwidth_mode="bogus")


def test_unstable_experiment():
    with pytest.raises(ExperimentUnstableError) as info:
        mc.run_experiment(small_config(bandwidth_mode=1e-6, reps=4))
    assert info.value.failures == 4


def test_config_validation():
    with pytest.raises(InvalidInputError):
        small_config(reps=0)
    with pytest.raises(InvalidInputError):
        small_config(n=5)


def test_seed_derivation_injective():
    seen = set()
    for row in range(40):
        for rep in range(25):
            for stream in range(4):
                seen.add(tuple(mc.replication_seed(7, row, rep, stream).generate_state(4)))
    assert len(seen) == 40 * 25 * 4


def test_suite_rows_and_skip_marker(tmp_path):
    rows = ((20, 20), (25, 20), (300, 300))
    t = mc.run_null_suite(3, 50, rows=rows, tests=FAST_TESTS, cap=1000)
    assert len([r for r in t.rows if not r.skipped]) == 2 * 2 * 2
    assert len([r for r in t.rows if r.skipped]) == 1 * 2 * 2
    path = tmp_path / "t.csv"
    mc.emit_csv(t, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "n,T,scenario,test,rate,se,reps,seconds"
    assert len(lines) == 1 + len(t.rows)
    assert sum("—" in line for line in lines) == 4
    back = mc.read_csv(path)
    for a, b in zip(t.rows, back.rows):
        if not a.skipped:
            assert b.rate == pytest.approx(a.rate, abs=5e-5)
    manifest = tmp_path / "m.json"
    mc.write_manifest(t, manifest)
    assert '"rootSeed": 3' in manifest.read_text()


def test_suite_requires_enough_reps():
    with pytest.raises(InvalidInputError):
        mc.run_null_suite(1, 10)
    with pytest.raises(InvalidInputError):
        mc.run_power_suite(4, 1, 60)


def test_emit_empty(tmp_path):
    path = tmp_path / "e.csv"
    mc.emit_csv(mc.RejectionTable(), path)
    assert path.read_text() == "n,T,scenario,test,rate,se,reps,seconds\n"


def test_emit_unwritable():
    with pytest.raises(OSError, match="/nonexistent/dir/x.csv"):
        mc.emit_csv(mc.RejectionTable(), "/nonexistent/dir/x.csv")


def test_null_chi2_svd_level_small_scale():
    """Level of the chi-square calibrated rank-one test under a separable model."""
    R = 200
    cfg = mc.ExperimentConfig(
        cm.builtin_model(0), 40, 40, 1,
        (inf.TestSpec("exact-svd", 0.05, quantile_mode="chisquare"),), R, 11,
    )
    rate = mc.run_experiment(cfg).rows[0].rate
    assert abs(rate - 0.05) <= 3 * math.sqrt(0.05 * 0.95 / R)
