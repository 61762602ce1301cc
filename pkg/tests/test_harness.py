"""Bias-study orchestration: seeding, aggregation, verdicts and determinism."""

import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import GALLERY
from deathsys import ConfigError
from deathsys.harness import (REPORT_COLUMNS, Scenario, StudyReport, aggregate, load_scenario, replication_seeds,
                              run_replication, run_scenario, typology_suite, visit_spacing_sweep)


@pytest.fixture(scope="module")
def small():
    return load_scenario(GALLERY / "direct.json").with_replications(4, 150)


@pytest.fixture(scope="module")
def small_report(small):
    return run_scenario(small, 1)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 20), st.integers(1, 20))
@settings(max_examples=30, deadline=None)
def test_replication_seeds_are_prefix_stable(seed, a, b):
    short, long = sorted((a, b))
    assert replication_seeds(seed, long)[:short] == replication_seeds(seed, short)


def test_replication_seeds_differ():
    seeds = replication_seeds(101, 50)
    assert len(set(seeds)) == 50
    assert replication_seeds(101, 3) != replication_seeds(102, 3)


def test_report_columns_and_mcse(small, small_report):
    tab = small_report.table
    assert list(tab.columns) == REPORT_COLUMNS
    assert set(tab["fit"]) == {"naive", "joint"}
    # recompute the naive beta2 row from the replications themselves
    reps = [run_replication(small, r)["naive"] for r in range(small.replications)]
    est = np.array([r["estimates"]["beta2"] for r in reps])
    row = small_report.row("naive", "beta2")
    assert row["mean_estimate"] == pytest.approx(est.mean(), rel=1e-12)
    assert row["mcse"] == pytest.approx(est.std(ddof=1) / math.sqrt(len(est)), rel=1e-12)
    assert row["bias"] == pytest.approx(est.mean() - 0.5, rel=1e-12)
    assert row["n_used"] == 4 and row["exclusion_rate"] == 0.0


def test_identical_seeds_identical_csv_across_workers(small, small_report):
    again = run_scenario(small, 2)
    assert again.to_csv() == small_report.to_csv()


def test_nonconverged_replications_are_excluded(small):
    results = [run_replication(small, r) for r in range(3)]
    results[1]["naive"]["converged"] = False
    tab = aggregate(small, results)
    row = tab[(tab["fit"] == "naive") & (tab["parameter"] == "beta2")].iloc[0]
    assert row["n_used"] == 2 and row["n_excluded"] == 1
    assert row["exclusion_rate"] == pytest.approx(1 / 3)


def _report(bias, mcse, car_status="fails", ref_bias=None):
    rows = [{"scenario": "s", "fit": "naive", "family": "naive_mixed_longitudinal", "parameter": "beta2",
             "true": 0.5, "mean_estimate": 0.5 + bias, "bias": bias, "mcse": mcse, "emp_sd": mcse * 10,
             "mean_se": mcse * 10, "coverage": 0.95, "n_used": 100, "n_excluded": 0, "exclusion_rate": 0.0}]
    ref = None
    if ref_bias is not None:
        rows.append({**rows[0], "fit": "joint", "family": "joint_quantitative_shared_effect",
                     "bias": ref_bias, "mean_estimate": 0.5 + ref_bias})
        ref = "joint"
    return StudyReport("s", pd.DataFrame(rows, columns=REPORT_COLUMNS), {}, car_status, "beta2", "naive", ref, 100)


@pytest.mark.parametrize("z, verdict", [(0.0, "unbiased"), (3.0, "unbiased"), (4.0, "inconclusive"),
                                        (5.0, "inconclusive"), (5.01, "biased"), (-8.0, "biased")])
def test_empirical_verdict_thresholds(z, verdict):
    assert _report(0.01 * z, 0.01).empirical_verdict() == verdict


def test_verdict_consistency():
    assert _report(0.01, 0.01, "holds").consistent
    assert not _report(0.06, 0.01, "holds").consistent
    assert _report(0.06, 0.01, "fails", ref_bias=0.0).consistent
    assert not _report(0.06, 0.01, "fails", ref_bias=0.05).consistent


def test_scenario_config_errors(small):
    doc = small.to_config()
    with pytest.raises(ConfigError):
        Scenario.from_config({**doc, "replicates": 3})
    with pytest.raises(ConfigError):
        Scenario.from_config({**doc, "expected_verdict": "maybe"})
    with pytest.raises(ConfigError):
        Scenario.from_config({**doc, "fits": doc["fits"] + doc["fits"][:1]})
    round_trip = Scenario.from_config(doc)
    assert round_trip.to_config() == doc


def test_typology_and_sweep_shapes(small):
    tiny = small.with_replications(2, 100)
    table, reports = typology_suite([tiny])
    assert list(table["scenario"]) == ["direct"] and len(reports) == 1
    assert table["classify_car"].iloc[0] == "fails"
    sweep, _ = visit_spacing_sweep(tiny, "Z", [1.0, 2.5])
    assert list(sweep["spacing"].unique()) == [1.0, 2.5]
    assert set(sweep["fit"]) == {"naive", "joint"}
