from __future__ import annotations

import json
import math
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadcell.cellgen import GenParams, generate
from roadcell.errors import DataValidationError
from roadcell.evalbench import (
    ErrorReport,
    MetricValues,
    Scenario,
    compute_metrics,
    improvement,
    render_report_text,
    report_json,
    run_experiment,
    run_noise_experiment,
    summarize_runs,
    write_plot_csvs,
)
from roadcell.forecast import (
    FeatureSet,
    LstmModel,
    TrainConfig,
    apply_scaler,
    assemble_features,
    build_windows,
    fit_scaler,
    predict,
    split_chronological,
    train,
)
from roadcell.road_data import SyntheticProfile, build_corridor, lag_align, synth_corridor, validate_and_fill

# ----------------------------------------------------------------- metrics

floats = st.floats(-1e3, 1e3, allow_nan=False)


def test_metrics_perfect_and_hand_example():
    m = compute_metrics([0.2, 0.4], [0.2, 0.4])
    assert (m.mae, m.mse, m.rmse, m.mape_percent) == (0, 0, 0, 0)
    m = compute_metrics([0, 2], [1, 1])
    assert (m.mae, m.mse, m.rmse, m.mape_percent) == (1, 1, 1, 100)


def test_metrics_errors_and_mape_floor():
    with pytest.raises(DataValidationError):
        compute_metrics([], [])
    m = compute_metrics([0.1, 0.2], [0.0, 0.0])
    assert m.mape_percent is None and m.mape_excluded == 2
    m = compute_metrics([0.1, 2.0], [0.0, 1.0])
    assert m.mape_percent == pytest.approx(100.0) and m.mape_excluded == 1


@settings(max_examples=60)
@given(st.lists(st.tuples(floats, floats), min_size=1, max_size=50), st.randoms())
def test_metric_identities(pairs, rnd):
    p, y = zip(*pairs)
    m = compute_metrics(p, y)
    assert abs(m.rmse - math.sqrt(m.mse)) <= 1e-12 * max(1.0, m.rmse)
    assert m.mae <= m.rmse * (1 + 1e-12) + 1e-12
    assert min(m.mae, m.mse, m.rmse) >= 0
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    p2, y2 = zip(*shuffled)
    m2 = compute_metrics(p2, y2)
    assert m2.mae == pytest.approx(m.mae, rel=1e-12, abs=1e-12)
    assert m2.mse == pytest.approx(m.mse, rel=1e-12, abs=1e-12)


def test_improvement_examples():
    assert improvement(0.283, 0.187) == pytest.approx(33.9, abs=0.05)
    assert improvement(0.154, 0.067) == pytest.approx(56.5, abs=0.1)
    assert improvement(0.4, 0.4) == 0
    assert improvement(0.1, 0.2) < 0
    with pytest.raises(ValueError):
        improvement(0.0, 0.1)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_improvement_antisymmetry(a, b):
    assert improvement(a, b) * a == pytest.approx(-improvement(b, a) * b, rel=1e-9)


def _mv(x):
    return MetricValues(x, x, x, x)


def test_summaries():
    s = summarize_runs([_mv(v) for v in [3, 1, 5, 2, 4]])
    assert s.stats["mae"] == (1, 3, 5) and s.run_count == 5
    assert summarize_runs([_mv(7)]).stats["mse"] == (7, 7, 7)
    assert summarize_runs([_mv(2), _mv(1)]).stats["rmse"] == (1, 1, 2)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=9), st.randoms())
def test_summary_order_invariant(vals, rnd):
    a = summarize_runs([_mv(v) for v in vals])
    vals = list(vals)
    rnd.shuffle(vals)
    b = summarize_runs([_mv(v) for v in vals])
    assert a.stats == b.stats
    lo, med, hi = a.stats["mae"]
    assert lo <= med <= hi and med in vals


# ------------------------------------------------------------- experiments

FAST = TrainConfig(max_epochs=3, patience=2)


@pytest.fixture(scope="module")
def scenario():
    corridor = build_corridor([{"detector_id": "A", "range_miles": 7.67},
                               {"detector_id": "B", "range_miles": 1.62}])
    road = [validate_and_fill(r)[0] for r in synth_corridor(
        SyntheticProfile.diurnal(), corridor.detector_ids, 3, seed=11)]
    return Scenario(corridor, road, train=FAST, seeds=(1, 2), ratios=(1, 1, 1))


@pytest.fixture(scope="module")
def report(scenario):
    return run_experiment(scenario)


def test_first_site_handover_sets_not_applicable(report):
    a = report.site("A")
    assert a.summaries["NHC"] is None and a.summaries["FSNHC"] is None
    assert a.summaries["C"].run_count == 2
    b = report.site("B")
    assert all(b.summaries[f.name].run_count == 2 for f in FeatureSet)
    assert report.improvement("A", "C", "NHC", "mae") is None


def test_improvements_finite_and_consistent(report):
    rows = report.improvements()
    assert {(r["baseline"], r["enriched"]) for r in rows} == {
        ("C", "FSC"), ("NHC", "FSNHC"), ("C", "NHC"), ("FSC", "FSNHC"), ("NHC", "FSC")}
    for r in rows:
        if r["metric"] != "mape":
            assert all(math.isfinite(r[s]) for s in ("min", "median", "max"))
    s = report.site("B")
    want = improvement(s.summaries["C"].get("mae"), s.summaries["FSC"].get("mae"))
    assert report.improvement("B", "C", "FSC", "mae") == pytest.approx(want)


def test_report_serialisation(report, tmp_path):
    d = json.loads(report_json({"experiment": report}))
    back = ErrorReport.from_dict(d["experiment"])
    assert back.to_dict() == report.to_dict()
    text = render_report_text(report)
    assert "improvement % C -> FSC" in text and "MAPE" in text
    paths = write_plot_csvs(report, tmp_path)
    first = paths[0].read_text().splitlines()
    assert first[0] == "bs_id,metric,min,median,max"


def test_grid_counts_runs(report):
    n = sum(len(v) for s in report.sites for v in s.runs.values())
    # first site skips NHC and FSNHC: (2 + 4) sets x 2 seeds
    assert n == 12


def test_single_cycle_equals_direct_forecast_call(scenario):
    sc = replace(scenario, feature_sets=(FeatureSet.FSC,), seeds=(5,))
    rep = run_experiment(sc)
    # the same pipeline spelled out with the forecast module
    cells = generate(sc.corridor, [lag_align(r) for r in sc.road], GenParams(seed=5)).cells
    table = assemble_features(cells[1], sc.road[1])
    sets = build_windows(table, FeatureSet.FSC, 6, split_chronological(3, (1, 1, 1)), seed=5,
                         first_week=sc.first_week)
    scaler = fit_scaler(sets["train"])
    tr, va, te = (apply_scaler(scaler, sets[k]) for k in ("train", "val", "test"))
    model, _ = train(LstmModel.initialize(3, 16, seed=5), tr, va, replace(FAST, seed=5))
    pr = predict(model, scaler, te)
    direct = compute_metrics(pr.pred_norm, pr.target_norm)
    assert rep.site(cells[1].bs_id).runs["FSC"][0] == direct


def test_noise_zero_matches_clean(scenario, report):
    sc = replace(scenario, feature_sets=(FeatureSet.C, FeatureSet.FSC))
    noisy = run_noise_experiment(sc, 0.0)
    for s in noisy.sites:
        for fs in ("C", "FSC"):
            assert s.runs[fs] == report.site(s.bs_id).runs[fs]


def test_noise_reuses_baseline(scenario, report):
    sc = replace(scenario, feature_sets=(FeatureSet.C, FeatureSet.FSC), seeds=(1, 2))
    a = run_noise_experiment(sc, 0.05)
    b = run_noise_experiment(sc, 0.05, baseline=report)
    for s in a.sites:
        assert s.runs["C"] == b.site(s.bs_id).runs["C"]
        assert s.runs["FSC"] == b.site(s.bs_id).runs["FSC"]
    assert a.pairings == (("C", "FSC"),)
    assert "noisy" in a.title and a.noise_sigma == 0.05


def test_parallel_jobs_give_identical_results(scenario, report):
    par = run_experiment(replace(scenario, jobs=2))
    assert par.to_dict() == report.to_dict()
