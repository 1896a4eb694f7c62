import logging

import pytest

import oracles
import properties
from dualground.data import Moment
from dualground.evaluation import MetricReport, compute_metrics, render_csv, render_table


def test_perfect_predictor_scores_hundred():
    gts = {f"q{i}": Moment(float(i), float(i + 2)) for i in range(5)}
    preds = {qid: [m] for qid, m in gts.items()}
    report = compute_metrics(preds, gts)
    assert all(v == 100.0 for v in report.recall.values())
    assert report.miou == 100.0
    assert report.num_queries == 5


def test_hand_counted_two_queries():
    gts = {"a": Moment(0.0, 10.0), "b": Moment(0.0, 10.0)}
    preds = {
        "a": [Moment(0.0, 6.0)],   # IoU 0.6
        "b": [Moment(0.0, 4.0)],   # IoU 0.4
    }
    report = compute_metrics(preds, gts)
    assert report.recall[(1, 0.5)] == 50.0
    assert report.recall[(1, 0.3)] == 100.0
    assert report.recall[(1, 0.7)] == 0.0
    assert abs(report.miou - 50.0) < 1e-12


def test_threshold_tie_counts_as_hit():
    gts = {"a": Moment(0.0, 10.0)}
    preds = {"a": [Moment(0.0, 5.0)]}  # IoU exactly 0.5
    report = compute_metrics(preds, gts)
    assert report.recall[(1, 0.5)] == 100.0


def test_random_instances_match_recount_oracle(rng):
    for _ in range(30):
        count = int(rng.integers(1, 51))
        gts, preds = {}, {}
        for i in range(count):
            qid = f"q{i}"
            a, b = sorted(rng.uniform(0, 40, size=2))
            gts[qid] = Moment(float(a), float(b))
            ranked = []
            for _ in range(int(rng.integers(1, 7))):
                c, d = sorted(rng.uniform(0, 40, size=2))
                ranked.append(Moment(float(c), float(d)))
            preds[qid] = ranked
        report = compute_metrics(preds, gts)
        want_recall, want_miou = oracles.recount_metrics(
            {q: [(m.start, m.end) for m in v] for q, v in preds.items()},
            {q: (m.start, m.end) for q, m in gts.items()})
        assert report.recall == want_recall
        assert abs(report.miou - want_miou) < 1e-12


def test_missing_prediction_counts_as_miss(caplog):
    gts = {"a": Moment(0.0, 4.0), "b": Moment(1.0, 3.0)}
    preds = {"a": [Moment(0.0, 4.0)]}
    with caplog.at_level(logging.WARNING):
        report = compute_metrics(preds, gts)
    assert "no predictions" in caplog.text
    assert report.recall[(1, 0.3)] == 50.0
    assert abs(report.miou - 50.0) < 1e-12


def test_empty_ground_truth_rejected():
    with pytest.raises(ValueError):
        compute_metrics({}, {})


def test_report_constructor_enforces_monotonicity():
    bad = {(1, 0.3): 50.0, (1, 0.5): 60.0, (1, 0.7): 10.0,
           (5, 0.3): 50.0, (5, 0.5): 40.0, (5, 0.7): 10.0}
    with pytest.raises(AssertionError):
        MetricReport(recall=bad, miou=10.0, num_queries=4)


def test_render_formats():
    gts = {"a": Moment(0.0, 4.0)}
    preds = {"a": [Moment(0.0, 4.0)]}
    report = compute_metrics(preds, gts)
    csv_text = render_csv(report)
    assert csv_text.startswith("metric,value")
    assert "R@1, IoU@0.3,100.0" in csv_text
    table = render_table(report)
    assert "R@5, IoU@0.7" in table and "mIoU" in table
    assert "queries" in table


def test_evaluation_property_samples():
    properties.prop_metrics_monotone(50, 60)
    properties.prop_metrics_permutation_invariant(50, 61)
    properties.prop_metrics_rank_tail_irrelevant(50, 62)
