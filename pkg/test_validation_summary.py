"""Tests for the verdict of the end-to-end validation summary."""

import validation


def _results():
    return {
        "basic": {"help": {"success": True}},
        "training": {"edge_aware": {"success": True}},
        "determinism": {"identical": True},
    }


def _metrics(edge_thin, base_thin):
    return {
        "edge_aware": {"AUC": 0.97, "Acc": 0.95, "AUC_thin": edge_thin},
        "baseline": {"AUC": 0.96, "Acc": 0.95, "AUC_thin": base_thin},
    }


def test_thin_auc_gain_passes():
    assert validation.generate_summary_report(_results(), _metrics(0.90, 0.85), 1.0)


def test_thin_auc_without_gain_fails():
    assert not validation.generate_summary_report(_results(), _metrics(0.85, 0.85), 1.0)
    assert not validation.generate_summary_report(_results(), _metrics(0.80, 0.85), 1.0)


def test_missing_baseline_fails():
    metrics = _metrics(0.90, 0.85)
    del metrics["baseline"]
    assert not validation.generate_summary_report(_results(), metrics, 1.0)
