"""Tests for the error overlay and the per-image report figures."""

import io

import numpy as np
import pytest
from PIL import Image
from rich.console import Console

from vessel_segmentation.dataio import BinaryMask, FundusImage
from vessel_segmentation.evaluate import ProbabilityMap, binarize
from vessel_segmentation.report_generator import FN_COLOR, FP_COLOR, TP_COLOR, ReportGenerator


@pytest.fixture
def reporter():
    return ReportGenerator(Console(file=io.StringIO()))


def _pixels(overlay, color):
    return (overlay == np.array(color, dtype=np.uint8)).all(axis=2)


def test_perfect_prediction_has_no_error_colours(reporter):
    gt = BinaryMask(np.random.default_rng(0).random((12, 10)) < 0.3)
    overlay = reporter.error_overlay(np.full((12, 10), 100), gt, gt)
    assert not _pixels(overlay, FN_COLOR).any()
    assert not _pixels(overlay, FP_COLOR).any()
    np.testing.assert_array_equal(_pixels(overlay, TP_COLOR), gt.data)
    assert (overlay[~gt.data] == 100).all()


def test_misses_are_blue_and_false_alarms_red(reporter):
    gt = BinaryMask(np.array([[1, 1, 0, 0]], dtype=bool))
    pred = BinaryMask(np.array([[1, 0, 1, 0]], dtype=bool))
    overlay = reporter.error_overlay(np.full((1, 4), 100), pred, gt)
    assert tuple(overlay[0, 0]) == TP_COLOR
    assert tuple(overlay[0, 1]) == FN_COLOR
    assert tuple(overlay[0, 2]) == FP_COLOR
    assert tuple(overlay[0, 3]) == (100, 100, 100)


def test_nothing_is_coloured_outside_the_fov(reporter):
    rng = np.random.default_rng(1)
    gray = rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
    pred = BinaryMask(rng.random((16, 16)) < 0.5)
    gt = BinaryMask(rng.random((16, 16)) < 0.5)
    rows, cols = np.mgrid[0:16, 0:16]
    fov = BinaryMask((rows - 7.5) ** 2 + (cols - 7.5) ** 2 < 36)

    for truth in (gt, None):
        overlay = reporter.error_overlay(gray, pred, truth, fov)
        outside = ~fov.data
        for channel in range(3):
            np.testing.assert_array_equal(overlay[:, :, channel][outside], gray[outside])


def test_without_ground_truth_predictions_are_green(reporter):
    pred = BinaryMask(np.array([[1, 0], [0, 1]], dtype=bool))
    overlay = reporter.error_overlay(np.full((2, 2), 50), pred, None)
    np.testing.assert_array_equal(_pixels(overlay, TP_COLOR), pred.data)
    assert tuple(overlay[0, 1]) == (50, 50, 50)


def test_write_report_images(reporter, tmp_path):
    rng = np.random.default_rng(2)
    h, w = 20, 24

    def probs():
        raw = rng.random((5, h, w))
        return raw / raw.sum(axis=0)

    prob = ProbabilityMap(probs(), sides=[probs(), probs()])
    image = FundusImage(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))
    gt = BinaryMask(rng.random((h, w)) < 0.2)

    written = reporter.write_report_images(image, prob, tmp_path / "report", gt=gt)
    assert sorted(p.name for p in written) == ["fused_heatmap.png", "mask.png", "overlay.png",
                                               "side1.png", "side2.png"]
    assert all(p.exists() for p in written)

    mask = np.asarray(Image.open(tmp_path / "report" / "mask.png").convert("L"))
    np.testing.assert_array_equal(mask > 127, binarize(prob).data)
    overlay = np.asarray(Image.open(tmp_path / "report" / "overlay.png").convert("RGB"))
    np.testing.assert_array_equal(overlay, reporter.error_overlay(image.data[:, :, 1], binarize(prob), gt))
