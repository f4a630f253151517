"""Tests for morphology and edge-aware class maps, checked against brute-force loops."""

import numpy as np
import pytest

from vessel_segmentation.errors import ArgumentError
from vessel_segmentation.labelgen import (
    BACKGROUND,
    NEAR_THICK,
    NEAR_THIN,
    THICK,
    THIN,
    ClassMap,
    ClassWeights,
    StructuringElement,
    build_class_map,
    class_histogram,
    dilate,
    erode,
    opening,
    split_thick_thin,
    weights_from_frequencies,
)


def naive_erode(mask, se):
    h, w = mask.shape
    ry, rx = se.shape[0] // 2, se.shape[1] // 2
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            keep = True
            for dy in range(-ry, ry + 1):
                for dx in range(-rx, rx + 1):
                    if not se[dy + ry, dx + rx]:
                        continue
                    yy, xx = y + dy, x + dx
                    if not (0 <= yy < h and 0 <= xx < w) or not mask[yy, xx]:
                        keep = False
            out[y, x] = keep
    return out


def naive_dilate(mask, se):
    h, w = mask.shape
    ry, rx = se.shape[0] // 2, se.shape[1] // 2
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            for dy in range(-ry, ry + 1):
                for dx in range(-rx, rx + 1):
                    yy, xx = y + dy, x + dx
                    if se[dy + ry, dx + rx] and 0 <= yy < h and 0 <= xx < w:
                        out[yy, xx] = True
    return out


def naive_class_map(vessels, radius):
    square3 = np.ones((3, 3), dtype=bool)
    thick = naive_dilate(naive_erode(vessels, square3), square3)
    thin = vessels & ~thick
    band = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    labels = np.zeros(vessels.shape, dtype=np.uint8)
    labels[naive_dilate(thick, band) & ~vessels] = NEAR_THICK
    labels[naive_dilate(thin, band) & ~vessels] = NEAR_THIN
    labels[thick] = THICK
    labels[thin] = THIN
    return labels


def _random_masks(count, size=32, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        density = rng.uniform(0.05, 0.6)
        yield rng.random((size, size)) < density


def test_morphology_matches_brute_force():
    square = StructuringElement.square(3)
    cross = StructuringElement(np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool))
    for index, mask in enumerate(_random_masks(200, size=32, seed=1)):
        se = square if index % 2 else cross
        np.testing.assert_array_equal(erode(mask, se).data, naive_erode(mask, se.shape))
        np.testing.assert_array_equal(dilate(mask, se).data, naive_dilate(mask, se.shape))
        np.testing.assert_array_equal(opening(mask, se).data,
                                      naive_dilate(naive_erode(mask, se.shape), se.shape))


@pytest.mark.parametrize("se", [StructuringElement.square(3), StructuringElement.square(5)])
def test_opening_is_idempotent_anti_extensive_and_monotone(se):
    rng = np.random.default_rng(3)
    for b in _random_masks(50, size=32, seed=4):
        a = b & (rng.random(b.shape) < 0.8)
        opened = opening(b, se).data
        np.testing.assert_array_equal(opening(opened, se).data, opened)
        assert not (opened & ~b).any()
        assert not (opening(a, se).data & ~opened).any()


def test_class_map_matches_brute_force_and_partitions():
    for index, vessels in enumerate(_random_masks(200, size=32, seed=2)):
        radius = 1 + index % 3
        labels = build_class_map(vessels, band_radius=radius).data
        np.testing.assert_array_equal(labels, naive_class_map(vessels, radius))
        # vessel pixels stay vessels and nothing else becomes one
        np.testing.assert_array_equal(np.isin(labels, (THICK, THIN)), vessels)
        assert labels.max() <= THIN


def test_structuring_element_requires_odd_sides_and_anchor():
    with pytest.raises(ArgumentError):
        StructuringElement(np.ones((2, 3), dtype=bool))
    with pytest.raises(ArgumentError):
        StructuringElement(np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]], dtype=bool))


def test_erosion_treats_outside_as_background():
    full = np.ones((5, 5), dtype=bool)
    eroded = erode(full, StructuringElement.square(3)).data
    assert eroded.sum() == 9
    assert not eroded[0].any() and not eroded[:, -1].any()


def test_thick_and_thin_strips():
    vessels = np.zeros((20, 20), dtype=bool)
    vessels[3:8, 2:18] = True      # 5 px wide
    vessels[11, 2:18] = True       # 1 px wide
    labels = build_class_map(vessels, band_radius=2).data
    assert (labels[3:8, 2:18] == THICK).all()
    assert (labels[11, 2:18] == THIN).all()
    assert labels[1, 10] == NEAR_THICK
    assert labels[13, 10] == NEAR_THIN
    assert labels[9, 10] == NEAR_THIN  # within reach of both, thin wins
    assert labels[16, 10] == BACKGROUND
    assert labels[19, 19] == BACKGROUND


def test_empty_and_full_masks():
    assert (build_class_map(np.zeros((8, 8), dtype=bool)).data == BACKGROUND).all()
    full = build_class_map(np.ones((8, 8), dtype=bool)).data
    assert np.isin(full, (THICK, THIN)).all()
    assert (full[2:6, 2:6] == THICK).all()


def test_binary_scheme():
    vessels = np.zeros((6, 6), dtype=bool)
    vessels[2, :] = True
    labels = build_class_map(vessels, scheme="binary").data
    assert set(np.unique(labels)) == {BACKGROUND, THICK}
    np.testing.assert_array_equal(labels == THICK, vessels)


def test_bad_arguments():
    with pytest.raises(ArgumentError):
        build_class_map(np.zeros((4, 4), dtype=bool), band_radius=0)
    with pytest.raises(ArgumentError):
        build_class_map(np.zeros((4, 4), dtype=bool), scheme="other")
    with pytest.raises(ArgumentError):
        ClassMap(np.full((2, 2), 5))


def test_class_histogram_and_inverse_frequency_weights():
    maps = [ClassMap(np.array([[0, 0, 0, 0], [1, 2, 3, 4]])), ClassMap(np.array([[0, 0], [0, 3]]))]
    np.testing.assert_array_equal(class_histogram(maps), [7, 1, 1, 2, 1])
    weights = weights_from_frequencies(maps)
    np.testing.assert_allclose(weights.values, [1.0, 7.0, 7.0, 3.5, 7.0])

    boosted = weights_from_frequencies(maps, boost=(1, 1, 1, 1, 2))
    np.testing.assert_allclose(boosted.values, [1.0, 7.0, 7.0, 3.5, 14.0])


def test_class_weights_fragment():
    fragment = ClassWeights((1.0, 2.0, 4.0, 2.0, 4.0)).to_config_fragment()
    assert fragment == "train.class_weights=1.0,2.0,4.0,2.0,4.0\n"
    with pytest.raises(ArgumentError):
        ClassWeights((1.0, 2.0))
    with pytest.raises(ArgumentError):
        ClassWeights((1.0, 0.0, 1.0, 1.0, 1.0))


def test_split_thick_thin_partitions_vessels():
    vessels = np.zeros((24, 32), dtype=bool)
    vessels[3:8, 2:28] = True      # 5 px wide
    vessels[12, 2:28] = True       # 1 px wide
    vessels[17:19, 2:28] = True    # 2 px wide
    thick, thin = split_thick_thin(vessels)
    np.testing.assert_array_equal(thick.data[3:8, 2:28], True)
    assert thick.data.sum() == 5 * 26
    assert not (thick.data & thin.data).any()
    np.testing.assert_array_equal(thick.data | thin.data, vessels)
    assert thin.data[12, 2:28].all() and thin.data[17:19, 2:28].all()
