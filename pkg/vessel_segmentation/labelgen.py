"""
Purpose: Edge-aware multi-class labels from binary vessel ground truth

High-level Overview:
Splits vessels into thick and thin parts with a morphological opening, marks the
background band around each kind with a dilation, and emits the 5-class map
(0 background, 1 near thick, 2 near thin, 3 thick vessel, 4 thin vessel). Class
weights for the loss are either the defaults or derived from class frequencies.

Key Components:
- Binary erosion/dilation/opening on scipy.ndimage
- Thick/thin vessel split (3x3 opening removes structures 1-2 px wide)
- Boundary bands by square dilation, thin vessels winning ties
- Frequency-balanced class weights with per-class boost

Functions/Classes:
- `class ClassMap`: Per-pixel labels in {0..4}
- `class StructuringElement`: Odd-sized boolean footprint anchored at its centre
- `class ClassWeights`: Five positive loss weights
- `erode(mask, se)`, `dilate(mask, se)`, `opening(mask, se)`
- `split_thick_thin(vessels)`: (thick, thin) masks
- `build_class_map(vessels, band_radius, scheme)`: 5-class map
- `class_histogram(maps)`: Pixel count per class
- `weights_from_frequencies(maps, boost)`: Balanced ClassWeights
"""

from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .dataio import BinaryMask
from .errors import ArgumentError, ShapeError

NUM_CLASSES = 5
BACKGROUND, NEAR_THICK, NEAR_THIN, THICK, THIN = range(NUM_CLASSES)
VESSEL_CLASSES = (THICK, THIN)

MaskLike = Union[BinaryMask, np.ndarray]


@dataclass
class ClassMap:
    """Per-pixel class labels, uint8 data of shape (height, width)."""
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if self.data.ndim != 2:
            raise ShapeError(f"ClassMap needs 2-D data, got {self.data.shape}")
        if self.data.size and self.data.max() >= NUM_CLASSES:
            raise ArgumentError(f"class labels must lie in 0..{NUM_CLASSES - 1}")

    @property
    def shape(self):
        return self.data.shape

    def vessels(self) -> BinaryMask:
        """Pixels labelled thick or thin vessel."""
        return BinaryMask(np.isin(self.data, VESSEL_CLASSES))


@dataclass
class StructuringElement:
    """Boolean footprint with odd side lengths; the anchor is the centre cell."""
    shape: np.ndarray

    def __post_init__(self):
        self.shape = np.asarray(self.shape, dtype=bool)
        if self.shape.ndim != 2 or self.shape.shape[0] % 2 == 0 or self.shape.shape[1] % 2 == 0:
            raise ArgumentError(f"structuring element needs odd side lengths, got {self.shape.shape}")
        centre = (self.shape.shape[0] // 2, self.shape.shape[1] // 2)
        if not self.shape[centre]:
            raise ArgumentError("structuring element anchor (centre) must be set")

    @classmethod
    def square(cls, side: int) -> "StructuringElement":
        return cls(np.ones((side, side), dtype=bool))


@dataclass
class ClassWeights:
    """Loss weight per class index 0-4."""
    values: Tuple[float, ...] = (1.0, 2.0, 4.0, 2.0, 4.0)

    def __post_init__(self):
        self.values = tuple(float(v) for v in self.values)
        if len(self.values) != NUM_CLASSES:
            raise ArgumentError(f"need {NUM_CLASSES} class weights, got {len(self.values)}")
        if min(self.values) <= 0:
            raise ArgumentError(f"class weights must be positive, got {self.values}")

    def as_array(self, dtype=np.float64) -> np.ndarray:
        return np.asarray(self.values, dtype=dtype)

    def to_config_fragment(self) -> str:
        """Render as a config line usable with `--config`."""
        return "train.class_weights=" + ",".join(repr(v) for v in self.values) + "\n"


def _mask_array(mask: MaskLike) -> np.ndarray:
    return mask.data if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)


def erode(mask: MaskLike, se: StructuringElement) -> BinaryMask:
    """Binary erosion; pixels outside the raster count as background."""
    data = _mask_array(mask)
    return BinaryMask(ndimage.binary_erosion(data, structure=se.shape, border_value=0))


def dilate(mask: MaskLike, se: StructuringElement) -> BinaryMask:
    """Binary (Minkowski) dilation; pixels outside the raster count as background."""
    data = _mask_array(mask)
    return BinaryMask(ndimage.binary_dilation(data, structure=se.shape, border_value=0))


def opening(mask: MaskLike, se: StructuringElement) -> BinaryMask:
    """Erosion followed by dilation with the same element."""
    return dilate(erode(mask, se), se)


def split_thick_thin(vessels: MaskLike) -> Tuple[BinaryMask, BinaryMask]:
    """Thick = opening by a 3x3 square; thin = the remaining vessel pixels."""
    data = _mask_array(vessels)
    thick = opening(data, StructuringElement.square(3)).data
    thin = data & ~thick
    return BinaryMask(thick), BinaryMask(thin)


def build_class_map(vessels: MaskLike, band_radius: int = 2, scheme: str = "edge_aware") -> ClassMap:
    """Label vessels and their surrounding background bands.

    The band around each vessel kind is its dilation by a (2r+1)^2 square minus
    the vessels; background near both kinds goes to the near-thin class. The
    `binary` scheme maps every vessel pixel to class 3 and everything else to 0.
    """
    if band_radius < 1:
        raise ArgumentError(f"band radius must be >= 1, got {band_radius}")
    data = _mask_array(vessels)
    labels = np.zeros(data.shape, dtype=np.uint8)

    if scheme == "binary":
        labels[data] = THICK
        return ClassMap(labels)
    if scheme != "edge_aware":
        raise ArgumentError(f"unknown label scheme {scheme!r}")

    thick, thin = split_thick_thin(data)
    band = StructuringElement.square(2 * band_radius + 1)
    near_thick = dilate(thick, band).data & ~data
    near_thin = dilate(thin, band).data & ~data

    labels[near_thick] = NEAR_THICK
    labels[near_thin] = NEAR_THIN
    labels[thick.data] = THICK
    labels[thin.data] = THIN
    return ClassMap(labels)


def class_histogram(maps: Iterable[ClassMap]) -> np.ndarray:
    """Pixel count per class over all maps."""
    counts = np.zeros(NUM_CLASSES, dtype=np.int64)
    for class_map in maps:
        counts += np.bincount(class_map.data.ravel(), minlength=NUM_CLASSES)[:NUM_CLASSES]
    return counts


def weights_from_frequencies(maps: Sequence[ClassMap], boost: Sequence[float] = (1.0,) * NUM_CLASSES) -> ClassWeights:
    """Inverse-frequency weights total/(5*count), boosted, scaled so the minimum is 1."""
    if len(maps) == 0:
        raise ArgumentError("need at least one class map")
    if len(boost) != NUM_CLASSES or min(boost) <= 0:
        raise ArgumentError(f"boost needs {NUM_CLASSES} positive multipliers, got {tuple(boost)}")
    counts = class_histogram(maps).astype(np.float64)
    total = counts.sum()
    base = total / (NUM_CLASSES * np.maximum(counts, 1.0))
    weights = base * np.asarray(boost, dtype=np.float64)
    weights = weights / weights.min()
    return ClassWeights(tuple(weights.tolist()))
