"""
Purpose: Network inputs from fundus photographs

High-level Overview:
Turns RGB fundus images into the single-channel network input (CLAHE-enhanced
green channel scaled to [0, 1]), cuts whole images into square patches on a
snapped grid, and applies seeded random augmentation to training patches.
CLAHE runs on the whole image before cropping.

Key Components:
- CLAHE through OpenCV on the green channel
- Patch grid with the final row/column snapped to the image border
- Mirror padding for images smaller than one patch
- Geometric augmentation (flip, rotation, scale, shear) shared by input and labels
- Photometric augmentation (noise, brightness, contrast) on the input only

Functions/Classes:
- `class GrayImage`: Float32 image in [0, 1]
- `class PatchSample`: Input patch, label patch, origin and source index
- `class AugmentConfig`: Augmentation ranges (`aug.*` keys)
- `class AugmentParams`: One concrete draw of augmentation parameters
- `to_gray_clahe(img, tiles, clip)`: CLAHE-enhanced gray image
- `patch_origins(length, patch, stride)`: Snapped grid origins along one axis
- `pad_to_patch(array, patch)`: Mirror-pad bottom/right up to the patch size
- `extract_patches(img, labels, patch, stride)`: Cover an image with patches
- `draw_params(cfg, rng, shape)`: Draw augmentation parameters
- `apply_params(sample, params)`: Apply a drawn augmentation
- `augment(sample, cfg, rng)`: Draw and apply in one step
- `derive_rng(seed, *keys)`: Independent generator per (seed, key...) tuple
"""

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import cv2
import numpy as np
from scipy import ndimage

from .dataio import FundusImage
from .errors import ArgumentError, ConfigError, ShapeError
from .labelgen import ClassMap


@dataclass
class GrayImage:
    """Single-channel float32 image with values in [0, 1]."""
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ShapeError(f"GrayImage needs 2-D data, got {self.data.shape}")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ArgumentError("GrayImage values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class PatchSample:
    """A training or inference patch cut from one manifest image."""
    input: GrayImage
    labels: ClassMap
    origin: Tuple[int, int] = (0, 0)
    source_id: int = 0

    def __post_init__(self):
        if self.input.data.shape != self.labels.data.shape:
            raise ShapeError(
                f"patch input {self.input.data.shape} and labels {self.labels.data.shape} differ"
            )


@dataclass
class AugmentConfig:
    """Random augmentation ranges; zero ranges and flip_prob 0 give the identity."""
    flip_prob: float = 0.5
    rotation_deg: float = 30.0
    scale_range: Tuple[float, float] = (0.9, 1.1)
    shear_deg: float = 5.0
    noise_sigma: float = 0.02
    brightness_delta: float = 0.1
    contrast_range: Tuple[float, float] = (0.9, 1.1)
    seed: int = 0

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentConfig":
        return cls(0.0, 0.0, (1.0, 1.0), 0.0, 0.0, 0.0, (1.0, 1.0), seed)

    def validate(self) -> None:
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError(f"aug.flip_prob must lie in [0, 1], got {self.flip_prob}")
        for name in ("rotation_deg", "shear_deg", "noise_sigma", "brightness_delta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"aug.{name} must be non-negative, got {getattr(self, name)}")
        for name in ("scale_range", "contrast_range"):
            low, high = getattr(self, name)
            if not 0 < low <= high:
                raise ConfigError(f"aug.{name} must satisfy 0 < low <= high, got {(low, high)}")


@dataclass
class AugmentParams:
    """Concrete augmentation drawn for one patch."""
    flip_horizontal: bool = False
    flip_vertical: bool = False
    angle_deg: float = 0.0
    scale: float = 1.0
    shear_deg: float = 0.0
    noise: Optional[np.ndarray] = None
    brightness: float = 0.0
    contrast: float = 1.0

    @property
    def is_affine_identity(self) -> bool:
        return self.angle_deg == 0.0 and self.scale == 1.0 and self.shear_deg == 0.0

    def inverse_matrix(self) -> np.ndarray:
        """Output-to-input map in (row, col) coordinates about the patch centre."""
        theta = math.radians(self.angle_deg)
        rotation = np.array([[math.cos(theta), -math.sin(theta)],
                             [math.sin(theta), math.cos(theta)]])
        shear = np.array([[1.0, math.tan(math.radians(self.shear_deg))], [0.0, 1.0]])
        forward = rotation @ shear @ np.diag([self.scale, self.scale])
        return np.linalg.inv(forward)


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator that depends only on (seed, keys), not on call order."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])


def to_gray_clahe(img: FundusImage, tiles: Tuple[int, int] = (8, 8), clip: float = 2.0) -> GrayImage:
    """CLAHE on the green channel, rescaled to [0, 1].

    `tiles` is (rows, cols). OpenCV pads the image to a multiple of the grid and
    blends neighbouring tile mappings bilinearly.
    """
    if img.height * img.width == 0:
        raise ArgumentError("cannot enhance a zero-area image")
    if clip <= 0:
        raise ArgumentError(f"clip limit must be positive, got {clip}")
    rows, cols = tiles
    if rows < 1 or cols < 1:
        raise ArgumentError(f"tile grid must be positive, got {tiles}")

    green = np.ascontiguousarray(img.data[:, :, 1])
    clahe = cv2.createCLAHE(clipLimit=float(clip), tileGridSize=(int(cols), int(rows)))
    enhanced = clahe.apply(green)
    return GrayImage(enhanced.astype(np.float32) / np.float32(255.0))


def patch_origins(length: int, patch: int, stride: int) -> List[int]:
    """Origins every `stride` pixels, plus one snapped so the last patch ends at the border."""
    if stride < 1:
        raise ArgumentError(f"stride must be >= 1, got {stride}")
    last = max(length - patch, 0)
    origins = list(range(0, last + 1, stride))
    if origins[-1] != last:
        origins.append(last)
    return origins


def pad_to_patch(array: np.ndarray, patch: int) -> np.ndarray:
    """Mirror-pad rows and columns at the bottom/right until both reach `patch`."""
    pad_rows = max(patch - array.shape[0], 0)
    pad_cols = max(patch - array.shape[1], 0)
    if pad_rows == 0 and pad_cols == 0:
        return array
    widths = [(0, pad_rows), (0, pad_cols)] + [(0, 0)] * (array.ndim - 2)
    return np.pad(array, widths, mode="reflect")


def extract_patches(img: GrayImage, labels: ClassMap, patch: int = 96, stride: int = 48,
                    source_id: int = 0) -> List[PatchSample]:
    """Cover the image with `patch`-sized squares in row-major order."""
    if patch < 1:
        raise ArgumentError(f"patch size must be >= 1, got {patch}")
    if stride < 1:
        raise ArgumentError(f"stride must be >= 1, got {stride}")
    if img.data.shape != labels.data.shape:
        raise ShapeError(f"image {img.data.shape} and labels {labels.data.shape} differ")
    if img.data.size == 0:
        raise ArgumentError("cannot cut patches from an empty image")

    gray = pad_to_patch(img.data, patch)
    classes = pad_to_patch(labels.data, patch)
    samples = []
    for row in patch_origins(gray.shape[0], patch, stride):
        for col in patch_origins(gray.shape[1], patch, stride):
            samples.append(PatchSample(
                input=GrayImage(gray[row:row + patch, col:col + patch]),
                labels=ClassMap(classes[row:row + patch, col:col + patch]),
                origin=(row, col),
                source_id=source_id,
            ))
    return samples


def draw_params(cfg: AugmentConfig, rng: np.random.Generator, shape: Tuple[int, int]) -> AugmentParams:
    """Draw flips, angle, scale, shear, noise, brightness and contrast, in that order."""
    flip_horizontal = bool(rng.random() < cfg.flip_prob)
    flip_vertical = bool(rng.random() < cfg.flip_prob)
    angle = float(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    scale = float(rng.uniform(*cfg.scale_range))
    shear = float(rng.uniform(-cfg.shear_deg, cfg.shear_deg))
    noise = rng.normal(0.0, cfg.noise_sigma, size=shape).astype(np.float32) if cfg.noise_sigma > 0 else None
    brightness = float(rng.uniform(-cfg.brightness_delta, cfg.brightness_delta))
    contrast = float(rng.uniform(*cfg.contrast_range))
    return AugmentParams(flip_horizontal, flip_vertical, angle, scale, shear, noise, brightness, contrast)


def apply_params(sample: PatchSample, params: AugmentParams) -> PatchSample:
    """Apply geometric transforms to input and labels, photometric ones to the input."""
    image = sample.input.data
    labels = sample.labels.data

    if params.flip_horizontal:
        image, labels = image[:, ::-1], labels[:, ::-1]
    if params.flip_vertical:
        image, labels = image[::-1, :], labels[::-1, :]

    if not params.is_affine_identity:
        matrix = params.inverse_matrix()
        centre = (np.asarray(image.shape, dtype=np.float64) - 1.0) / 2.0
        offset = centre - matrix @ centre
        image = ndimage.affine_transform(image, matrix, offset=offset, order=1, mode="nearest")
        labels = ndimage.affine_transform(labels, matrix, offset=offset, order=0, mode="nearest")

    image = np.array(image, dtype=np.float32)
    if params.noise is not None:
        image += params.noise
    if params.brightness != 0.0:
        image += np.float32(params.brightness)
    if params.contrast != 1.0:
        mean = image.mean(dtype=np.float64)
        image = ((image - mean) * params.contrast + mean).astype(np.float32)
    np.clip(image, 0.0, 1.0, out=image)

    return replace(sample, input=GrayImage(image), labels=ClassMap(labels))


def augment(sample: PatchSample, cfg: AugmentConfig, rng: np.random.Generator) -> PatchSample:
    """Randomly augment a training patch; deterministic given the generator state."""
    return apply_params(sample, draw_params(cfg, rng, sample.input.data.shape))
