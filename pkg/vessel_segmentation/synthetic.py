"""
Purpose: Synthetic fundus-like corpus for desk-scale experiments

High-level Overview:
Generates small RGB images with a circular field of view, a smooth illumination
gradient and random curved vessels of width 1-5 px. Vessels are darker than the
background in the green channel, and their contrast grows with width, so thin
vessels are the hard cases. Writes images, vessel ground truth and FOV masks in
the DRIVE folder convention together with a manifest CSV.

Functions/Classes:
- `class SyntheticSample`: One generated image with its masks
- `render_sample(rng, size)`: Draw one sample
- `generate_corpus(out_dir, count, size, n_train, seed)`: Write a full corpus
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .dataio import DatasetManifest, ManifestEntry
from .errors import ArgumentError
from .preprocess import derive_rng
from .utils.file_handler import FileHandler

MIN_WIDTH, MAX_WIDTH = 1, 5


@dataclass
class SyntheticSample:
    rgb: np.ndarray
    vessels: np.ndarray
    fov: np.ndarray


def _curve(rng: np.random.Generator, size: int, centre: float, radius: float) -> np.ndarray:
    """A smooth random walk starting inside the FOV, as an int32 polyline."""
    angle = rng.uniform(0, 2 * np.pi)
    r = radius * np.sqrt(rng.uniform(0.0, 0.8))
    point = np.array([centre + r * np.cos(angle), centre + r * np.sin(angle)])
    heading = rng.uniform(0, 2 * np.pi)
    points = [point.copy()]
    for _ in range(int(rng.integers(12, 30))):
        heading += rng.normal(0.0, 0.35)
        point = point + rng.uniform(3.0, 6.0) * np.array([np.cos(heading), np.sin(heading)])
        if not (0 <= point[0] < size and 0 <= point[1] < size):
            break
        points.append(point.copy())
    return np.rint(np.array(points)).astype(np.int32).reshape(-1, 1, 2)


def render_sample(rng: np.random.Generator, size: int = 128) -> SyntheticSample:
    """Draw vessels and background for one image."""
    centre = (size - 1) / 2.0
    radius = 0.47 * size
    yy, xx = np.mgrid[0:size, 0:size]
    fov = (yy - centre) ** 2 + (xx - centre) ** 2 <= radius ** 2

    vessels = np.zeros((size, size), dtype=np.uint8)
    darkening = np.zeros((size, size), dtype=np.float32)
    for _ in range(int(rng.integers(9, 15))):
        width = int(rng.integers(MIN_WIDTH, MAX_WIDTH + 1))
        line = _curve(rng, size, centre, radius)
        if len(line) < 2:
            continue
        contrast = float(18 + 11 * width + rng.uniform(-4, 4))
        layer = np.zeros_like(darkening)
        cv2.polylines(layer, [line], isClosed=False, color=contrast, thickness=width)
        cv2.polylines(vessels, [line], isClosed=False, color=255, thickness=width)
        np.maximum(darkening, layer, out=darkening)

    gradient = 20.0 * (xx - centre) / size + rng.uniform(-10, 10)
    green = 140.0 + gradient - darkening
    green = cv2.GaussianBlur(green.astype(np.float32), (3, 3), 0.6)
    green += rng.normal(0.0, 4.0, size=green.shape)

    rgb = np.stack([green * 1.5 + 20.0, green, green * 0.45], axis=-1)
    rgb[~fov] = 4.0
    rgb = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    return SyntheticSample(rgb=rgb, vessels=(vessels > 0) & fov, fov=fov)


def generate_corpus(out_dir: Path, count: int = 60, size: int = 128, n_train: int = 48,
                    seed: int = 0) -> DatasetManifest:
    """Write `count` samples (the first `n_train` tagged train) and `manifest.csv`."""
    if count < 1 or not 0 <= n_train <= count:
        raise ArgumentError(f"need count >= 1 and 0 <= n_train <= count, got {count}, {n_train}")
    if size < 16:
        raise ArgumentError(f"image size must be >= 16, got {size}")

    out_dir = Path(out_dir)
    handler = FileHandler()
    entries = []
    for index in range(count):
        sample = render_sample(derive_rng(seed, index), size)
        stem = f"{index + 1:02d}"
        image_path = handler.save_rgb_png(sample.rgb, out_dir / "images" / f"{stem}_synthetic.png")
        gt_path = handler.save_gray_png(sample.vessels.astype(np.uint8) * 255,
                                        out_dir / "1st_manual" / f"{stem}_manual1.png")
        fov_path = handler.save_gray_png(sample.fov.astype(np.uint8) * 255, out_dir / "mask" / f"{stem}_mask.png")
        entries.append(ManifestEntry(image=image_path, ground_truth=gt_path, fov=fov_path,
                                     split="train" if index < n_train else "test"))

    manifest = DatasetManifest(entries=entries, source=out_dir / "manifest.csv")
    manifest.write(out_dir / "manifest.csv")
    logging.info(f"Generated {count} synthetic images ({n_train} train) in {out_dir}")
    return manifest
