"""
Purpose: Dataset discovery and artifact file handling

High-level Overview:
Handles file system operations around a run: discovering DRIVE-style dataset
trees, creating output directories, and writing the PNG artifacts (class maps,
probability maps, masks and RGB figures) the CLI emits.

Key Components:
- DRIVE directory-convention discovery (images/, 1st_manual/, mask/)
- Supported-extension filtering
- Output directory management
- Lossless PNG writers and the class-map PNG codec

Functions/Classes:
- `class FileHandler`: File handling operations
  - `discover_drive_layout(self, root)`: Build a manifest from a DRIVE-style tree
  - `_find_raster(self, directory, stem)`: Locate a raster by stem with any supported extension
  - `_is_supported_file(self, file_path)`: Check if file extension is supported
  - `ensure_dir(self, path)`: Create an output directory if absent
  - `save_gray_png(self, array, path)`: Write a 2-D array (uint8 or [0,1] float) as PNG
  - `save_rgb_png(self, array, path)`: Write an (H, W, 3) uint8 array as PNG
  - `save_class_map(self, labels, path)`: Write class indices as gray levels {0,60,...,240}
  - `load_class_map(self, path)`: Inverse of `save_class_map`
"""

import logging
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image

from ..config import Config


class FileHandler:
    """Handle dataset discovery and artifact files."""

    DRIVE_SPLITS = {"training": "train", "test": "test"}

    def discover_drive_layout(self, root: Path):
        """Build a manifest from root/{training,test}/{images,1st_manual,mask}."""
        from ..dataio import DatasetManifest, ManifestEntry

        root = Path(root)
        entries: List[ManifestEntry] = []
        for folder, split in self.DRIVE_SPLITS.items():
            split_dir = root / folder
            images_dir = split_dir / "images"
            if not images_dir.is_dir():
                continue

            for image_path in sorted(images_dir.iterdir()):
                if not (image_path.is_file() and self._is_supported_file(image_path)):
                    continue
                image_id = image_path.stem.split("_")[0]
                gt = self._find_raster(split_dir / "1st_manual", f"{image_id}_manual1")
                fov = self._find_raster(split_dir / "mask", f"{image_id}_{folder}_mask")
                entries.append(ManifestEntry(
                    image=image_path,
                    ground_truth=gt or split_dir / "1st_manual" / f"{image_id}_manual1.png",
                    fov=fov,
                    split=split,
                ))

        logging.info(f"Discovered {len(entries)} entries in DRIVE layout {root}")
        return DatasetManifest(entries=entries, source=root)

    def _find_raster(self, directory: Path, stem: str) -> Optional[Path]:
        """Find `directory/stem.<ext>` for any supported extension."""
        if not directory.is_dir():
            return None
        for candidate in sorted(directory.glob(f"{stem}.*")):
            if self._is_supported_file(candidate):
                return candidate
        return None

    def _is_supported_file(self, file_path: Path) -> bool:
        """Check if file extension is supported."""
        return file_path.suffix.lower() in Config.SUPPORTED_EXTENSIONS

    def ensure_dir(self, path: Path) -> Path:
        """Create a directory (and parents) if absent."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def save_gray_png(self, array: np.ndarray, path: Path) -> Path:
        """Write a 2-D array as 8-bit PNG; float input is taken to lie in [0, 1]."""
        array = np.asarray(array)
        if array.dtype != np.uint8:
            array = np.clip(np.rint(np.asarray(array, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
        self.ensure_dir(Path(path).parent)
        Image.fromarray(np.ascontiguousarray(array)).save(path)
        return Path(path)

    def save_rgb_png(self, array: np.ndarray, path: Path) -> Path:
        """Write an (H, W, 3) uint8 array as PNG."""
        self.ensure_dir(Path(path).parent)
        Image.fromarray(np.ascontiguousarray(array, dtype=np.uint8)).save(path)
        return Path(path)

    def save_class_map(self, labels: np.ndarray, path: Path) -> Path:
        """Write class indices 0-4 as gray levels 0, 60, 120, 180, 240."""
        levels = np.asarray(Config.CLASS_PNG_LEVELS, dtype=np.uint8)
        return self.save_gray_png(levels[np.asarray(labels, dtype=np.intp)], path)

    def load_class_map(self, path: Path) -> np.ndarray:
        """Read a class-map PNG back into class indices."""
        with Image.open(path) as image:
            gray = np.asarray(image.convert("L"), dtype=np.int32)
        step = Config.CLASS_PNG_LEVELS[1]
        return np.clip((gray + step // 2) // step, 0, Config.NUM_CLASSES - 1).astype(np.uint8)
