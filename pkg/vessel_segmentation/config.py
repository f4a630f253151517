"""
Purpose: Configuration settings and environment management

High-level Overview:
Centralized configuration management with support for environment variables,
raster and checkpoint format constants, and the small configuration sections
used by preprocessing, labelling and evaluation.

Key Components:
- Environment variable management through python-dotenv
- Class-map and checkpoint format constants
- Section dataclasses filled from key=value config files

Functions/Classes:
- `class Config`: Configuration class with class methods
  - Class Variables:
    - `SUPPORTED_EXTENSIONS`: Raster file extensions accepted by dataio
    - `CLASS_NAMES`: Names of the five label classes
    - `CLASS_PNG_LEVELS`: Gray levels used to store class maps as PNG
    - `CHECKPOINT_MAGIC` / `CHECKPOINT_VERSION`: Checkpoint container header
  - `@classmethod get_log_level(cls)`: Log level from `VSEG_LOG_LEVEL`
  - `@classmethod get_output_dir(cls)`: Default output directory from `VSEG_OUTPUT_DIR`
  - `@classmethod get_default_seed(cls)`: Default seed from `VSEG_SEED`
- `class PreprocessConfig`: CLAHE and patch parameters (`pre.*` keys)
- `class LabelConfig`: Label scheme and band radius (`label.*` keys)
- `class EvalConfig`: Inference stride and batching (`eval.*` keys)
"""

import os
from dataclasses import dataclass
from typing import Tuple

from dotenv import load_dotenv

from .errors import ConfigError

# Load environment variables
load_dotenv()


class Config:
    """Configuration class for the toolkit."""

    # Raster formats accepted by dataio (binary PNM and PNG only)
    SUPPORTED_EXTENSIONS = {'.png', '.ppm', '.pgm', '.pnm'}

    # Class scheme of the edge-aware labels
    NUM_CLASSES = 5
    CLASS_NAMES = [
        "background",
        "near_thick",
        "near_thin",
        "thick_vessel",
        "thin_vessel",
    ]
    CLASS_PNG_LEVELS = [0, 60, 120, 180, 240]

    # Checkpoint container
    CHECKPOINT_MAGIC = b"VSEG"
    CHECKPOINT_VERSION = 1
    CHECKPOINT_SUFFIX = ".vseg"

    DEFAULT_OUTPUT_DIR = "runs"
    DEFAULT_LOG_LEVEL = "WARNING"
    DEFAULT_SEED = 0

    @classmethod
    def get_log_level(cls) -> str:
        """Get log level from environment each time (supports runtime overrides)."""
        load_dotenv(override=True)
        return os.getenv("VSEG_LOG_LEVEL", cls.DEFAULT_LOG_LEVEL).upper()

    @classmethod
    def get_output_dir(cls) -> str:
        """Get the default output directory."""
        load_dotenv(override=True)
        return os.getenv("VSEG_OUTPUT_DIR", cls.DEFAULT_OUTPUT_DIR)

    @classmethod
    def get_default_seed(cls) -> int:
        """Get the default seed; malformed values raise ConfigError."""
        load_dotenv(override=True)
        raw = os.getenv("VSEG_SEED", str(cls.DEFAULT_SEED))
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"VSEG_SEED must be an integer, got {raw!r}")


@dataclass
class PreprocessConfig:
    """CLAHE and patching parameters."""
    patch_size: int = 96
    clahe_tiles: Tuple[int, int] = (8, 8)
    clahe_clip: float = 2.0

    def validate(self) -> None:
        if self.patch_size < 1:
            raise ConfigError(f"pre.patch_size must be positive, got {self.patch_size}")
        if len(self.clahe_tiles) != 2 or min(self.clahe_tiles) < 1:
            raise ConfigError(f"pre.clahe_tiles must be two positive integers, got {self.clahe_tiles}")
        if self.clahe_clip <= 0:
            raise ConfigError(f"pre.clahe_clip must be positive, got {self.clahe_clip}")


@dataclass
class LabelConfig:
    """Label generation parameters."""
    band_radius: int = 2
    scheme: str = "edge_aware"

    def validate(self) -> None:
        if self.band_radius < 1:
            raise ConfigError(f"label.band_radius must be >= 1, got {self.band_radius}")
        if self.scheme not in ("edge_aware", "binary"):
            raise ConfigError(f"label.scheme must be edge_aware or binary, got {self.scheme!r}")


@dataclass
class EvalConfig:
    """Whole-image inference parameters."""
    stride: int = 48
    batch_size: int = 8
    use_fov: bool = True

    def validate(self, patch_size: int) -> None:
        if not 1 <= self.stride <= patch_size:
            raise ConfigError(f"eval.stride must lie in [1, {patch_size}], got {self.stride}")
        if self.batch_size < 1:
            raise ConfigError(f"eval.batch_size must be positive, got {self.batch_size}")


