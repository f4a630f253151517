"""
Purpose: Load fundus images, masks and manifests; persist model checkpoints

High-level Overview:
Reads the raster inputs of the pipeline (PNG and binary PPM/PGM through Pillow),
parses the dataset manifest (CSV or a DRIVE-style directory tree) and writes or
reads checkpoints in the portable "VSEG" binary container.

Key Components:
- Raster decoding with grayscale-to-RGB replication
- Offset-reporting validation of PNM payload lengths
- Manifest parsing with per-line diagnostics and file validation
- Bit-exact little-endian float32 checkpoint container

Functions/Classes:
- `class FundusImage`: RGB uint8 raster
- `class BinaryMask`: Boolean raster (vessel ground truth or FOV)
- `class ManifestEntry` / `class DatasetManifest`: Dataset listing
- `class Checkpoint`: Epoch, digest and named float32 tensors
- `load_image(path)`: Decode a raster into a FundusImage
- `load_mask(path, threshold=127)`: Decode a raster into a BinaryMask
- `load_manifest(path)`: Parse a manifest file or DRIVE-layout directory
- `write_checkpoint(ckpt, path)` / `read_checkpoint(path)`: Checkpoint I/O
"""

import io
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Union

import numpy as np
from PIL import Image

from .config import Config
from .errors import (
    CheckpointFormatError,
    CheckpointLengthError,
    CheckpointVersionError,
    ImageDecodeError,
    ManifestParseError,
    ManifestValidationError,
    ShapeError,
)

PathLike = Union[str, Path]

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
PNM_CHANNELS = {b"P5": 1, b"P6": 3}


@dataclass
class FundusImage:
    """RGB fundus photograph, uint8 data of shape (height, width, 3)."""
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ShapeError(f"FundusImage needs (H, W, 3) data, got {self.data.shape}")
        if self.data.shape[0] == 0 or self.data.shape[1] == 0:
            raise ShapeError(f"FundusImage must be nonempty, got {self.data.shape}")
        self.data = np.ascontiguousarray(self.data, dtype=np.uint8)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 3


@dataclass
class BinaryMask:
    """Boolean raster of shape (height, width)."""
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ShapeError(f"BinaryMask needs 2-D data, got {self.data.shape}")
        self.data = np.ascontiguousarray(self.data, dtype=bool)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def count(self) -> int:
        return int(self.data.sum())


@dataclass
class ManifestEntry:
    """One dataset item: image, ground truth, optional FOV mask and split tag."""
    image: Path
    ground_truth: Path
    fov: Optional[Path]
    split: str
    line: int = 0

    @property
    def stem(self) -> str:
        return self.image.stem

    def paths(self) -> List[Path]:
        return [p for p in (self.image, self.ground_truth, self.fov) if p is not None]


@dataclass
class DatasetManifest:
    """Ordered list of dataset entries."""
    entries: List[ManifestEntry] = field(default_factory=list)
    source: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def split(self, tag: str) -> List[ManifestEntry]:
        """Entries carrying the given split tag, in manifest order."""
        return [entry for entry in self.entries if entry.split == tag]

    def splits(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for entry in self.entries:
            counts[entry.split] = counts.get(entry.split, 0) + 1
        return counts

    def write(self, path: PathLike) -> None:
        """Write the manifest as CSV with paths relative to its directory."""
        path = Path(path)
        base = path.parent.resolve()
        lines = ["# image,ground_truth[,fov],split"]
        for entry in self.entries:
            fields = [_relative(entry.image, base), _relative(entry.ground_truth, base)]
            if entry.fov is not None:
                fields.append(_relative(entry.fov, base))
            fields.append(entry.split)
            lines.append(",".join(fields))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class Checkpoint:
    """Named float32 tensors plus the epoch and training-config digest."""
    epoch: int
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    digest: bytes = b""
    version: int = Config.CHECKPOINT_VERSION

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if (self.version, self.epoch, self.digest) != (other.version, other.epoch, other.digest):
            return False
        if list(self.tensors) != list(other.tensors):
            return False
        for name, value in self.tensors.items():
            theirs = other.tensors[name]
            if value.shape != theirs.shape:
                return False
            if _f32_bytes(value) != _f32_bytes(theirs):
                return False
        return True


def load_image(path: PathLike) -> FundusImage:
    """Decode a PNG/PPM/PGM raster; grayscale sources are replicated to 3 channels."""
    return FundusImage(_decode_raster(Path(path)))


def load_mask(path: PathLike, threshold: int = 127) -> BinaryMask:
    """Decode a raster and threshold its first channel (value > threshold)."""
    rgb = _decode_raster(Path(path))
    return BinaryMask(rgb[:, :, 0] > threshold)


def _decode_raster(path: Path) -> np.ndarray:
    """Read a supported raster file into an (H, W, 3) uint8 array."""
    if not path.exists():
        raise FileNotFoundError(f"image file not found: {path}")
    raw = path.read_bytes()

    if raw.startswith(PNG_SIGNATURE):
        pass
    elif raw[:2] in PNM_CHANNELS:
        _check_pnm_payload(raw, path)
    else:
        raise ImageDecodeError(str(path), 0, "unsupported raster format (expected PNG or binary PPM/PGM)")

    try:
        with Image.open(io.BytesIO(raw)) as image:
            image.load()
            rgb = np.asarray(image.convert("RGB"), dtype=np.uint8)
    except (OSError, SyntaxError, ValueError) as e:
        raise ImageDecodeError(str(path), None, f"{e} (decoder did not report an offset)")

    if rgb.shape[0] == 0 or rgb.shape[1] == 0:
        raise ImageDecodeError(str(path), None, "raster has zero area")
    return rgb


def _check_pnm_payload(raw: bytes, path: Path) -> None:
    """Validate a binary PNM header and payload length, naming offsets on failure."""
    channels = PNM_CHANNELS[raw[:2]]
    values = []
    offset = 2
    while len(values) < 3:
        # whitespace and comments between header tokens
        while offset < len(raw) and (raw[offset:offset + 1].isspace() or raw[offset:offset + 1] == b"#"):
            if raw[offset:offset + 1] == b"#":
                newline = raw.find(b"\n", offset)
                offset = len(raw) if newline < 0 else newline + 1
            else:
                offset += 1
        start = offset
        while offset < len(raw) and raw[offset:offset + 1].isdigit():
            offset += 1
        if start == offset:
            raise ImageDecodeError(str(path), start, "malformed PNM header")
        values.append(int(raw[start:offset]))

    width, height, maxval = values
    if offset >= len(raw) or not raw[offset:offset + 1].isspace():
        raise ImageDecodeError(str(path), offset, "PNM header is not terminated by whitespace")
    header_end = offset + 1
    if width == 0 or height == 0:
        raise ImageDecodeError(str(path), 2, "PNM raster has zero area")
    if not 0 < maxval < 256:
        raise ImageDecodeError(str(path), start, f"unsupported PNM maxval {maxval} (8-bit only)")

    expected = width * height * channels
    available = len(raw) - header_end
    if available < expected:
        raise ImageDecodeError(
            str(path), len(raw),
            f"truncated payload: {available} of {expected} bytes after header ending at offset {header_end}",
        )


def load_manifest(path: PathLike) -> DatasetManifest:
    """Parse a manifest CSV (image,gt[,fov],split) or discover a DRIVE-style directory."""
    path = Path(path)
    if path.is_dir():
        from .utils.file_handler import FileHandler
        manifest = FileHandler().discover_drive_layout(path)
        _validate_manifest(manifest)
        return manifest
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")

    base = path.parent
    entries = []
    text = path.read_text(encoding="utf-8")
    for line_number, raw_line in enumerate(text.split("\n"), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        fields = [item.strip() for item in line.split(",")]
        if len(fields) == 3:
            image, gt, split = fields
            fov = ""
        elif len(fields) == 4:
            image, gt, fov, split = fields
        else:
            raise ManifestParseError(str(path), line_number,
                                     f"expected 3 or 4 comma-separated fields, got {len(fields)}")
        if not split:
            raise ManifestParseError(str(path), line_number, "empty split tag")
        if not image or not gt:
            raise ManifestParseError(str(path), line_number, "empty image or ground-truth path")
        entries.append(ManifestEntry(
            image=base / image,
            ground_truth=base / gt,
            fov=base / fov if fov else None,
            split=split,
            line=line_number,
        ))

    manifest = DatasetManifest(entries=entries, source=path)
    _validate_manifest(manifest)
    logging.info(f"Loaded manifest {path} with {len(entries)} entries {manifest.splits()}")
    return manifest


def _validate_manifest(manifest: DatasetManifest) -> None:
    missing = []
    for entry in manifest.entries:
        for p in entry.paths():
            if not p.exists():
                missing.append(f"line {entry.line}: {p}" if entry.line else str(p))
    if missing:
        raise ManifestValidationError(missing)


def _relative(path: Path, base: Path) -> str:
    try:
        return Path(os.path.relpath(Path(path).resolve(), base)).as_posix()
    except ValueError:
        return Path(path).as_posix()


def _f32_bytes(value: np.ndarray) -> bytes:
    return np.ascontiguousarray(value, dtype="<f4").tobytes()


def write_checkpoint(ckpt: Checkpoint, path: PathLike) -> None:
    """Write a checkpoint atomically in the VSEG container format."""
    path = Path(path)
    chunks = [
        Config.CHECKPOINT_MAGIC,
        struct.pack("<II", ckpt.version, ckpt.epoch),
        struct.pack("<H", len(ckpt.digest)),
        bytes(ckpt.digest),
        struct.pack("<I", len(ckpt.tensors)),
    ]
    for name, value in ckpt.tensors.items():
        value = np.asarray(value)
        if value.ndim == 0 or any(dim == 0 for dim in value.shape):
            raise ShapeError(f"tensor {name!r} has an empty shape {value.shape}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(_f32_bytes(value))

    path.parent.mkdir(parents=True, exist_ok=True)
    staging = path.with_name(path.name + ".tmp")
    staging.write_bytes(b"".join(chunks))
    os.replace(staging, path)
    logging.info(f"Wrote checkpoint {path} (epoch {ckpt.epoch}, {len(ckpt.tensors)} tensors)")


class _ByteReader:
    """Sequential reader that reports truncation with the failing offset."""

    def __init__(self, buf: bytes, path: Path):
        self.buf = buf
        self.offset = 0
        self.path = path

    def take(self, count: int) -> bytes:
        end = self.offset + count
        if end > len(self.buf):
            raise CheckpointLengthError(
                f"{self.path}: truncated at byte {len(self.buf)}, needed {count} bytes at offset {self.offset}"
            )
        chunk = self.buf[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path: PathLike) -> Checkpoint:
    """Read a checkpoint written by `write_checkpoint`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if buf[:4] != Config.CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (magic {buf[:4]!r})")

    reader = _ByteReader(buf, path)
    reader.take(4)
    version, epoch = reader.unpack("<II")
    if version > Config.CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version} is newer than supported {Config.CHECKPOINT_VERSION}"
        )
    (digest_len,) = reader.unpack("<H")
    digest = reader.take(digest_len)
    (count,) = reader.unpack("<I")

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I")
        size = int(np.prod(shape))
        payload = reader.take(4 * size)
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)

    return Checkpoint(epoch=epoch, tensors=tensors, digest=digest, version=version)
