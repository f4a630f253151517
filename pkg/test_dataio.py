"""Tests for raster, manifest and checkpoint I/O."""

import numpy as np
import pytest
from PIL import Image

from vessel_segmentation.dataio import (
    Checkpoint,
    load_image,
    load_manifest,
    load_mask,
    read_checkpoint,
    write_checkpoint,
)
from vessel_segmentation.errors import (
    CheckpointFormatError,
    CheckpointLengthError,
    CheckpointVersionError,
    ImageDecodeError,
    ManifestParseError,
    ManifestValidationError,
    VesselSegError,
)
from vessel_segmentation.network import ParamStore, init_params


def _write_png(path, array):
    Image.fromarray(array).save(path)
    return path


def test_load_image_png_rgb(tmp_path):
    data = np.arange(4 * 5 * 3, dtype=np.uint8).reshape(4, 5, 3)
    img = load_image(_write_png(tmp_path / "a.png", data))
    assert (img.height, img.width, img.channels) == (4, 5, 3)
    np.testing.assert_array_equal(img.data, data)


def test_load_image_replicates_grayscale(tmp_path):
    gray = np.array([[0, 10], [200, 255]], dtype=np.uint8)
    img = load_image(_write_png(tmp_path / "g.png", gray))
    for channel in range(3):
        np.testing.assert_array_equal(img.data[:, :, channel], gray)


def test_load_image_binary_ppm(tmp_path):
    pixels = bytes(range(2 * 3 * 3))
    path = tmp_path / "a.ppm"
    path.write_bytes(b"P6\n# comment\n3 2\n255\n" + pixels)
    img = load_image(path)
    np.testing.assert_array_equal(img.data.ravel(), np.frombuffer(pixels, dtype=np.uint8))


def test_truncated_pnm_reports_offset(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_bytes(b"P5 4 4 255\n" + bytes(10))
    with pytest.raises(ImageDecodeError) as excinfo:
        load_image(path)
    assert excinfo.value.offset == len(path.read_bytes())
    assert "truncated" in str(excinfo.value)


def test_corrupt_png_does_not_claim_an_offset(tmp_path):
    noise = np.random.default_rng(0).integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
    raw = _write_png(tmp_path / "full.png", noise).read_bytes()
    path = tmp_path / "cut.png"
    path.write_bytes(raw[:len(raw) // 2])
    with pytest.raises(ImageDecodeError) as excinfo:
        load_image(path)
    assert excinfo.value.offset is None
    assert "byte offset" not in str(excinfo.value)
    assert "did not report an offset" in str(excinfo.value)


def test_unknown_format_is_decode_error(tmp_path):
    path = tmp_path / "x.png"
    path.write_bytes(b"GIF89a....")
    with pytest.raises(ImageDecodeError):
        load_image(path)


def test_missing_image_is_io_error(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "nope.png")


def test_load_mask_thresholds_first_channel(tmp_path):
    gray = np.array([[0, 127], [128, 255]], dtype=np.uint8)
    mask = load_mask(_write_png(tmp_path / "m.png", gray))
    np.testing.assert_array_equal(mask.data, [[False, False], [True, True]])
    assert mask.count() == 2


def _corpus_files(tmp_path, names):
    for name in names:
        _write_png(tmp_path / name, np.zeros((4, 4), dtype=np.uint8))


def test_manifest_csv_with_and_without_fov(tmp_path):
    _corpus_files(tmp_path, ["a.png", "a_gt.png", "a_fov.png", "b.png", "b_gt.png"])
    (tmp_path / "m.csv").write_text(
        "# image,gt,fov,split\n\na.png,a_gt.png,a_fov.png,train\nb.png, b_gt.png ,test\n"
    )
    manifest = load_manifest(tmp_path / "m.csv")
    assert len(manifest) == 2
    first, second = manifest.entries
    assert first.fov == tmp_path / "a_fov.png"
    assert second.fov is None
    assert second.ground_truth == tmp_path / "b_gt.png"
    assert [e.stem for e in manifest.split("test")] == ["b"]
    assert manifest.splits() == {"train": 1, "test": 1}


def test_manifest_bad_field_count_names_line(tmp_path):
    (tmp_path / "m.csv").write_text("# header\na.png,train\n")
    with pytest.raises(ManifestParseError) as excinfo:
        load_manifest(tmp_path / "m.csv")
    assert excinfo.value.line_number == 2


def test_manifest_lists_every_missing_file(tmp_path):
    _corpus_files(tmp_path, ["a.png"])
    (tmp_path / "m.csv").write_text("a.png,a_gt.png,train\nb.png,b_gt.png,test\n")
    with pytest.raises(ManifestValidationError) as excinfo:
        load_manifest(tmp_path / "m.csv")
    assert len(excinfo.value.missing) == 3


def test_manifest_drive_layout(tmp_path):
    for folder in ("training", "test"):
        for sub in ("images", "1st_manual", "mask"):
            (tmp_path / folder / sub).mkdir(parents=True)
    _write_png(tmp_path / "training/images/21_training.png", np.zeros((4, 4, 3), dtype=np.uint8))
    _write_png(tmp_path / "training/1st_manual/21_manual1.png", np.zeros((4, 4), dtype=np.uint8))
    _write_png(tmp_path / "training/mask/21_training_mask.png", np.zeros((4, 4), dtype=np.uint8))
    _write_png(tmp_path / "test/images/01_test.png", np.zeros((4, 4, 3), dtype=np.uint8))
    _write_png(tmp_path / "test/1st_manual/01_manual1.png", np.zeros((4, 4), dtype=np.uint8))

    manifest = load_manifest(tmp_path)
    assert manifest.splits() == {"train": 1, "test": 1}
    train, = manifest.split("train")
    assert train.fov is not None
    test, = manifest.split("test")
    assert test.fov is None


def test_manifest_write_reads_back(tmp_path):
    _corpus_files(tmp_path, ["a.png", "a_gt.png"])
    (tmp_path / "m.csv").write_text("a.png,a_gt.png,train\n")
    manifest = load_manifest(tmp_path / "m.csv")
    manifest.write(tmp_path / "copy.csv")
    again = load_manifest(tmp_path / "copy.csv")
    assert [(e.image, e.ground_truth, e.split) for e in again] == \
        [(e.image, e.ground_truth, e.split) for e in manifest]


def test_checkpoint_bit_exact(tmp_path, micro_cfg):
    store = init_params(micro_cfg, seed=11)
    store.buffers["stem.bn.running_var"][:] = np.float32(1.2345678)
    ckpt = Checkpoint(epoch=7, tensors=store.to_tensors(), digest=b"\x01" * 32)
    write_checkpoint(ckpt, tmp_path / "c.vseg")
    back = read_checkpoint(tmp_path / "c.vseg")
    assert back == ckpt
    assert back.epoch == 7 and back.digest == b"\x01" * 32
    restored = ParamStore.from_tensors(back.tensors)
    assert restored.names() == store.names()
    for name in store.names():
        assert restored[name].tobytes() == store[name].tobytes()


def test_checkpoint_errors(tmp_path):
    ckpt = Checkpoint(epoch=1, tensors={"w": np.ones((2, 3), dtype=np.float32)})
    path = tmp_path / "c.vseg"
    write_checkpoint(ckpt, path)
    raw = path.read_bytes()

    (tmp_path / "bad_magic").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointFormatError):
        read_checkpoint(tmp_path / "bad_magic")

    (tmp_path / "newer").write_bytes(raw[:4] + (99).to_bytes(4, "little") + raw[8:])
    with pytest.raises(CheckpointVersionError):
        read_checkpoint(tmp_path / "newer")

    (tmp_path / "short").write_bytes(raw[:-3])
    with pytest.raises(CheckpointLengthError):
        read_checkpoint(tmp_path / "short")

    assert all(issubclass(e, VesselSegError)
               for e in (CheckpointFormatError, CheckpointVersionError, CheckpointLengthError))
