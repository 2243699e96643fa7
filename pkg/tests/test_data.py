"""Manifest round-trips, validation errors, image loading, synthetic corpus."""

import hashlib
from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest
from PIL import Image

from diffusion_iqa.data import (
    ImageDataset,
    ImageRecord,
    load_image,
    load_manifest,
    write_manifest,
)
from diffusion_iqa.errors import InvalidBoundsError, ManifestError
from diffusion_iqa.synth import (
    additive_noise,
    base_image,
    distort,
    gaussian_blur,
    jpeg_like,
    level_to_mos,
    make_dataset,
)


def tiny_dataset(tmp_path, n=6):
    records = []
    for i in range(n):
        path = tmp_path / "images" / f"img-{i}.png"
        path.parent.mkdir(exist_ok=True)
        rng = np.random.default_rng(i)
        arr = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
        Image.fromarray(arr, mode="RGB").save(path)
        split = ("train", "train", "train", "val", "test", "test")[i]
        records.append(ImageRecord(image_id=f"img-{i}", path=path, mos=10.0 * i, split=split))
    return ImageDataset(name="tiny", mos_scale=(0.0, 100.0), records=tuple(records))


def test_manifest_round_trip(tmp_path):
    dataset = tiny_dataset(tmp_path)
    manifest = write_manifest(dataset, tmp_path / "manifest.tsv")
    loaded = load_manifest(manifest)
    assert loaded.name == "tiny"
    assert loaded.mos_scale == (0.0, 100.0)
    assert len(loaded) == 6
    for orig, back in zip(dataset.records, loaded.records):
        assert back.image_id == orig.image_id
        assert back.split == orig.split
        assert back.mos == pytest.approx(orig.mos)
        assert back.path.resolve() == orig.path.resolve()


def test_manifest_round_trip_from_relative_root(tmp_path, monkeypatch):
    # A dataset generated into a CWD-relative directory must load back with
    # paths that resolve, not with the root prefixed twice.
    monkeypatch.chdir(tmp_path)
    dataset = make_dataset("rel-data", count=4, distortion="blur", seed=2, image_size=32)
    loaded = load_manifest(Path("rel-data") / "manifest.tsv")
    for record in loaded.records:
        assert record.path.is_file(), record.path
    assert {r.image_id for r in loaded.records} == {r.image_id for r in dataset.records}


def test_split_selection(tmp_path):
    dataset = tiny_dataset(tmp_path)
    assert [r.image_id for r in dataset.split("val")] == ["img-3"]
    assert len(dataset.split("train")) == 3
    assert dataset.by_id("img-4").split == "test"
    with pytest.raises(ManifestError):
        dataset.split("holdout")
    with pytest.raises(ManifestError):
        dataset.by_id("missing")


def write_lines(tmp_path, lines):
    path = tmp_path / "manifest.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


GOOD_HEADER = ["# dataset: t", "# mos_scale: 0 100", "image_id\tpath\tmos\tsplit"]


@pytest.mark.parametrize(
    "lines, fragment",
    [
        (GOOD_HEADER[:2] + ["bad header"], "line 3"),
        (GOOD_HEADER + ["a\tp.png\t50\ttrain", "a\tq.png\t60\ttest"], "duplicate"),
        (GOOD_HEADER + ["a\tp.png\tfifty\ttrain"], "not numeric"),
        (GOOD_HEADER + ["a\tp.png\t150\ttrain"], "outside scale"),
        (GOOD_HEADER + ["a\tp.png\t50\tholdout"], "unknown split"),
        (GOOD_HEADER + ["a\tp.png\t50"], "4 tab-separated fields"),
        (["# mos_scale: 0 100", "image_id\tpath\tmos\tsplit", "a\tp.png\t5\ttrain"], "dataset"),
        (["# dataset: t", "image_id\tpath\tmos\tsplit", "a\tp.png\t5\ttrain"], "mos_scale"),
        (GOOD_HEADER, "no image rows"),
        (GOOD_HEADER[:1] + ["# mos_scale: 100 0", GOOD_HEADER[2], "a\tp.png\t5\ttrain"], "lo must be"),
    ],
)
def test_manifest_validation_errors(tmp_path, lines, fragment):
    path = write_lines(tmp_path, lines)
    with pytest.raises(ManifestError, match=fragment):
        load_manifest(path)


def test_missing_manifest(tmp_path):
    with pytest.raises(ManifestError, match="not found"):
        load_manifest(tmp_path / "nope.tsv")


def test_load_image_shape_and_range(tmp_path):
    dataset = tiny_dataset(tmp_path)
    img = load_image(dataset.records[0].path, image_size=16)
    assert img.shape == (3, 16, 16)
    assert img.dtype == np.float64
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_load_image_resizes(tmp_path):
    path = tmp_path / "big.png"
    arr = np.zeros((64, 64, 3), dtype=np.uint8)
    arr[:32] = 255
    Image.fromarray(arr, mode="RGB").save(path)
    img = load_image(path, image_size=16)
    assert img.shape == (3, 16, 16)
    # Top half white, bottom half black must survive bilinear downsampling.
    assert img[:, :7].mean() > 0.9
    assert img[:, 9:].mean() < 0.1


def test_load_image_missing_file(tmp_path):
    with pytest.raises(ManifestError, match="not found"):
        load_image(tmp_path / "absent.png", image_size=16)


def test_level_to_mos_endpoints():
    assert level_to_mos(0) == 100.0
    assert level_to_mos(10) == 0.0
    assert level_to_mos(5) == 50.0
    with pytest.raises(InvalidBoundsError):
        level_to_mos(11)


def test_base_image_deterministic():
    a = base_image(np.random.default_rng(7), size=64)
    b = base_image(np.random.default_rng(7), size=64)
    npt.assert_array_equal(a, b)
    assert a.shape == (3, 64, 64)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_distortions_reduce_fidelity_monotonically():
    """Mean squared error against the pristine image must grow with level."""
    img = base_image(np.random.default_rng(8), size=64)
    for kind in ("blur", "noise", "jpeg"):
        errors = []
        for level in (0, 2, 5, 9):
            rng = np.random.default_rng(9)
            out = distort(img, kind, level, rng)
            errors.append(float(((out - img) ** 2).mean()))
        assert errors[0] == 0.0
        assert errors[1] < errors[2] < errors[3], (kind, errors)


def test_blur_removes_high_frequency_energy():
    img = base_image(np.random.default_rng(10), size=64)
    sharp = np.abs(np.diff(img, axis=2)).mean()
    blurred = gaussian_blur(img, 8)
    assert np.abs(np.diff(blurred, axis=2)).mean() < 0.5 * sharp


def test_level_zero_is_identity():
    img = base_image(np.random.default_rng(11), size=64)
    rng = np.random.default_rng(12)
    npt.assert_array_equal(gaussian_blur(img, 0), img)
    npt.assert_array_equal(additive_noise(img, 0, rng), img)
    npt.assert_array_equal(jpeg_like(img, 0), img)


def test_distort_rejects_bad_arguments():
    img = base_image(np.random.default_rng(13), size=64)
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidBoundsError):
        distort(img, "vignette", 3, rng)
    with pytest.raises(InvalidBoundsError):
        distort(img, "blur", 11, rng)


def test_make_dataset_writes_corpus(tmp_path):
    dataset = make_dataset(tmp_path / "d", count=20, distortion="blur", seed=3, image_size=32)
    assert len(dataset) == 20
    assert len(dataset.split("train")) == 14
    assert len(dataset.split("val")) == 2
    assert len(dataset.split("test")) == 4
    for record in dataset.records:
        assert record.path.is_file()
        assert 0.0 <= record.mos <= 100.0
    loaded = load_manifest(tmp_path / "d" / "manifest.tsv")
    assert [r.image_id for r in loaded.records] == [r.image_id for r in dataset.records]


def test_make_dataset_bit_identical_across_runs(tmp_path):
    first = make_dataset(tmp_path / "a", count=8, distortion="noise", seed=5, image_size=32)
    second = make_dataset(tmp_path / "b", count=8, distortion="noise", seed=5, image_size=32)
    for ra, rb in zip(first.records, second.records):
        assert ra.mos == rb.mos and ra.split == rb.split
        ha = hashlib.sha256(ra.path.read_bytes()).hexdigest()
        hb = hashlib.sha256(rb.path.read_bytes()).hexdigest()
        assert ha == hb
    third = make_dataset(tmp_path / "c", count=8, distortion="noise", seed=6, image_size=32)
    hashes_a = {hashlib.sha256(r.path.read_bytes()).hexdigest() for r in first.records}
    hashes_c = {hashlib.sha256(r.path.read_bytes()).hexdigest() for r in third.records}
    assert hashes_a != hashes_c


def test_make_dataset_levels_cover_range(tmp_path):
    dataset = make_dataset(tmp_path / "d", count=60, distortion="blur", seed=1, image_size=32)
    scores = {r.mos for r in dataset.records}
    assert len(scores) >= 8
