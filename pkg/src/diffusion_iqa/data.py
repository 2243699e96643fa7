"""Dataset manifests and image loading.

A dataset is a directory of image files plus a tab-separated manifest:

    # dataset: <name>
    # mos_scale: <lo> <hi>
    image_id<TAB>path<TAB>mos<TAB>split
    blur-00000<TAB>images/blur-00000.png<TAB>70.0<TAB>train
    ...

Paths are relative to the manifest's directory.  Splits are ``train``,
``val``, ``test``.  Loading validates ids, scores, and splits and reports
offending line numbers.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ManifestError

__all__ = ["ImageRecord", "ImageDataset", "load_image", "load_manifest", "write_manifest"]

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ImageRecord:
    """One scored image: stable id, absolute file path, opinion score, split."""

    image_id: str
    path: Path
    mos: float
    split: str


@dataclass(frozen=True)
class ImageDataset:
    """A named collection of scored images with a fixed opinion-score scale."""

    name: str
    mos_scale: tuple[float, float]
    records: tuple[ImageRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def split(self, name: str) -> tuple[ImageRecord, ...]:
        if name not in SPLITS:
            raise ManifestError(f"unknown split {name!r}")
        return tuple(r for r in self.records if r.split == name)

    def by_id(self, image_id: str) -> ImageRecord:
        for record in self.records:
            if record.image_id == image_id:
                return record
        raise ManifestError(f"no record with image_id {image_id!r}")


def write_manifest(dataset: ImageDataset, manifest_path: str | Path) -> Path:
    """Write the manifest, relativizing image paths against its directory."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# dataset: {dataset.name}",
        f"# mos_scale: {dataset.mos_scale[0]:g} {dataset.mos_scale[1]:g}",
        "image_id\tpath\tmos\tsplit",
    ]
    for record in dataset.records:
        # Relativize via resolved paths so a dataset rooted at a relative
        # directory round-trips instead of double-prefixing the root.
        rel = Path(os.path.relpath(Path(record.path).resolve(), manifest_path.parent.resolve()))
        lines.append(f"{record.image_id}\t{rel.as_posix()}\t{record.mos!r}\t{record.split}")
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest_path


def load_manifest(manifest_path: str | Path) -> ImageDataset:
    """Parse and validate a manifest; raises :class:`ManifestError` with the
    offending 1-based line number on any malformed content."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise ManifestError(f"manifest not found: {manifest_path}")
    root = manifest_path.parent
    name = None
    scale = None
    header_seen = False
    records: list[ImageRecord] = []
    seen_ids: set[str] = set()
    for lineno, raw in enumerate(manifest_path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("dataset:"):
                name = body.removeprefix("dataset:").strip()
            elif body.startswith("mos_scale:"):
                parts = body.removeprefix("mos_scale:").split()
                if len(parts) != 2:
                    raise ManifestError(f"line {lineno}: mos_scale needs two numbers")
                try:
                    scale = (float(parts[0]), float(parts[1]))
                except ValueError:
                    raise ManifestError(f"line {lineno}: mos_scale is not numeric") from None
                if not scale[0] < scale[1]:
                    raise ManifestError(f"line {lineno}: mos_scale lo must be < hi")
            continue
        if not header_seen:
            if line.split("\t") != ["image_id", "path", "mos", "split"]:
                raise ManifestError(f"line {lineno}: unexpected header {line!r}")
            header_seen = True
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ManifestError(f"line {lineno}: expected 4 tab-separated fields, got {len(fields)}")
        image_id, rel_path, mos_text, split = fields
        if image_id in seen_ids:
            raise ManifestError(f"line {lineno}: duplicate image_id {image_id!r}")
        seen_ids.add(image_id)
        try:
            mos = float(mos_text)
        except ValueError:
            raise ManifestError(f"line {lineno}: mos {mos_text!r} is not numeric") from None
        if split not in SPLITS:
            raise ManifestError(f"line {lineno}: unknown split {split!r}")
        if scale is not None and not scale[0] <= mos <= scale[1]:
            raise ManifestError(f"line {lineno}: mos {mos} outside scale {scale}")
        records.append(
            ImageRecord(image_id=image_id, path=root / rel_path, mos=mos, split=split)
        )
    if name is None:
        raise ManifestError("manifest is missing the '# dataset:' line")
    if scale is None:
        raise ManifestError("manifest is missing the '# mos_scale:' line")
    if not header_seen:
        raise ManifestError("manifest is missing the header row")
    if not records:
        raise ManifestError("manifest has no image rows")
    return ImageDataset(name=name, mos_scale=scale, records=tuple(records))


def load_image(path: str | Path, image_size: int) -> np.ndarray:
    """Load an image as a channels-first float64 array in [0, 1].

    Files are converted to RGB and, when needed, resized to
    ``image_size x image_size`` with bilinear interpolation
    (align_corners=False).
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"image file not found: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    chw = np.ascontiguousarray(arr.transpose(2, 0, 1))
    if chw.shape[1:] != (image_size, image_size):
        tensor = torch.from_numpy(chw).unsqueeze(0)
        tensor = F.interpolate(
            tensor, size=(image_size, image_size), mode="bilinear", align_corners=False
        )
        chw = tensor.squeeze(0).numpy()
    return chw
