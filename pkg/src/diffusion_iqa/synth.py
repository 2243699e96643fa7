"""Procedural image corpus with graded distortions and known opinion scores.

Each base image mixes a smooth color gradient, a few sinusoidal gratings,
soft geometric shapes, and fine texture noise, so that blur, additive noise,
and block-transform quantization all produce measurable damage.  Distortion
severity is an integer level ``s`` in 0..10 and the reference opinion score
is ``mos = 100 * (1 - s / 10)`` on a 0..100 scale.

Generation is reproducible: image content, level assignment, and split
assignment all derive from the base seed via :func:`.seeding.derive_rng`.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import fft as spfft
from scipy import ndimage

from .data import ImageDataset, ImageRecord, write_manifest
from .errors import InvalidBoundsError
from .seeding import derive_rng

__all__ = [
    "DISTORTIONS",
    "MOS_SCALE",
    "NUM_LEVELS",
    "additive_noise",
    "base_image",
    "blur_sigma",
    "distort",
    "gaussian_blur",
    "jpeg_like",
    "level_to_mos",
    "make_dataset",
]

NUM_LEVELS = 11
MOS_SCALE = (0.0, 100.0)


def level_to_mos(level: int) -> float:
    """Reference score for severity level ``s``: 100 * (1 - s/10)."""
    if not 0 <= level < NUM_LEVELS:
        raise InvalidBoundsError(f"level must be in 0..{NUM_LEVELS - 1}, got {level}")
    return float(100 - 10 * level)


def _filtered_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Unit-variance 1/f texture: shared spectral envelope, random phases.

    Every image draws from the same envelope so distortions shift the
    spectrum the same way for all of them; per-image variety comes from the
    phases alone.  That keeps the quality signal comparable across images
    instead of being swamped by content differences.
    """
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    radius = np.hypot(fy, fx)
    envelope = 1.0 / (radius + 1.0 / size)
    envelope[0, 0] = 0.0
    white = rng.standard_normal((size, size))
    field = np.real(np.fft.ifft2(np.fft.fft2(white) * envelope))
    return field / math.sqrt(np.mean(envelope**2))


def base_image(rng: np.random.Generator, size: int = 128) -> np.ndarray:
    """Pristine procedural image, channels-first float64 in [0, 1].

    A dominant full-spectrum texture carries the distortion response; a
    low-amplitude oriented ramp, per-channel tint, and three soft blobs add
    visual variety without disturbing it.
    """
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    tex = _filtered_texture(rng, size)
    tint = _filtered_texture(rng, size)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(theta) * xx + np.sin(theta) * yy
    img = np.empty((3, size, size))
    shades = rng.uniform(-1.0, 1.0, size=3)
    for c in range(3):
        img[c] = 0.5 + 0.20 * tex + 0.03 * shades[c] * tint + 0.06 * (ramp - 0.5)
    for _ in range(3):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        r = rng.uniform(0.08, 0.2)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        img += 0.06 * rng.uniform(-1.0, 1.0) * blob[None]
    return np.clip(img, 0.0, 1.0)


def blur_sigma(level: int) -> float:
    """Geometric blur ladder; multiplicative steps keep every rung of the
    severity grid distinguishable instead of saturating early."""
    if level == 0:
        return 0.0
    return 0.24 * 1.25**level


def gaussian_blur(image: np.ndarray, level: int, rng=None) -> np.ndarray:
    """Isotropic Gaussian blur with a geometric sigma ladder."""
    if level == 0:
        return image.copy()
    sigma = blur_sigma(level)
    return ndimage.gaussian_filter(image, sigma=(0.0, sigma, sigma))


def additive_noise(image: np.ndarray, level: int, rng: np.random.Generator) -> np.ndarray:
    """White Gaussian noise with standard deviation 0.035 * level, clipped."""
    if level == 0:
        return image.copy()
    noisy = image + rng.normal(0.0, 0.035 * level, size=image.shape)
    return np.clip(noisy, 0.0, 1.0)


def jpeg_like(image: np.ndarray, level: int, rng=None) -> np.ndarray:
    """Blockwise 8x8 DCT quantization with a step that grows with level and
    spatial frequency."""
    if level == 0:
        return image.copy()
    size = image.shape[1]
    if size % 8 != 0:
        raise InvalidBoundsError(f"image side {size} must be a multiple of 8")
    ii, jj = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
    step = 0.004 * level * (1.0 + ii + jj)
    out = np.empty_like(image)
    for c in range(image.shape[0]):
        blocks = image[c].reshape(size // 8, 8, size // 8, 8).transpose(0, 2, 1, 3)
        coeffs = spfft.dctn(blocks, axes=(2, 3), norm="ortho")
        coeffs = np.round(coeffs / step) * step
        rec = spfft.idctn(coeffs, axes=(2, 3), norm="ortho")
        out[c] = rec.transpose(0, 2, 1, 3).reshape(size, size)
    return np.clip(out, 0.0, 1.0)


DISTORTIONS = {"blur": gaussian_blur, "noise": additive_noise, "jpeg": jpeg_like}


def distort(image: np.ndarray, kind: str, level: int, rng: np.random.Generator) -> np.ndarray:
    if kind not in DISTORTIONS:
        raise InvalidBoundsError(f"unknown distortion {kind!r}; choose from {sorted(DISTORTIONS)}")
    if not 0 <= level < NUM_LEVELS:
        raise InvalidBoundsError(f"level must be in 0..{NUM_LEVELS - 1}, got {level}")
    return DISTORTIONS[kind](image, level, rng)


def _split_assignment(count: int, fractions: tuple[float, float, float], rng) -> list[str]:
    n_train = int(round(fractions[0] * count))
    n_val = int(round(fractions[1] * count))
    labels = ["train"] * n_train + ["val"] * n_val + ["test"] * (count - n_train - n_val)
    order = rng.permutation(count)
    return [labels[i] for i in np.argsort(order)]


def make_dataset(
    root: str | Path,
    count: int = 500,
    distortion: str = "blur",
    seed: int = 0,
    image_size: int = 128,
    name: str | None = None,
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
) -> ImageDataset:
    """Generate ``count`` distorted images plus a manifest under ``root``.

    Returns the in-memory dataset; ``root/manifest.tsv`` and
    ``root/images/*.png`` are written as a side effect.
    """
    if count < 1:
        raise InvalidBoundsError(f"count must be >= 1, got {count}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidBoundsError(f"split fractions must sum to 1, got {fractions}")
    if distortion not in DISTORTIONS:
        raise InvalidBoundsError(f"unknown distortion {distortion!r}")
    root = Path(root)
    images_dir = root / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    splits = _split_assignment(count, fractions, derive_rng(seed, "split"))
    records = []
    for i in range(count):
        image_id = f"{distortion}-{i:05d}"
        rng = derive_rng(seed, image_id)
        level = int(rng.integers(0, NUM_LEVELS))
        image = distort(base_image(rng, image_size), distortion, level, rng)
        path = images_dir / f"{image_id}.png"
        as_bytes = (np.clip(image, 0.0, 1.0) * 255.0).round().astype(np.uint8)
        Image.fromarray(as_bytes.transpose(1, 2, 0), mode="RGB").save(path)
        records.append(
            ImageRecord(image_id=image_id, path=path, mos=level_to_mos(level), split=splits[i])
        )
    dataset = ImageDataset(
        name=name or f"synth-{distortion}", mos_scale=MOS_SCALE, records=tuple(records)
    )
    write_manifest(dataset, root / "manifest.tsv")
    return dataset
