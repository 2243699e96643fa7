"""Checkpoint persistence for scoring bundles.

A checkpoint is a single ``.npz`` archive holding every parameter and
buffer as float64 plus the config in its file syntax, so a load rebuilds
the bundle and restores weights bit for bit.
"""

from __future__ import annotations

import io
import zipfile
from pathlib import Path

import numpy as np
import torch

from .bundle import ScoringBundle, build_bundle
from .config import RunConfig, apply_config_text, write_config
from .errors import CheckpointError, MissingCheckpointError, TopologyMismatchError

FORMAT_VERSION = 1

_META_KEYS = ("meta.format_version", "meta.config", "meta.mos_range")


def _tensor_entries(bundle: ScoringBundle) -> dict[str, torch.Tensor]:
    """Name every tensor the checkpoint must carry, in bundle order."""
    entries: dict[str, torch.Tensor] = {}
    for prefix, module in (
        ("prompts", bundle.prompts),
        ("readout", bundle.readout),
        ("backbone", bundle.backbone),
    ):
        for name, value in module.named_parameters():
            entries[f"{prefix}.{name}"] = value
        for name, value in module.named_buffers():
            entries[f"{prefix}.{name}"] = value
    entries["codec.projection"] = bundle.codec.projection
    return entries


def _config_text(config: RunConfig) -> str:
    return "\n".join(f"{k} = {v}" for k, v in config.to_file_dict().items()) + "\n"


def save_checkpoint(bundle: ScoringBundle, path: str | Path) -> Path:
    """Write the bundle to ``path`` as an ``.npz`` archive."""
    path = Path(path)
    arrays: dict[str, np.ndarray] = {
        "meta.format_version": np.array(FORMAT_VERSION, dtype=np.int64),
        "meta.config": np.array(_config_text(bundle.config)),
        "meta.mos_range": (
            np.array([], dtype=np.float64)
            if bundle.mos_range is None
            else np.array(bundle.mos_range, dtype=np.float64)
        ),
    }
    for name, tensor in _tensor_entries(bundle).items():
        arrays[name] = tensor.detach().cpu().numpy()
    buffer = io.BytesIO()
    np.savez_compressed(buffer, **arrays)
    path.write_bytes(buffer.getvalue())
    return path


def load_checkpoint(path: str | Path) -> ScoringBundle:
    """Rebuild a bundle from an archive written by :func:`save_checkpoint`."""
    path = Path(path)
    if not path.is_file():
        raise MissingCheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except (zipfile.BadZipFile, ValueError, OSError, KeyError) as error:
        raise CheckpointError(f"unreadable checkpoint {path}: {error}") from error

    for key in _META_KEYS:
        if key not in arrays:
            raise CheckpointError(f"checkpoint {path} is missing entry {key!r}")
    version = int(arrays["meta.format_version"])
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format version {version}; this build reads"
            f" version {FORMAT_VERSION}"
        )

    config = apply_config_text(RunConfig(), str(arrays["meta.config"]), origin=str(path))
    bundle = build_bundle(config.validate())

    expected = _tensor_entries(bundle)
    stored = {name for name in arrays if name not in _META_KEYS}
    for name in expected:
        if name not in stored:
            raise CheckpointError(f"checkpoint {path} is missing entry {name!r}")
    for name in sorted(stored - set(expected)):
        raise CheckpointError(f"checkpoint {path} has unknown entry {name!r}")

    for name, tensor in expected.items():
        value = arrays[name]
        if tuple(value.shape) != tuple(tensor.shape):
            raise TopologyMismatchError(
                f"checkpoint entry {name!r} has shape {tuple(value.shape)};"
                f" the configured model expects {tuple(tensor.shape)}"
            )
        with torch.no_grad():
            tensor.copy_(torch.as_tensor(value, dtype=tensor.dtype))

    mos_range = arrays["meta.mos_range"]
    bundle.mos_range = None if mos_range.size == 0 else (
        float(mos_range[0]),
        float(mos_range[1]),
    )
    return bundle


def write_sidecar_config(bundle: ScoringBundle, path: str | Path) -> Path:
    """Write the bundle's config next to a checkpoint for quick inspection."""
    return write_config(bundle.config, path)
