"""Regression training loop for the prompt context and attention adapters."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable

import torch

from .bundle import ScoringBundle
from .data import ImageDataset, load_image
from .errors import ManifestError, TrainingDivergedError
from .schedule import sample_timestep
from .seeding import derive_rng

ProgressHook = Callable[[int, float], None]


def regression_loss(predicted: torch.Tensor, target: float) -> torch.Tensor:
    """Squared error between a predicted score and a normalized opinion score."""
    return (predicted - target) ** 2


def train_bundle(
    bundle: ScoringBundle,
    dataset: ImageDataset,
    progress: ProgressHook | None = None,
) -> list[float]:
    """Fit the trainable parameters against normalized opinion scores.

    Returns the per-epoch mean sample loss.  The loop runs even when every
    parameter group is frozen so that a zero-shot run still produces a loss
    history.
    """
    config = bundle.config
    records = dataset.split("train")
    if not records:
        raise ManifestError(f"dataset {dataset.name!r} has no training split")
    mos_values = [record.mos for record in records]
    bundle.mos_range = (min(mos_values), max(mos_values))

    latents = []
    for record in records:
        image = load_image(record.path, config.image_size)
        latents.append(bundle.encode_image(image))

    params = bundle.trainable_parameters()
    optimizer = None
    if params:
        optimizer = torch.optim.Adam(
            params, lr=config.learning_rate, weight_decay=config.weight_decay
        )

    rng = derive_rng(config.seed, "train")
    policy = bundle.train_policy()
    history: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(records))
        epoch_total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            if optimizer is not None:
                optimizer.zero_grad()
            for index in batch:
                record = records[index]
                z0 = latents[index]
                t = sample_timestep(policy, rng)
                eps = torch.as_tensor(
                    rng.standard_normal(tuple(z0.shape)), dtype=z0.dtype
                )
                predicted = bundle.timestep_score(z0, t, eps)
                loss = regression_loss(predicted, bundle.normalize_mos(record.mos))
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch} on sample"
                        f" {record.image_id!r}",
                        sample_id=record.image_id,
                    )
                if optimizer is not None:
                    (loss / len(batch)).backward()
                epoch_total += float(loss.detach())
            if optimizer is not None:
                optimizer.step()
        mean_loss = epoch_total / len(records)
        history.append(mean_loss)
        if progress is not None:
            progress(epoch, mean_loss)
    return history


def write_loss_history(history: list[float], path: str | Path) -> Path:
    """Write one JSON object per epoch: ``{"epoch": ..., "mean_loss": ...}``."""
    path = Path(path)
    lines = [
        json.dumps({"epoch": epoch, "mean_loss": mean_loss})
        for epoch, mean_loss in enumerate(history)
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
