"""Assembled scoring pipeline: codec, denoiser, readout, prompts, schedule.

A bundle scores an image by encoding it to a latent, noising the latent at
one or more timesteps, running the frozen denoiser conditioned on each
prompt, pooling the recomputed cross-attention maps into a per-prompt
quality value, and averaging over prompts and timesteps.

``timestep_score`` is the differentiable core the trainer optimizes;
``score_image`` is the deterministic evaluation entry point, driven by an
explicit random generator for the noise draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .backbone import ToyDenoiserBackbone, ToyLatentCodec
from .config import RunConfig
from .errors import TimestepUnderflowError
from .prompts import PromptPair, TextEncoder
from .readout import CrossAttentionReadout, quality_score
from .schedule import (
    NoiseSchedule,
    TimestepPolicy,
    build_linear_schedule,
    evenly_spaced_policy,
    forward_noise,
    multi_step_timesteps,
    policy_timesteps,
)
from .seeding import derive_rng

__all__ = ["ScoringBundle", "build_bundle"]


@dataclass
class ScoringBundle:
    """Everything needed to score an image, plus the training partition."""

    config: RunConfig
    codec: ToyLatentCodec
    backbone: ToyDenoiserBackbone
    readout: CrossAttentionReadout
    prompts: PromptPair
    schedule: NoiseSchedule
    # Opinion-score range of the training split, set by the trainer and
    # carried through checkpoints so loaded bundles normalize identically.
    mos_range: tuple[float, float] | None = field(default=None)

    @property
    def pool_mode(self) -> str:
        return "mean" if self.config.mean_pool_instead_of_lse else "lse"

    def named_trainable(self) -> list[tuple[str, nn.Parameter]]:
        named = [(f"prompts.{n}", p) for n, p in self.prompts.named_parameters()]
        named += [(f"readout.{n}", p) for n, p in self.readout.named_parameters()]
        return [(n, p) for n, p in named if p.requires_grad]

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for _, p in self.named_trainable()]

    def named_frozen(self) -> list[tuple[str, nn.Parameter]]:
        named = [(f"prompts.{n}", p) for n, p in self.prompts.named_parameters()]
        named += [(f"readout.{n}", p) for n, p in self.readout.named_parameters()]
        named += [(f"backbone.{n}", p) for n, p in self.backbone.named_parameters()]
        return [(n, p) for n, p in named if not p.requires_grad]

    def normalize_mos(self, mos: float) -> float:
        """Map a raw opinion score into [0, 1] using the stored range."""
        if self.mos_range is None:
            raise ValueError("mos_range is unset; train first or load a checkpoint")
        lo, hi = self.mos_range
        if hi <= lo:
            return 0.5
        return (float(mos) - lo) / (hi - lo)

    def encode_image(self, image) -> torch.Tensor:
        return self.codec.encode(image)

    def _prompt_quality(self, z: torch.Tensor, t: int, text: torch.Tensor) -> torch.Tensor:
        _, features = self.backbone(z, t, text, self.readout)
        maps = self.readout.attention_maps(features, text)
        return quality_score(maps, self.config.pool_lambda, self.pool_mode)

    def timestep_score(self, z0: torch.Tensor, t: int, eps: torch.Tensor) -> torch.Tensor:
        """Differentiable prompt-averaged quality of z0 noised at t."""
        z_t = forward_noise(z0, t, eps, self.schedule)
        scores = [self._prompt_quality(z_t, t, text) for text in self.prompts.encoded_prompts()]
        return torch.stack(scores).mean()

    def chain_score(self, z0: torch.Tensor, t_start: int, eps: torch.Tensor) -> torch.Tensor:
        """Quality after walking a deliberate denoising chain per prompt.

        From z_{t_start} each reverse hop predicts the clean latent and
        re-noises it at the next timestep down; the attention maps are read
        at the chain's last timestep.
        """
        chain = multi_step_timesteps(
            t_start, self.config.eval_denoise_steps, self.config.eval_denoise_delta
        )
        z_start = forward_noise(z0, t_start, eps, self.schedule)
        scores = []
        for text in self.prompts.encoded_prompts():
            z = z_start
            for here, there in zip(chain, chain[1:]):
                eps_hat, _ = self.backbone(z, here, text, self.readout)
                abar = self.schedule.alpha_bar(here)
                z0_hat = (z - math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(abar)
                abar_next = self.schedule.alpha_bar(there)
                z = math.sqrt(abar_next) * z0_hat + math.sqrt(1.0 - abar_next) * eps_hat
            scores.append(self._prompt_quality(z, chain[-1], text))
        return torch.stack(scores).mean()

    def train_policy(self) -> TimestepPolicy:
        lo, hi = self.config.timestep_range
        return TimestepPolicy(mode="uniform-range", lo=lo, hi=hi, count=1)

    def eval_policy(self) -> TimestepPolicy:
        """Timesteps scored per image at evaluation time.

        Multi-step chains raise the lower bound so every chain stays above
        timestep 1.
        """
        lo, hi = self.config.timestep_range
        steps, delta = self.config.eval_denoise_steps, self.config.eval_denoise_delta
        if steps > 1:
            lo = max(lo, (steps - 1) * delta)
            if lo >= hi:
                raise TimestepUnderflowError(
                    f"range ({self.config.timestep_range[0]}:{hi}] cannot start "
                    f"{steps} hops of {delta}"
                )
        count = self.config.eval_timestep_count
        if self.config.eval_timestep_mode == "random":
            return TimestepPolicy(mode="uniform-range", lo=lo, hi=hi, count=count)
        return evenly_spaced_policy(lo, hi, count)

    def score_latent(self, z0: torch.Tensor, rng: np.random.Generator) -> float:
        """Average score over the evaluation timesteps, fresh noise per draw."""
        timesteps = policy_timesteps(self.eval_policy(), rng)
        single = self.config.eval_denoise_steps == 1
        values = []
        with torch.no_grad():
            for t in timesteps:
                eps = torch.as_tensor(rng.standard_normal(tuple(z0.shape)))
                score = self.timestep_score(z0, t, eps) if single else self.chain_score(z0, t, eps)
                values.append(float(score))
        return float(np.mean(values))

    def score_image(self, image, rng: np.random.Generator) -> float:
        return self.score_latent(self.encode_image(image), rng)


def build_bundle(config: RunConfig) -> ScoringBundle:
    """Construct the full pipeline for a validated configuration.

    Frozen weights derive from internal constants; the prompt context and
    adapter inits derive from ``config.seed``.
    """
    config.validate()
    codec = ToyLatentCodec(image_size=config.image_size, latent_channels=config.latent_channels)
    backbone = ToyDenoiserBackbone(
        latent_channels=config.latent_channels,
        latent_size=config.image_size // codec.patch,
        base_width=config.base_width,
        num_blocks=config.num_blocks,
        attention_dim=config.attention_dim,
    )
    encoder = TextEncoder(dim=config.text_dim)
    prompts = PromptPair(
        encoder,
        pos_attribute=config.pos_attribute,
        neg_attribute=config.neg_attribute,
        context_length=config.context_length,
        mode=config.prompt_mode,
        trainable=not config.fixed_prompts,
        rng=derive_rng(config.seed, "prompt-context"),
    )
    readout = CrossAttentionReadout(
        block_widths=backbone.block_widths,
        attention_dim=config.attention_dim,
        text_dim=config.text_dim,
        rank=config.lora_rank,
        scale=config.lora_scale,
        attention_gain=config.attention_gain,
        train_query=config.train_query_weights,
        train_kv=not config.freeze_cross_attention,
        rng=derive_rng(config.seed, "adapters"),
    )
    schedule = build_linear_schedule(config.total_timesteps, config.beta_start, config.beta_end)
    return ScoringBundle(
        config=config,
        codec=codec,
        backbone=backbone,
        readout=readout,
        prompts=prompts,
        schedule=schedule,
    )
