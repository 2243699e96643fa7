"""Frozen latent codec and toy denoiser backbone.

The codec plays the autoencoder's role: it maps an RGB image to a compact
latent by projecting non-overlapping 8x8 patches onto a fixed orthonormal
basis, and maps latents back by the transposed projection.  The denoiser is
a small two-resolution convolutional net that predicts the noise added to a
latent; at each resolution stage it exposes its flattened feature map and
lets a :class:`~diffusion_iqa.readout.CrossAttentionReadout` inject
text-conditioned cross-attention.

Every weight in this module is a fixed function of an internal constant and
is frozen (``requires_grad`` False), mimicking a pretrained generative
backbone.  Gradients still flow through it to the text side.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidBoundsError, ShapeMismatchError
from .readout import CrossAttentionReadout
from .seeding import derive_rng

__all__ = ["TIME_EMBED_DIM", "ToyDenoiserBackbone", "ToyLatentCodec", "timestep_embedding"]

_WEIGHT_SEED = 48151623

TIME_EMBED_DIM = 32


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    """Sine/cosine features of an integer timestep, shape (dim,)."""
    if dim % 2 != 0:
        raise InvalidBoundsError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    angles = float(t) * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


class ToyLatentCodec:
    """Orthonormal patch projection between image and latent space.

    ``encode`` reshapes the image into 8x8 patches (192 values each) and
    projects every patch onto ``latent_channels`` fixed orthonormal
    directions; ``decode`` applies the transpose.  Both maps are linear, so
    encode(decode(encode(x))) == encode(x) up to rounding.
    """

    can_decode = True

    def __init__(self, image_size: int = 128, latent_channels: int = 4, patch: int = 8):
        if image_size % patch != 0:
            raise InvalidBoundsError(f"image size {image_size} not divisible by patch {patch}")
        self.image_size = image_size
        self.latent_channels = latent_channels
        self.patch = patch
        self.grid = image_size // patch
        flat = 3 * patch * patch
        if latent_channels > flat:
            raise InvalidBoundsError(f"latent_channels {latent_channels} exceeds patch size {flat}")
        rng = derive_rng(_WEIGHT_SEED, "codec", patch, latent_channels)
        q, _ = np.linalg.qr(rng.standard_normal((flat, latent_channels)))
        self._projection = torch.as_tensor(q.T.copy(), dtype=torch.float64)

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.latent_channels, self.grid, self.grid)

    @property
    def projection(self) -> torch.Tensor:
        return self._projection

    def _to_patches(self, image: torch.Tensor) -> torch.Tensor:
        p, g = self.patch, self.grid
        patches = image.reshape(3, g, p, g, p).permute(1, 3, 0, 2, 4)
        return patches.reshape(g, g, 3 * p * p)

    def encode(self, image) -> torch.Tensor:
        """(3, S, S) image in [0, 1] to a (C, S/8, S/8) latent."""
        image = torch.as_tensor(image, dtype=torch.float64)
        expected = (3, self.image_size, self.image_size)
        if tuple(image.shape) != expected:
            raise ShapeMismatchError(f"expected image shape {expected}, got {tuple(image.shape)}")
        coeffs = self._to_patches(image) @ self._projection.t()
        return coeffs.permute(2, 0, 1).contiguous()

    def decode(self, latent) -> torch.Tensor:
        """(C, S/8, S/8) latent back to a (3, S, S) image-space array."""
        latent = torch.as_tensor(latent, dtype=torch.float64)
        if tuple(latent.shape) != self.latent_shape:
            raise ShapeMismatchError(
                f"expected latent shape {self.latent_shape}, got {tuple(latent.shape)}"
            )
        p, g = self.patch, self.grid
        patches = latent.permute(1, 2, 0) @ self._projection
        patches = patches.reshape(g, g, 3, p, p).permute(2, 0, 3, 1, 4)
        return patches.reshape(3, self.image_size, self.image_size).contiguous()


def _fixed_conv(in_ch: int, out_ch: int, label: str, kernel: int = 3, stride: int = 1) -> nn.Conv2d:
    conv = nn.Conv2d(
        in_ch, out_ch, kernel, stride=stride, padding=kernel // 2, dtype=torch.float64
    )
    rng = derive_rng(_WEIGHT_SEED, "conv", label, in_ch, out_ch, kernel, stride)
    fan_in = in_ch * kernel * kernel
    with torch.no_grad():
        conv.weight.copy_(
            torch.as_tensor(rng.standard_normal(tuple(conv.weight.shape)) / math.sqrt(fan_in))
        )
        conv.bias.zero_()
    conv.requires_grad_(False)
    return conv


def _fixed_linear(in_dim: int, out_dim: int, label: str) -> nn.Linear:
    layer = nn.Linear(in_dim, out_dim, dtype=torch.float64)
    rng = derive_rng(_WEIGHT_SEED, "linear", label, in_dim, out_dim)
    with torch.no_grad():
        layer.weight.copy_(
            torch.as_tensor(rng.standard_normal((out_dim, in_dim)) / math.sqrt(in_dim))
        )
        layer.bias.zero_()
    layer.requires_grad_(False)
    return layer


class ToyDenoiserBackbone(nn.Module):
    """Two-resolution noise predictor with per-stage cross-attention taps.

    Stage ``i`` runs at spatial size ``latent_size / 2**i`` with
    ``base_width * 2**i`` channels.  Its flattened pre-attention features
    (N_i, w_i) are returned so callers can recompute the attention maps with
    the exact projections the forward pass used.
    """

    def __init__(
        self,
        latent_channels: int = 4,
        latent_size: int = 16,
        base_width: int = 32,
        num_blocks: int = 2,
        attention_dim: int = 64,
    ):
        super().__init__()
        if num_blocks < 1:
            raise InvalidBoundsError(f"num_blocks must be >= 1, got {num_blocks}")
        if latent_size % 2 ** (num_blocks - 1) != 0:
            raise InvalidBoundsError(
                f"latent size {latent_size} not divisible by 2**{num_blocks - 1}"
            )
        self.latent_channels = latent_channels
        self.latent_size = latent_size
        self.attention_dim = attention_dim
        self.widths = tuple(base_width * 2**i for i in range(num_blocks))
        self.stem = _fixed_conv(latent_channels, self.widths[0], "stem")
        stages = []
        for i, width in enumerate(self.widths):
            stage = nn.ModuleDict(
                {
                    "time_proj": _fixed_linear(TIME_EMBED_DIM, width, f"time-{i}"),
                    "conv_a": _fixed_conv(width, width, f"a-{i}"),
                    "attn_out": _fixed_linear(attention_dim, width, f"attn-out-{i}"),
                    "conv_b": _fixed_conv(width, width, f"b-{i}"),
                }
            )
            if i + 1 < num_blocks:
                stage["down"] = _fixed_conv(width, self.widths[i + 1], f"down-{i}", stride=2)
            stages.append(stage)
        self.stages = nn.ModuleList(stages)
        self.head = _fixed_conv(self.widths[-1], latent_channels, "head")
        self.requires_grad_(False)

    @property
    def num_blocks(self) -> int:
        return len(self.stages)

    @property
    def block_widths(self) -> tuple[int, ...]:
        return self.widths

    @property
    def block_specs(self) -> tuple[tuple[int, int], ...]:
        """Per-block (positions, channels): N_i and w_i."""
        return tuple(
            ((self.latent_size // 2**i) ** 2, w) for i, w in enumerate(self.widths)
        )

    def forward(
        self,
        z_t: torch.Tensor,
        t: int,
        text: torch.Tensor,
        readout: CrossAttentionReadout,
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Predict the injected noise; also return per-block features.

        ``z_t`` is an unbatched (C, H, W) latent, ``text`` an (M, d_tau)
        prompt encoding.  Returns ``(eps_hat, features)`` with ``eps_hat``
        shaped like ``z_t`` and ``features[i]`` shaped (N_i, w_i).
        """
        z_t = torch.as_tensor(z_t, dtype=torch.float64)
        expected = (self.latent_channels, self.latent_size, self.latent_size)
        if tuple(z_t.shape) != expected:
            raise ShapeMismatchError(f"expected latent shape {expected}, got {tuple(z_t.shape)}")
        if readout.num_blocks != self.num_blocks:
            raise ShapeMismatchError(
                f"readout taps {readout.num_blocks} blocks, backbone has {self.num_blocks}"
            )
        if tuple(readout.block_widths) != self.widths:
            raise ShapeMismatchError(
                f"readout widths {readout.block_widths} do not match backbone {self.widths}"
            )
        temb = torch.as_tensor(timestep_embedding(t, TIME_EMBED_DIM), dtype=torch.float64)
        h = self.stem(z_t.unsqueeze(0))
        features: list[torch.Tensor] = []
        for i, stage in enumerate(self.stages):
            h = h + stage["time_proj"](temb).view(1, -1, 1, 1)
            h = F.silu(stage["conv_a"](h))
            width = self.widths[i]
            side = h.shape[-1]
            phi = h.squeeze(0).reshape(width, side * side).t()
            features.append(phi)
            _, attended = readout.block_attention(i, phi, text)
            injected = stage["attn_out"](attended).t().reshape(1, width, side, side)
            h = h + injected
            h = F.silu(stage["conv_b"](h))
            if "down" in stage:
                h = stage["down"](h)
        if h.shape[-1] != self.latent_size:
            h = F.interpolate(h, size=(self.latent_size, self.latent_size), mode="nearest")
        eps_hat = self.head(h).squeeze(0)
        return eps_hat, features
