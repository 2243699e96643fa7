"""Cross-attention readout: adapted projections, attention maps, pooling.

For denoiser block ``i`` with flattened image features ``phi_i`` of shape
(N_i, w_i) and a text encoding ``E`` of shape (M, d_tau):

    Q = phi_i @ Wq.T        (N_i, d)
    K = E @ Wk.T            (M, d)
    A = softmax(Q @ K.T / sqrt(d), rows over the M text tokens)

Each projection is a frozen base matrix plus a low-rank update
``W = W0 + scale * B @ A`` with ``B`` zero at init, so a freshly built
readout reproduces the base projections bit for bit.  The query projection
stays frozen by default; key and value adapters train.

The map is pooled into a scalar with a column-wise log-sum-exp

    g = (1/S) sum_i (1/M) sum_m (1/lam) log sum_n exp(lam * A[n, m])

which rewards tokens that attend sharply somewhere in the image instead of
averaging their attention away.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .errors import InvalidBoundsError, ShapeMismatchError
from .seeding import derive_rng

__all__ = [
    "CrossAttentionReadout",
    "LowRankAdapter",
    "attention_map",
    "lse_pool",
    "mean_pool",
    "pool_map",
    "quality_score",
]

# Base projection weights are a fixed function of this constant, playing the
# role of the pretrained denoiser's attention weights.
_WEIGHT_SEED = 19282636

POOL_MODES = ("lse", "mean")


class LowRankAdapter(nn.Module):
    """Frozen base matrix with a trainable low-rank update.

    ``weight() = base + scale * B @ A`` where ``B`` is (out_dim, rank) and
    zero at init, ``A`` is (rank, in_dim) and Gaussian at init.  With
    ``trainable=False`` both factors are frozen, which pins the effective
    weight to the base exactly.
    """

    def __init__(
        self,
        out_dim: int,
        in_dim: int,
        rank: int,
        scale: float = 1.0,
        base: np.ndarray | None = None,
        base_std: float | None = None,
        trainable: bool = True,
        rng: np.random.Generator | None = None,
    ):
        super().__init__()
        if rank < 1:
            raise InvalidBoundsError(f"rank must be >= 1, got {rank}")
        if rank > min(out_dim, in_dim):
            raise InvalidBoundsError(
                f"rank {rank} exceeds min(out_dim, in_dim) = {min(out_dim, in_dim)}"
            )
        self.out_dim = out_dim
        self.in_dim = in_dim
        self.rank = rank
        self.scale = float(scale)
        if base is None:
            if base_std is None:
                base_std = 1.0 / math.sqrt(in_dim)
            base_rng = derive_rng(_WEIGHT_SEED, "adapter-base", out_dim, in_dim)
            base = base_rng.standard_normal((out_dim, in_dim)) * base_std
        base = np.asarray(base, dtype=np.float64)
        if base.shape != (out_dim, in_dim):
            raise ShapeMismatchError(f"base must be ({out_dim}, {in_dim}), got {base.shape}")
        self.register_buffer("base", torch.as_tensor(base, dtype=torch.float64))
        if rng is None:
            rng = derive_rng(0, "adapter-update", out_dim, in_dim)
        down = rng.standard_normal((rank, in_dim)) / math.sqrt(in_dim)
        self.lora_B = nn.Parameter(torch.zeros((out_dim, rank), dtype=torch.float64))
        self.lora_A = nn.Parameter(torch.as_tensor(down, dtype=torch.float64))
        self.lora_B.requires_grad_(trainable)
        self.lora_A.requires_grad_(trainable)

    def weight(self) -> torch.Tensor:
        return self.base + self.scale * (self.lora_B @ self.lora_A)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeMismatchError(
                f"input feature dim {x.shape[-1]} does not match in_dim {self.in_dim}"
            )
        return x @ self.weight().t()


def attention_map(queries, keys) -> torch.Tensor:
    """Row-stochastic map softmax(Q @ K.T / sqrt(d)), shape (N, M)."""
    Q = torch.as_tensor(queries, dtype=torch.float64)
    K = torch.as_tensor(keys, dtype=torch.float64)
    if Q.ndim != 2 or K.ndim != 2:
        raise ShapeMismatchError("queries and keys must be 2-D")
    if Q.shape[1] != K.shape[1]:
        raise ShapeMismatchError(
            f"query dim {Q.shape[1]} does not match key dim {K.shape[1]}"
        )
    logits = (Q @ K.t()) / math.sqrt(Q.shape[1])
    return torch.softmax(logits, dim=-1)


def lse_pool(attn, sharpness: float) -> torch.Tensor:
    """Column-wise scaled log-sum-exp over image positions, averaged over
    text tokens: (1/M) sum_m (1/lam) log sum_n exp(lam * A[n, m])."""
    if sharpness <= 0.0:
        raise InvalidBoundsError(f"sharpness must be > 0, got {sharpness}")
    A = torch.as_tensor(attn, dtype=torch.float64)
    if A.ndim != 2:
        raise ShapeMismatchError("attention map must be 2-D")
    return torch.logsumexp(sharpness * A, dim=0).mean() / sharpness


def mean_pool(attn) -> torch.Tensor:
    """Plain average over all entries; the pooling ablation baseline."""
    A = torch.as_tensor(attn, dtype=torch.float64)
    if A.ndim != 2:
        raise ShapeMismatchError("attention map must be 2-D")
    return A.mean()


def pool_map(attn, sharpness: float, mode: str = "lse") -> torch.Tensor:
    if mode == "lse":
        return lse_pool(attn, sharpness)
    if mode == "mean":
        return mean_pool(attn)
    raise InvalidBoundsError(f"unknown pool mode {mode!r}; choose from {POOL_MODES}")


def quality_score(maps, sharpness: float, mode: str = "lse") -> torch.Tensor:
    """Average pooled score over the tapped blocks' attention maps."""
    maps = list(maps)
    if not maps:
        raise InvalidBoundsError("need at least one attention map")
    pooled = [pool_map(A, sharpness, mode) for A in maps]
    return torch.stack(pooled).mean()


class CrossAttentionReadout(nn.Module):
    """One adapted Q/K/V projection triple per tapped denoiser block.

    ``block_widths[i]`` is the feature channel count the block-i query
    projection consumes; keys and values project the text encoding.  The
    query adapter is constructed frozen unless ``train_query`` is set, and
    ``train_kv=False`` freezes the key/value adapters too.
    """

    def __init__(
        self,
        block_widths: tuple[int, ...],
        attention_dim: int,
        text_dim: int,
        rank: int = 4,
        scale: float = 1.0,
        attention_gain: float = 1.0,
        train_query: bool = False,
        train_kv: bool = True,
        rng: np.random.Generator | None = None,
    ):
        super().__init__()
        if not block_widths:
            raise InvalidBoundsError("need at least one block width")
        if attention_gain <= 0.0:
            raise InvalidBoundsError(f"attention_gain must be > 0, got {attention_gain}")
        self.block_widths = tuple(int(w) for w in block_widths)
        self.attention_dim = attention_dim
        self.text_dim = text_dim
        self.rank = rank
        self.scale = float(scale)
        self.attention_gain = float(attention_gain)
        if rng is None:
            rng = derive_rng(0, "readout-adapters")
        # The gain widens the base query/key weights so the softmax logits
        # have contrast; split evenly between the two projections it scales
        # logits by the full factor while W' = base + scale * B A still holds.
        gain_std = math.sqrt(self.attention_gain)
        blocks = []
        for i, width in enumerate(self.block_widths):
            specs = {
                "q": (width, train_query, gain_std),
                "k": (text_dim, train_kv, gain_std),
                "v": (text_dim, train_kv, 1.0),
            }
            triple = {}
            for name, (in_dim, trainable, widen) in specs.items():
                base_rng = derive_rng(_WEIGHT_SEED, "readout", i, name)
                base = base_rng.standard_normal((attention_dim, in_dim)) * (
                    widen / math.sqrt(in_dim)
                )
                triple[name] = LowRankAdapter(
                    attention_dim,
                    in_dim,
                    rank=rank,
                    scale=scale,
                    base=base,
                    trainable=trainable,
                    rng=rng,
                )
            blocks.append(nn.ModuleDict(triple))
        self.blocks = nn.ModuleList(blocks)

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def _check_block(self, index: int) -> None:
        if not 0 <= index < self.num_blocks:
            raise InvalidBoundsError(f"block index {index} outside 0..{self.num_blocks - 1}")

    def project_queries(self, index: int, features: torch.Tensor) -> torch.Tensor:
        self._check_block(index)
        return self.blocks[index]["q"](features)

    def project_keys(self, index: int, text: torch.Tensor) -> torch.Tensor:
        self._check_block(index)
        return self.blocks[index]["k"](text)

    def project_values(self, index: int, text: torch.Tensor) -> torch.Tensor:
        self._check_block(index)
        return self.blocks[index]["v"](text)

    def block_attention(self, index: int, features: torch.Tensor, text: torch.Tensor):
        """Attention map and attended values for one block: (A, A @ V)."""
        Q = self.project_queries(index, features)
        K = self.project_keys(index, text)
        V = self.project_values(index, text)
        A = attention_map(Q, K)
        return A, A @ V

    def attention_maps(self, features_per_block, text: torch.Tensor) -> list[torch.Tensor]:
        """Maps for every tapped block given per-block feature matrices."""
        if len(features_per_block) != self.num_blocks:
            raise ShapeMismatchError(
                f"got {len(features_per_block)} feature matrices for "
                f"{self.num_blocks} blocks"
            )
        return [
            self.block_attention(i, feats, text)[0]
            for i, feats in enumerate(features_per_block)
        ]
