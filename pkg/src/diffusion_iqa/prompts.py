"""Antonym text prompts with a shared learnable context prefix.

A prompt is ``[BOS] + context + attribute + [EOS]`` where the context is a
block of learnable embedding vectors (they have no surface form) and the
attribute is fixed text such as ``"Good Photo."``.  The positive and
negative prompts share one context block; only the attribute words differ.

The text encoder here is a small frozen stand-in with the same interface a
pretrained encoder would expose: a token embedding table over a fixed word
list, sinusoidal position codes, and an orthogonal output transform.  It is
deterministic, has no trainable parameters, and its weights travel inside
checkpoints so scores are reproducible across processes.
"""

from __future__ import annotations

import re

import numpy as np
import torch
from torch import nn

from .errors import InconsistentTokenCountError, PromptError, TokenizationError
from .seeding import derive_rng

__all__ = [
    "PROMPT_MODES",
    "VOCABULARY",
    "PromptPair",
    "TextEncoder",
    "identity_text_encoder",
    "sinusoidal_positions",
]

VOCABULARY = (
    "good", "bad", "photo", "image", "picture", "quality", "high", "low",
    "sharp", "blurry", "clean", "noisy", "definition", "resolution",
    "a", "an", "the", "of", "with", "very", ".", ",", "!",
)

PROMPT_MODES = ("antonym", "single")

_TOKEN_RE = re.compile(r"[a-z]+|[.,!]")

# Weights are a fixed function of this constant, mimicking a pretrained
# encoder that every run shares.
_ENCODER_SEED = 20260822


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Standard sine/cosine position codes, shape (length, dim)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class TextEncoder(nn.Module):
    """Frozen token embedder: table lookup, position codes, orthogonal mix.

    ``use_markers=False`` drops the BOS/EOS rows and
    ``use_positional=False`` drops the position codes; with an identity
    transform that combination passes context vectors through untouched,
    which the tests use to steer keys and values directly.
    """

    def __init__(
        self,
        dim: int,
        vocabulary: tuple[str, ...] = VOCABULARY,
        use_markers: bool = True,
        use_positional: bool = True,
        token_table: np.ndarray | None = None,
        projection: np.ndarray | None = None,
    ):
        super().__init__()
        self.dim = dim
        self.vocabulary = tuple(vocabulary)
        self.use_markers = use_markers
        self.use_positional = use_positional
        self._token_ids = {word: i for i, word in enumerate(self.vocabulary)}
        rng = derive_rng(_ENCODER_SEED, "text-encoder", dim)
        if token_table is None:
            # Rows 0..V-1 are vocabulary words, the last two are BOS / EOS.
            token_table = rng.standard_normal((len(self.vocabulary) + 2, dim)) / np.sqrt(dim)
        if projection is None:
            gaussian = rng.standard_normal((dim, dim))
            projection, _ = np.linalg.qr(gaussian)
        self.register_buffer("token_table", torch.as_tensor(token_table, dtype=torch.float64))
        self.register_buffer("projection", torch.as_tensor(projection, dtype=torch.float64))
        if self.token_table.shape != (len(self.vocabulary) + 2, dim):
            raise PromptError(
                f"token table shape {tuple(self.token_table.shape)} does not match "
                f"vocabulary size {len(self.vocabulary)} plus markers"
            )
        if self.projection.shape != (dim, dim):
            raise PromptError(f"projection must be ({dim}, {dim})")

    @property
    def bos_id(self) -> int:
        return len(self.vocabulary)

    @property
    def eos_id(self) -> int:
        return len(self.vocabulary) + 1

    def tokenize(self, text: str) -> list[int]:
        """Lowercase word/punctuation ids; unknown material raises."""
        lowered = text.lower()
        ids = []
        pos = 0
        for match in _TOKEN_RE.finditer(lowered):
            if lowered[pos : match.start()].strip():
                raise TokenizationError(
                    f"cannot tokenize {lowered[pos:match.start()].strip()!r} in {text!r}"
                )
            word = match.group(0)
            if word not in self._token_ids:
                raise TokenizationError(f"word {word!r} is not in the vocabulary")
            ids.append(self._token_ids[word])
            pos = match.end()
        if lowered[pos:].strip():
            raise TokenizationError(f"cannot tokenize {lowered[pos:].strip()!r} in {text!r}")
        return ids

    def sequence_length(self, attribute: str, context_length: int) -> int:
        markers = 2 if self.use_markers else 0
        return markers + context_length + len(self.tokenize(attribute))

    def encode(self, attribute: str, context: torch.Tensor | None = None) -> torch.Tensor:
        """Embed ``[BOS] + context + attribute + [EOS]``, returning (M, dim).

        The context block is inserted as-is, so gradients flow to it through
        the position addition and the output transform.
        """
        ids = self.tokenize(attribute)
        parts = []
        if self.use_markers:
            parts.append(self.token_table[self.bos_id : self.bos_id + 1])
        if context is not None:
            if context.ndim != 2 or context.shape[1] != self.dim:
                raise PromptError(
                    f"context must be (L, {self.dim}), got {tuple(context.shape)}"
                )
            parts.append(context.to(torch.float64))
        if ids:
            parts.append(self.token_table[ids])
        if self.use_markers:
            parts.append(self.token_table[self.eos_id : self.eos_id + 1])
        if not parts:
            raise PromptError("prompt is empty: no markers, no context, no attribute")
        sequence = torch.cat(parts, dim=0)
        if self.use_positional:
            codes = sinusoidal_positions(sequence.shape[0], self.dim)
            sequence = sequence + torch.as_tensor(codes, dtype=torch.float64)
        return sequence @ self.projection


def identity_text_encoder(dim: int) -> TextEncoder:
    """Encoder that passes context rows through unchanged (no markers, no
    position codes, identity transform)."""
    return TextEncoder(
        dim=dim,
        use_markers=False,
        use_positional=False,
        token_table=np.zeros((len(VOCABULARY) + 2, dim)),
        projection=np.eye(dim),
    )


class PromptPair(nn.Module):
    """Learnable context shared by a positive and a negative attribute.

    ``mode`` selects how many prompts score an image: ``antonym`` encodes
    both attributes, ``single`` just the first.  The two
    attributes must tokenize to the same length so the prompts agree on M.
    """

    def __init__(
        self,
        encoder: TextEncoder,
        pos_attribute: str = "Good Photo.",
        neg_attribute: str = "Bad Photo.",
        context_length: int = 16,
        mode: str = "antonym",
        trainable: bool = True,
        init_std: float = 0.02,
        rng: np.random.Generator | None = None,
    ):
        super().__init__()
        if mode not in PROMPT_MODES:
            raise PromptError(f"unknown prompt mode {mode!r}; choose from {PROMPT_MODES}")
        if context_length < 0:
            raise PromptError(f"context_length must be >= 0, got {context_length}")
        n_pos = len(encoder.tokenize(pos_attribute))
        n_neg = len(encoder.tokenize(neg_attribute))
        if n_pos != n_neg:
            raise InconsistentTokenCountError(
                f"attributes tokenize to different lengths: "
                f"{pos_attribute!r} -> {n_pos}, {neg_attribute!r} -> {n_neg}"
            )
        if context_length == 0 and n_pos == 0:
            raise PromptError("prompt needs a context block or a non-empty attribute")
        self.encoder = encoder
        self.pos_attribute = pos_attribute
        self.neg_attribute = neg_attribute
        self.mode = mode
        if rng is None:
            rng = derive_rng(0, "prompt-context")
        init = init_std * rng.standard_normal((context_length, encoder.dim))
        self.context = nn.Parameter(torch.as_tensor(init, dtype=torch.float64))
        self.context.requires_grad_(trainable)

    @property
    def context_length(self) -> int:
        return self.context.shape[0]

    @property
    def sequence_length(self) -> int:
        return self.encoder.sequence_length(self.pos_attribute, self.context_length)

    def _context_or_none(self) -> torch.Tensor | None:
        return self.context if self.context_length > 0 else None

    def encode_positive(self) -> torch.Tensor:
        return self.encoder.encode(self.pos_attribute, self._context_or_none())

    def encode_negative(self) -> torch.Tensor:
        return self.encoder.encode(self.neg_attribute, self._context_or_none())

    def encoded_prompts(self) -> tuple[torch.Tensor, ...]:
        """Encodings whose per-prompt scores are averaged into the final score."""
        if self.mode == "single":
            return (self.encode_positive(),)
        return (self.encode_positive(), self.encode_negative())
