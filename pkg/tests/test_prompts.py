"""Tokenizer, text encoder determinism, and prompt-pair construction."""

import numpy as np
import numpy.testing as npt
import pytest
import torch

from diffusion_iqa.errors import (
    InconsistentTokenCountError,
    PromptError,
    TokenizationError,
)
from diffusion_iqa.prompts import (
    PromptPair,
    TextEncoder,
    identity_text_encoder,
    sinusoidal_positions,
)


@pytest.fixture(scope="module")
def encoder():
    return TextEncoder(dim=32)


def test_tokenize_words_and_punctuation(encoder):
    ids = encoder.tokenize("Good Photo.")
    assert len(ids) == 3
    assert ids == encoder.tokenize("good photo.")
    assert encoder.tokenize("") == []


def test_tokenize_rejects_unknown_words(encoder):
    with pytest.raises(TokenizationError, match="zebra"):
        encoder.tokenize("zebra photo")
    with pytest.raises(TokenizationError):
        encoder.tokenize("good photo?")
    with pytest.raises(TokenizationError):
        encoder.tokenize("good2 photo")


def test_sequence_length_counts_markers_context_attribute(encoder):
    # BOS + 16 context slots + 3 attribute tokens + EOS.
    assert encoder.sequence_length("Good Photo.", 16) == 21
    assert encoder.sequence_length("Bad Photo.", 0) == 5


def test_encoder_is_deterministic():
    a = TextEncoder(dim=32)
    b = TextEncoder(dim=32)
    npt.assert_array_equal(a.token_table.numpy(), b.token_table.numpy())
    npt.assert_array_equal(a.projection.numpy(), b.projection.numpy())
    ctx = torch.zeros((4, 32), dtype=torch.float64)
    npt.assert_array_equal(
        a.encode("Good Photo.", ctx).numpy(), b.encode("Good Photo.", ctx).numpy()
    )


def test_encoder_has_no_trainable_parameters(encoder):
    assert list(encoder.parameters()) == []


def test_encoder_projection_is_orthogonal(encoder):
    R = encoder.projection.numpy()
    npt.assert_allclose(R @ R.T, np.eye(32), atol=1e-12)


def test_encode_shape_and_context_gradient(encoder):
    ctx = torch.zeros((16, 32), dtype=torch.float64, requires_grad=True)
    out = encoder.encode("Good Photo.", ctx)
    assert out.shape == (21, 32)
    assert out.dtype == torch.float64
    out.sum().backward()
    assert ctx.grad is not None
    # Orthogonal mixing preserves the all-ones row gradient norm.
    npt.assert_allclose(ctx.grad.norm().item(), np.sqrt(16 * 32), rtol=1e-12)


def test_encode_differs_between_attributes(encoder):
    ctx = torch.zeros((4, 32), dtype=torch.float64)
    good = encoder.encode("Good Photo.", ctx)
    bad = encoder.encode("Bad Photo.", ctx)
    assert good.shape == bad.shape
    assert not torch.equal(good, bad)
    # Shared context, markers, and the common tokens occupy the same slots.
    npt.assert_array_equal(good[:5].numpy(), bad[:5].numpy())
    npt.assert_array_equal(good[6:].numpy(), bad[6:].numpy())


def test_encode_validates_context_shape(encoder):
    with pytest.raises(PromptError):
        encoder.encode("Good Photo.", torch.zeros((4, 16), dtype=torch.float64))


def test_identity_encoder_passes_context_through():
    enc = identity_text_encoder(dim=8)
    ctx = torch.arange(24, dtype=torch.float64).reshape(3, 8)
    npt.assert_array_equal(enc.encode("", ctx).numpy(), ctx.numpy())


def test_sinusoidal_positions_first_row_and_range():
    codes = sinusoidal_positions(10, 6)
    npt.assert_allclose(codes[0], [0, 1, 0, 1, 0, 1], atol=1e-12)
    assert np.all(np.abs(codes) <= 1.0)
    assert not np.array_equal(codes[1], codes[2])


def test_prompt_pair_defaults(encoder):
    rng = np.random.default_rng(0)
    pair = PromptPair(encoder, rng=rng)
    assert pair.context.shape == (16, 32)
    assert pair.context.requires_grad
    assert pair.sequence_length == 21
    pos, neg = pair.encoded_prompts()
    assert pos.shape == (21, 32)
    assert neg.shape == (21, 32)
    assert not torch.equal(pos, neg)


def test_prompt_pair_context_scale():
    rng = np.random.default_rng(1)
    pair = PromptPair(TextEncoder(dim=64), context_length=256, init_std=0.02, rng=rng)
    observed = pair.context.detach().numpy().std()
    assert 0.015 < observed < 0.025


def test_prompt_pair_identical_attributes_encode_identically(encoder):
    pair = PromptPair(
        encoder,
        pos_attribute="Good Photo.",
        neg_attribute="Good Photo.",
        rng=np.random.default_rng(2),
    )
    pos, neg = pair.encoded_prompts()
    npt.assert_array_equal(pos.detach().numpy(), neg.detach().numpy())


def test_prompt_pair_single_mode(encoder):
    pair = PromptPair(encoder, mode="single", rng=np.random.default_rng(3))
    prompts = pair.encoded_prompts()
    assert len(prompts) == 1
    npt.assert_array_equal(prompts[0].detach().numpy(), pair.encode_positive().detach().numpy())


def test_prompt_pair_frozen_context(encoder):
    pair = PromptPair(encoder, trainable=False, rng=np.random.default_rng(4))
    assert not pair.context.requires_grad
    assert [p for p in pair.parameters() if p.requires_grad] == []


def test_prompt_pair_rejects_mismatched_attribute_lengths(encoder):
    with pytest.raises(InconsistentTokenCountError):
        PromptPair(
            encoder,
            pos_attribute="Very Good Photo.",
            neg_attribute="Bad Photo.",
            rng=np.random.default_rng(5),
        )


def test_prompt_pair_rejects_unknown_mode(encoder):
    with pytest.raises(PromptError):
        PromptPair(encoder, mode="negative-only", rng=np.random.default_rng(6))


def test_prompt_pair_rejects_empty_prompt():
    enc = identity_text_encoder(dim=8)
    with pytest.raises(PromptError):
        PromptPair(enc, pos_attribute="", neg_attribute="", context_length=0)


def test_prompt_pair_zero_context_uses_attribute_only(encoder):
    pair = PromptPair(encoder, context_length=0, rng=np.random.default_rng(7))
    assert pair.sequence_length == 5
    pos, _ = pair.encoded_prompts()
    assert pos.shape == (5, 32)
