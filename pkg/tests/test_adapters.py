import numpy as np
import pytest

from noisyalign.adapters import (
    LoraLinear,
    TextEncoder,
    VisionEncoder,
    encode_text,
    encode_video_frames,
    lora_forward,
    lora_merge,
    merged_copy,
    pixels_to_vectors,
)
from noisyalign.exceptions import DimensionError, DomainError, VocabularyError
from noisyalign.numerics import Tensor
from noisyalign.tokens import tokenize


def _layer(rng, d_out=5, d_in=4, rank=2, alpha=4.0):
    w = rng.normal(size=(d_out, d_in))
    return LoraLinear(w, rng.normal(size=(rank, d_in)), rng.normal(size=(d_out, rank)), alpha, rng.normal(size=d_out))


def test_lora_forward_matches_dense_formula(rng):
    layer = _layer(rng)
    x = rng.normal(size=(3, 4))
    expected = x @ layer.weight.data.T + 2.0 * (x @ layer.a.data.T) @ layer.b.data.T + layer.bias.data
    np.testing.assert_allclose(lora_forward(Tensor(x), layer).numpy(), expected, rtol=1e-13, atol=1e-13)


def test_lora_merge_equivalence(rng):
    layer = _layer(rng)
    x = rng.normal(size=(7, 4))
    dense = x @ lora_merge(layer).T + layer.bias.data
    np.testing.assert_allclose(dense, layer(Tensor(x)).numpy(), atol=1e-12)


def test_lora_initialization(rng):
    w = rng.normal(size=(64, 64))
    layer = LoraLinear.initialize(w, 16, 32.0, np.random.default_rng(0))
    assert layer.rank == 16 and layer.scale == 2.0
    assert np.all(layer.b.data == 0)
    assert abs(layer.a.data.std() - 0.02) < 0.002
    np.testing.assert_array_equal(layer.merge(), w)
    assert [n for n, _ in layer.trainable("p")] == ["p.lora_a", "p.lora_b"]


def test_lora_shape_validation(rng):
    with pytest.raises(DimensionError):
        LoraLinear(np.ones((3, 4)), np.ones((2, 5)), np.ones((3, 2)), 1.0)


def test_zero_b_is_frozen_forward():
    enc = VisionEncoder(4, 4, width=16, depth=2, rank=4, alpha=8.0, seed=3)
    frames = np.random.default_rng(0).normal(size=(2, 5, 16))
    reference = merged_copy(enc).encode_frames(frames).numpy()
    np.testing.assert_array_equal(enc.encode_frames(frames).numpy(), reference)


def test_lora_targets():
    v = VisionEncoder(2, 2, width=8, depth=1, rank=2, alpha=4.0)
    t = TextEncoder(64, 8, width=8, depth=1, rank=2, alpha=4.0)
    assert sorted(n.split(".")[-1] for n, _ in v.lora_layers()) == ["k", "q", "v"]
    assert sorted(n.split(".")[-1] for n, _ in t.lora_layers()) == ["q", "v"]
    for name, tensor in v.frozen_parameters() + t.frozen_parameters():
        assert "lora" not in name and not tensor.requires_grad
    assert all(t.requires_grad for _, t in v.trainable_parameters())


def test_encoders_are_seed_deterministic():
    a, b = TextEncoder(64, 8, 8, 1, 2, 4.0, seed=5), TextEncoder(64, 8, 8, 1, 2, 4.0, seed=5)
    for (na, ta), (nb, tb) in zip(a.named_tensors(), b.named_tensors()):
        assert na == nb
        np.testing.assert_array_equal(ta.data, tb.data)


def test_text_padding_does_not_leak():
    enc = TextEncoder(256, 16, 8, 2, 2, 4.0, seed=1)
    short, long = tokenize("grasp the gallbladder"), tokenize("clip the cystic duct and cut it now")
    alone = enc.encode_batch([short]).numpy()[0]
    together = enc.encode_batch([short, long]).numpy()[0]
    np.testing.assert_allclose(alone, together, atol=1e-12)
    np.testing.assert_allclose(encode_text(short, enc).numpy(), alone, atol=0)


def test_text_encoder_limits():
    enc = TextEncoder(32, 3, 8, 1, 2, 4.0)
    with pytest.raises(DimensionError):
        enc.encode_batch([tokenize("a b c d", 32)])
    big = next(tokenize(w, 256) for w in ("alpha", "beta", "gamma", "delta") if tokenize(w, 256).ids[1] >= 32)
    with pytest.raises(VocabularyError):
        enc.encode_batch([big])
    with pytest.raises(DomainError):
        enc.encode_batch([])


def test_vision_encoder_shapes():
    enc = VisionEncoder(4, 3, width=8, depth=1, rank=2, alpha=4.0)
    assert enc.encode_frames(np.zeros((2, 5, 12))).shape == (2, 5, 8)
    assert encode_video_frames(np.zeros((4, 12)), enc).n_frames == 4
    with pytest.raises(DimensionError):
        enc.encode_frames(np.zeros((2, 11)))
    with pytest.raises(DomainError):
        encode_video_frames(np.zeros((0, 12)), enc)


def test_pixels_to_vectors():
    px = np.array([[[[0], [255]], [[127], [128]]]], dtype=np.uint8)
    v = pixels_to_vectors(px)
    assert v.shape == (1, 4)
    np.testing.assert_allclose(v[0], [-1.0, 1.0, 127 / 127.5 - 1, 128 / 127.5 - 1])
