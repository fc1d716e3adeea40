"""Recognizer contracts: shapes, BN statistics, batch invariance, freezing."""

import numpy as np
import pytest

from amdadapt.errors import ConfigError, ContractError
from amdadapt.model import ConvBlock, ModelConfig, PAD_MARGIN, Recognizer, pad_batch
from amdadapt.rng import Rng


SMALL = ModelConfig(
    alphabet="abc",
    conv_blocks=(ConvBlock(4, bn=True, pool=True), ConvBlock(6, bn=True, pool=False)),
    hidden_size=8,
    input_height=16,
)


def _images(rng: Rng, widths, height=16):
    return [rng.random_array((height, w)) for w in widths]


def _batchify(imgs):
    pads = [float(np.median(np.concatenate([im[0], im[-1]]))) for im in imgs]
    return pad_batch(imgs, pads), [im.shape[1] for im in imgs]


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(alphabet="ab", conv_blocks=(ConvBlock(4, bn=False),))
    with pytest.raises(ConfigError):
        ModelConfig(alphabet="ab", input_height=30)  # default pools need /4


def test_frame_count_is_ceil():
    cfg = SMALL
    assert cfg.downsample() == 2
    assert cfg.frame_count(10) == 5
    assert cfg.frame_count(11) == 6


def test_bn_layer_ids():
    assert SMALL.bn_layer_ids() == [0, 1]
    cfg = ModelConfig(alphabet="ab", conv_blocks=(
        ConvBlock(4, bn=False, pool=True), ConvBlock(4, bn=True, pool=False)))
    assert cfg.bn_layer_ids() == [0]


def test_config_dict_roundtrip():
    d = SMALL.to_dict()
    assert ModelConfig.from_dict(d) == SMALL


def test_forward_shapes_and_normalization():
    model = Recognizer(SMALL, seed=0)
    imgs = _images(Rng(1), [20, 14])
    batch, widths = _batchify(imgs)
    dist = model.forward(batch, widths, mode="train")
    B, K, C = dist.log_probs.shape
    assert B == 2 and C == 4  # 3 chars + blank
    assert dist.frame_counts == [10, 7]
    sums = np.exp(dist.log_probs.data).sum(axis=-1)
    assert np.allclose(sums, 1.0, atol=1e-12)


def test_forward_rejects_adapt_mode():
    model = Recognizer(SMALL, seed=0)
    batch, widths = _batchify(_images(Rng(2), [12]))
    with pytest.raises(ContractError):
        model.forward(batch, widths, mode="adapt")


def test_eval_before_any_training_is_an_error():
    model = Recognizer(SMALL, seed=0)
    batch, widths = _batchify(_images(Rng(3), [12]))
    with pytest.raises(ContractError):
        model.forward(batch, widths, mode="eval")


def test_running_stats_fold_replay():
    # running stats after two train batches must equal the explicit
    # momentum fold of the per-batch statistics
    model = Recognizer(SMALL, seed=0)
    layer = model.bn_layers[0]
    rho = SMALL.bn_momentum
    mean, var = layer.running_mean.copy(), layer.running_var.copy()
    for i in range(2):
        batch, widths = _batchify(_images(Rng(10 + i), [18, 18]))
        model.forward(batch, widths, mode="train")
        mean = (1 - rho) * mean + rho * layer.last_batch_mean
        var = (1 - rho) * var + rho * layer.last_batch_var
        assert np.allclose(layer.running_mean, mean, atol=1e-12)
        assert np.allclose(layer.running_var, var, atol=1e-12)
    assert layer.batches_seen == 2


def test_eval_deterministic_and_uses_stored_stats():
    model = Recognizer(SMALL, seed=0)
    batch, widths = _batchify(_images(Rng(5), [16, 16]))
    model.forward(batch, widths, mode="train")
    a = model.forward(batch, widths, mode="eval").log_probs.data
    b = model.forward(batch, widths, mode="eval").log_probs.data
    assert np.array_equal(a, b)


def test_batch_composition_invariance_in_eval():
    # a sample's outputs must not depend on what else is in the batch,
    # including when neighbours widen the padded array
    model = Recognizer(SMALL, seed=0)
    warm, ww = _batchify(_images(Rng(6), [20, 20]))
    model.forward(warm, ww, mode="train")

    imgs = _images(Rng(7), [20, 12, 29])
    solo_batch, solo_w = _batchify(imgs[:1])
    full_batch, full_w = _batchify(imgs)
    assert solo_batch.shape[3] != full_batch.shape[3]
    solo = model.forward(solo_batch, solo_w, mode="eval").log_probs.data[0]
    full = model.forward(full_batch, full_w, mode="eval")
    k = full.frame_counts[0]
    assert np.array_equal(solo[:k], full.log_probs.data[0, :k])


def test_forward_adapt_returns_batch_stats_for_selected_layers():
    model = Recognizer(SMALL, seed=0)
    batch, widths = _batchify(_images(Rng(8), [16, 16]))
    model.forward(batch, widths, mode="train")
    dist, stats = model.forward_adapt(batch, widths, collect_ids=(1,))
    assert set(stats) == {1}
    mu, var = stats[1]
    assert mu.shape == (6,) and var.shape == (6,)
    assert mu.requires_grad or mu.data is not None  # attached tensors


def test_trainable_scope_rule():
    cfg = ModelConfig(
        alphabet="ab",
        conv_blocks=(ConvBlock(4, bn=True, pool=True), ConvBlock(4, bn=True, pool=False),
                     ConvBlock(4, bn=True, pool=False)),
        hidden_size=8,
        input_height=16,
    )
    model = Recognizer(cfg, seed=0)

    scope = model.set_trainable_scope((1,))
    # conv up to and including block 1; bn0 gamma/beta trainable (not selected);
    # bn1 gamma/beta frozen (selected); nothing after block 1
    assert set(scope["trainable"]) == {
        "conv0.weight", "conv0.bias", "bn0.gamma", "bn0.beta",
        "conv1.weight", "conv1.bias",
    }
    assert "gru.fw.wx" in scope["frozen"]
    assert "head.weight" in scope["frozen"]

    scope = model.set_trainable_scope((0, 2))
    assert "bn0.gamma" not in scope["trainable"]   # selected
    assert "bn1.gamma" in scope["trainable"]       # unselected, before deepest
    assert "bn2.gamma" not in scope["trainable"]   # selected
    assert "conv2.weight" in scope["trainable"]

    with pytest.raises(ConfigError):
        model.set_trainable_scope((5,))


def test_scope_flags_follow_selection():
    model = Recognizer(SMALL, seed=0)
    model.set_trainable_scope((0,))
    assert model.params["conv0.weight"].requires_grad
    assert not model.params["bn0.gamma"].requires_grad
    assert not model.params["head.weight"].requires_grad
    model.set_all_trainable()
    assert all(t.requires_grad for t in model.params.values())


def test_unidirectional_halves_recurrent_width():
    uni = ModelConfig(
        alphabet="ab",
        conv_blocks=(ConvBlock(4, bn=True, pool=False),),
        hidden_size=6,
        input_height=8,
        bidirectional=False,
    )
    model = Recognizer(uni, seed=3)
    assert "gru.bw.wx" not in model.params
    batch, widths = _batchify(_images(Rng(11), [12, 12], height=8))
    dist = model.forward(batch, widths, mode="train")
    assert dist.log_probs.shape[2] == 3  # 2 chars + blank
    assert model.params["head.weight"].shape == (6, 3)


def test_pad_batch_margin_and_rounding():
    imgs = [np.full((8, 10), 0.5), np.full((8, 7), 0.25)]
    batch = pad_batch(imgs, [0.9, 0.1])
    # widest 10 + margin, rounded up to a multiple of 4
    expect_w = ((10 + PAD_MARGIN + 3) // 4) * 4
    assert batch.shape == (2, 1, 8, expect_w)
    assert np.all(batch[0, 0, :, 10:] == 0.9)
    assert np.all(batch[1, 0, :, 7:] == 0.1)
    assert np.all(batch[1, 0, :, :7] == 0.25)


def test_pad_batch_rejects_mixed_heights():
    with pytest.raises(ContractError):
        pad_batch([np.zeros((8, 4)), np.zeros((6, 4))], [0.0, 0.0])


def test_state_arrays_roundtrip_via_load():
    model = Recognizer(SMALL, seed=0)
    batch, widths = _batchify(_images(Rng(12), [16, 16]))
    model.forward(batch, widths, mode="train")
    arrays = {k: v.copy() for k, v in model.state_arrays().items()}
    batches = {str(l.layer_id): l.batches_seen for l in model.bn_layers}

    other = Recognizer(SMALL, seed=5)
    other.load_state_arrays(arrays, batches)
    for k, v in other.state_arrays().items():
        assert np.array_equal(v, arrays[k]), k
    out_a = model.forward(batch, widths, mode="eval").log_probs.data
    out_b = other.forward(batch, widths, mode="eval").log_probs.data
    assert np.array_equal(out_a, out_b)
