import itertools
import math

import numpy as np
import pytest

from gatedformer import tensor as T
from gatedformer.layers import (FeedForward, LayerNormLayer, LinearLayer, MultiHeadAttention,
                                SinusoidalPositionalEncoding, label_smoothed_cross_entropy,
                                layer_norm, linear_forward, mha_forward)
from gatedformer.model import causal_mask
from gatedformer.tensor import ShapeError, Tensor


def set_linear(layer, weight, bias):
    layer.weight.data = np.array(weight, dtype=float)
    layer.bias.data = np.array(bias, dtype=float)


class TestLinear:
    def test_identity(self, rng):
        layer = LinearLayer(2, 2, rng)
        set_linear(layer, np.eye(2), [0, 0])
        np.testing.assert_array_equal(linear_forward(layer, Tensor([1.0, 2.0])).data, [1, 2])

    def test_hand_value(self, rng):
        layer = LinearLayer(2, 1, rng)
        set_linear(layer, [[1, 1]], [0.5])
        assert linear_forward(layer, Tensor([1.0, 2.0])).data[0] == 3.5

    def test_wrong_input_dim(self, rng):
        with pytest.raises(ShapeError):
            linear_forward(LinearLayer(3, 2, rng), Tensor(np.ones(2)))

    @pytest.mark.parametrize("i,o", [(1, 1), (3, 5), (16, 4)])
    def test_param_count(self, i, o, rng):
        assert LinearLayer(i, o, rng).num_params() == o * i + o


class TestLayerNorm:
    def test_normalized_input(self):
        out = layer_norm(LayerNormLayer(2, eps=1e-5), Tensor([1.0, -1.0])).data
        np.testing.assert_allclose(out, [1, -1], atol=1e-5)

    def test_constant_row(self):
        out = layer_norm(LayerNormLayer(5), Tensor(np.full(5, 3.7))).data
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_statistics(self, rng):
        x = Tensor(rng.normal(3.0, 5.0, size=(20, 64)))
        out = layer_norm(LayerNormLayer(64), x).data
        assert np.abs(out.mean(axis=-1)).max() < 1e-9
        assert np.abs(out.var(axis=-1) - 1).max() < 1e-4

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            layer_norm(LayerNormLayer(4), Tensor(np.ones(3)))

    def test_param_count(self):
        assert LayerNormLayer(10).num_params() == 20


class TestAttention:
    def test_single_position_identity(self, rng):
        mha = MultiHeadAttention(4, 1, rng)
        for lin in (mha.wq, mha.wk, mha.wv, mha.wo):
            set_linear(lin, np.eye(4), np.zeros(4))
        x = Tensor(rng.normal(size=(1, 4)))
        np.testing.assert_allclose(mha_forward(mha, x, x, x).data, x.data, atol=1e-15)

    def test_shape(self, rng):
        x = Tensor(rng.normal(size=(7, 8)))
        assert mha_forward(MultiHeadAttention(8, 2, rng), x, x, x).shape == (7, 8)

    def test_batched_shape(self, rng):
        q = Tensor(rng.normal(size=(3, 5, 8)))
        kv = Tensor(rng.normal(size=(3, 2, 8)))
        mask = np.ones((3, 5, 2), dtype=bool)
        assert mha_forward(MultiHeadAttention(8, 4, rng), q, kv, kv, mask).shape == (3, 5, 8)

    @pytest.mark.parametrize("seq", range(1, 9))
    def test_causal_prefix_invariance(self, seq, rng):
        mha = MultiHeadAttention(4, 2, rng)
        x = rng.normal(size=(seq, 4))
        base = mha_forward(mha, Tensor(x), Tensor(x), Tensor(x), causal_mask(seq)).data
        for t in range(seq):
            y = x.copy()
            y[t + 1:] = rng.normal(size=y[t + 1:].shape)
            out = mha_forward(mha, Tensor(y), Tensor(y), Tensor(y), causal_mask(seq)).data
            np.testing.assert_array_equal(out[:t + 1], base[:t + 1])

    def test_exhaustive_future_positions_small(self, rng):
        # every subset of future positions changed, seq=4
        mha = MultiHeadAttention(4, 2, rng)
        x = rng.normal(size=(4, 4))
        base = mha_forward(mha, Tensor(x), Tensor(x), Tensor(x), causal_mask(4)).data
        for t in range(4):
            future = range(t + 1, 4)
            for r in range(1, len(future) + 1):
                for subset in itertools.combinations(future, r):
                    y = x.copy()
                    y[list(subset)] += 10.0
                    out = mha_forward(mha, Tensor(y), Tensor(y), Tensor(y), causal_mask(4)).data
                    np.testing.assert_array_equal(out[:t + 1], base[:t + 1])

    def test_heads_must_divide(self, rng):
        with pytest.raises(ValueError):
            MultiHeadAttention(6, 4, rng)

    def test_mask_shape_checked(self, rng):
        x = Tensor(rng.normal(size=(3, 4)))
        with pytest.raises(ShapeError):
            mha_forward(MultiHeadAttention(4, 2, rng), x, x, x, np.ones((2, 3), dtype=bool))

    def test_param_count(self, rng):
        assert MultiHeadAttention(16, 4, rng).num_params() == 4 * (16 * 16 + 16)


def test_feed_forward_param_count(rng):
    assert FeedForward(8, 32, rng).num_params() == 8 * 32 + 32 + 32 * 8 + 8


def test_positional_encoding_is_fixed_and_bounded():
    pe = SinusoidalPositionalEncoding(10, 6)
    assert pe(10).shape == (10, 6)
    np.testing.assert_array_equal(pe(1)[0], [0, 1, 0, 1, 0, 1])
    assert np.abs(pe.table).max() <= 1.0
    with pytest.raises(ValueError):
        pe(11)


class TestCrossEntropy:
    def test_uniform_logits_give_log_v(self):
        for V in (2, 5, 11):
            loss = label_smoothed_cross_entropy(Tensor(np.zeros((3, V))), [1, V - 1, 1], 0.0)
            assert float(loss.data) == pytest.approx(math.log(V), abs=1e-14)

    def test_two_class_smoothed(self):
        loss = label_smoothed_cross_entropy(Tensor([[0.0, 0.0]]), [0], 0.1, pad_id=-1)
        assert float(loss.data) == pytest.approx(0.6931471805599453, abs=1e-14)

    def test_loss_decreases_to_zero_with_margin(self):
        losses = []
        for margin in (0.0, 1.0, 5.0, 20.0, 50.0):
            logits = np.zeros((1, 4))
            logits[0, 2] = margin
            losses.append(float(label_smoothed_cross_entropy(Tensor(logits), [2], 0.0).data))
        assert all(a > b for a, b in zip(losses, losses[1:]))
        assert losses[-1] < 1e-20

    def test_pad_rows_contribute_nothing(self, rng):
        logits = rng.normal(size=(4, 6))
        full = label_smoothed_cross_entropy(Tensor(logits[:2]), [4, 5], 0.1)
        padded = label_smoothed_cross_entropy(Tensor(logits), [4, 5, 0, 0], 0.1)
        assert float(full.data) == pytest.approx(float(padded.data), abs=1e-15)

    def test_all_pad_is_an_error(self):
        with pytest.raises(ValueError, match="padding"):
            label_smoothed_cross_entropy(Tensor(np.zeros((2, 3))), [0, 0], 0.1)

    def test_gradient(self, rng):
        from gatedformer.verify import finite_diff_grad, relative_error
        x = Tensor(rng.normal(size=(5, 7)), requires_grad=True)
        targets = [3, 0, 6, 2, 1]
        f = lambda t: label_smoothed_cross_entropy(t, targets, 0.1)
        with T.Tape() as tape:
            loss = f(x)
        tape.backward(loss)
        assert relative_error(x.grad, finite_diff_grad(f, x), 1e-9).max() < 1e-6
