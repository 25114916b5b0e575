import math

import numpy as np
import pytest

from agents.bert_pin.encoder import (
    DistributionMatrix,
    ModelConfig,
    attention,
    attention_weights,
    decode_top1,
    embed_inputs,
    expected_shapes,
    forward,
    forward_logits,
    init_params,
    predict_proba,
    validate_params,
)
from core_numerics.errors import ConfigError, DataError, ShapeError
from core_numerics.tensor import Tensor, grad_check, softmax_cross_entropy
from load_data.windows import TokenSequence


def _tokens(rng, config, batch=None):
    shape = (config.window_len,) if batch is None else (batch, config.window_len)
    return rng.integers(0, config.classes, shape), rng.integers(0, config.classes, shape)


class TestConfig:
    def test_heads_must_divide_hidden(self):
        with pytest.raises(ConfigError):
            ModelConfig(hidden=10, heads=3)

    def test_one_hot_needs_square_tables(self):
        with pytest.raises(ConfigError):
            ModelConfig(classes=8, hidden=16, heads=2, embedding="one_hot")

    def test_dict_round_trip(self, tiny_config):
        assert ModelConfig.from_dict(tiny_config.to_dict()) == tiny_config


class TestParams:
    def test_shapes_match_config(self, tiny_config):
        params = init_params(tiny_config, seed=0)
        validate_params(params, tiny_config)
        assert params["layers.0.w1"].shape == (8, 32)
        assert params["head_w"].shape == (8, 8)

    def test_init_is_seeded(self, tiny_config):
        a, b = init_params(tiny_config, seed=3), init_params(tiny_config, seed=3)
        for name in a:
            np.testing.assert_array_equal(a[name].data, b[name].data)

    def test_init_values(self, tiny_config):
        params = init_params(tiny_config, seed=0, std=0.02)
        np.testing.assert_array_equal(params["layers.0.ln1_gamma"].data, 1.0)
        np.testing.assert_array_equal(params["head_b"].data, 0.0)
        assert np.abs(params["layers.0.wq"].data).max() <= 0.04

    def test_one_hot_tables_are_frozen(self):
        config = ModelConfig(classes=8, hidden=8, heads=2, layers=1, window_len=8, embedding="one_hot")
        params = init_params(config)
        np.testing.assert_array_equal(params["load_embed"].data, np.eye(8))
        assert "load_embed" not in dict(params.trainable())
        assert not params["temp_embed"].requires_grad

    def test_no_positional_table(self, tiny_config):
        config = ModelConfig(**{**tiny_config.to_dict(), "positional": "none"})
        assert "pos_embed" not in expected_shapes(config)

    def test_validate_catches_wrong_shape(self, tiny_config):
        params = init_params(tiny_config)
        params.tensors["head_b"] = Tensor(np.zeros(7))
        with pytest.raises(ShapeError, match="head_b"):
            validate_params(params, tiny_config)


class TestEmbedding:
    def test_sum_of_three_lookups(self, tiny_config):
        params = init_params(tiny_config, seed=1)
        tokens = TokenSequence(np.array([0, 3, 7]), np.array([5, 5, 1]), classes=8)
        out = embed_inputs(tokens, params).data
        expected = (
            params["load_embed"].data[[0, 3, 7]]
            + params["temp_embed"].data[[5, 5, 1]]
            + params["pos_embed"].data[:3]
        )
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)

    def test_sequence_longer_than_table(self, tiny_config):
        params = init_params(tiny_config)
        tokens = TokenSequence(np.zeros(9, np.int64), np.zeros(9, np.int64), classes=8)
        with pytest.raises(ShapeError):
            embed_inputs(tokens, params)


class TestAttention:
    def test_single_key_returns_its_value(self, rng):
        q = Tensor(rng.standard_normal((1, 4)))
        k = Tensor(rng.standard_normal((1, 4)))
        v = Tensor(rng.standard_normal((1, 3)))
        np.testing.assert_allclose(attention(q, k, v).data, v.data)

    def test_equal_scores_average_values(self):
        q = Tensor(np.zeros((1, 2)))
        k = Tensor(np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]]))
        v = Tensor(np.array([[3.0], [6.0], [9.0]]))
        np.testing.assert_allclose(attention(q, k, v).data, [[6.0]])

    def test_unit_head_width_weights(self):
        q = Tensor([[math.log(2.0)]])
        k = Tensor([[1.0], [0.0]])
        np.testing.assert_allclose(attention_weights(q, k).data, [[2 / 3, 1 / 3]])

    def test_key_value_count_mismatch(self):
        with pytest.raises(ShapeError):
            attention(Tensor(np.zeros((1, 2))), Tensor(np.zeros((3, 2))), Tensor(np.zeros((2, 2))))


class TestForward:
    def test_output_is_distribution_matrix(self, rng, tiny_config, window_factory):
        params = init_params(tiny_config, seed=0)
        dist = forward(window_factory(rng, 8, hole=(2, 5)), params, tiny_config)
        assert isinstance(dist, DistributionMatrix)
        assert dist.probs.shape == (8, 8)
        np.testing.assert_allclose(dist.probs.sum(axis=1), 1.0, atol=1e-12)
        assert dist.probs.min() >= 0.0

    def test_eval_is_deterministic(self, rng, tiny_config, window_factory):
        params = init_params(tiny_config, seed=0)
        window = window_factory(rng, 8, hole=(2, 5))
        np.testing.assert_array_equal(
            forward(window, params, tiny_config).probs, forward(window, params, tiny_config).probs
        )

    def test_batch_matches_single(self, rng, tiny_config):
        params = init_params(tiny_config, seed=2, std=0.5)
        load, temp = _tokens(rng, tiny_config, batch=3)
        batched = predict_proba(load, temp, params, tiny_config)
        for b in range(3):
            np.testing.assert_allclose(
                predict_proba(load[b], temp[b], params, tiny_config), batched[b], rtol=0, atol=1e-12
            )

    def test_temperature_order_matters(self, rng, tiny_config):
        params = init_params(tiny_config, seed=4, std=0.5)
        load = rng.integers(1, 8, 8)
        temp = np.arange(8)
        base = predict_proba(load, temp, params, tiny_config)
        permuted = predict_proba(load, temp[::-1].copy(), params, tiny_config)
        assert np.abs(base - permuted).max() > 1e-6

    def test_wrong_window_length(self, rng, tiny_config, window_factory):
        params = init_params(tiny_config)
        with pytest.raises(ShapeError):
            forward(window_factory(rng, 16, hole=(2, 5)), params, tiny_config)

    def test_train_mode_with_dropout_is_stochastic(self, rng, window_factory):
        config = ModelConfig(classes=8, hidden=8, heads=2, layers=1, dropout=0.5, window_len=8)
        params = init_params(config, seed=0, std=0.5)
        window = window_factory(rng, 8, hole=(2, 5))
        a = forward(window, params, config, mode="train", rng=np.random.default_rng(0))
        b = forward(window, params, config, mode="train", rng=np.random.default_rng(1))
        assert not np.array_equal(a.probs, b.probs)

    def test_train_mode_with_dropout_needs_rng(self, rng, window_factory):
        config = ModelConfig(classes=8, hidden=8, heads=2, layers=1, dropout=0.5, window_len=8)
        with pytest.raises(ConfigError, match="random generator"):
            forward(window_factory(rng, 8, hole=(2, 5)), init_params(config), config, mode="train")

    def test_bad_mode(self, rng, tiny_config, window_factory):
        with pytest.raises(ConfigError):
            forward(window_factory(rng, 8), init_params(tiny_config), tiny_config, mode="infer")


class TestDecoding:
    def test_top1_with_ties_to_lowest(self):
        probs = np.array([[0.1, 0.6, 0.3], [0.4, 0.4, 0.2], [0.0, 0.0, 1.0]])
        np.testing.assert_array_equal(decode_top1(DistributionMatrix(probs)), [1, 0, 2])

    def test_distribution_rows_validated(self):
        with pytest.raises(DataError):
            DistributionMatrix(np.array([[0.5, 0.4]]))


class TestEndToEndGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_every_trainable_tensor(self, seed, tiny_config):
        rng = np.random.default_rng(seed)
        params = init_params(tiny_config, seed=seed, std=0.5)
        load, temp = _tokens(rng, tiny_config, batch=2)
        labels = rng.integers(0, tiny_config.classes, (2, tiny_config.window_len))
        weights = rng.uniform(0.0, 1.0, labels.shape)

        for name, tensor in params.trainable():
            def loss(_: Tensor) -> Tensor:
                params.zero_grad()
                logits = forward_logits(load, temp, params, tiny_config)
                return softmax_cross_entropy(logits, labels, weights)

            report = grad_check(loss, tensor, floor=1e-5)
            assert report.passed(1e-4), f"{name}: {report}"
