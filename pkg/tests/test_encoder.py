"""Encoder behavior: attention map exposure, masking, determinism,
gradient fidelity through the full stack."""

import numpy as np
import pytest

from conftest import max_rel_error, numeric_gradient
from zslabel import tensor as T
from zslabel.data import KIND_CLS, KIND_PAD, KIND_REAL, KIND_SEP
from zslabel.encoder import (
    ClsForward,
    EncoderConfig,
    classify_cls,
    encode,
    init_cls_params,
    init_encoder_params,
)
from zslabel.errors import ConfigError, ContractError, SequenceLengthError
from zslabel.tensor import Rng, Tape, backward


def tiny_config(**overrides):
    base = dict(
        vocab_size=15, max_seq_len=12, num_layers=2, num_heads=2,
        model_dim=16, ffn_dim=24, dropout_prob=0.0,
    )
    base.update(overrides)
    return EncoderConfig(**base)


def make_inputs(n_real=4, pad=0):
    ids = np.array([1] + [5 + i for i in range(n_real)] + [2] + [0] * pad)
    kinds = np.array(
        [KIND_CLS] + [KIND_REAL] * n_real + [KIND_SEP] + [KIND_PAD] * pad, dtype=np.int8
    )
    return ids, kinds


class TestConfigValidation:
    def test_dim_head_divisibility(self):
        with pytest.raises(ConfigError):
            tiny_config(model_dim=10, num_heads=4).validate()

    def test_min_seq_len(self):
        with pytest.raises(ConfigError):
            tiny_config(max_seq_len=1).validate()


class TestEncode:
    def test_single_token_after_cls(self):
        cfg = tiny_config()
        params = init_encoder_params(cfg, Rng(0))
        ids = np.array([1, 5])
        kinds = np.array([KIND_CLS, KIND_REAL], dtype=np.int8)
        out = encode(ids, kinds, cfg, params)
        assert out.attention_maps.shape == (2, 2, 2, 2)
        np.testing.assert_allclose(out.attention_maps.sum(axis=3), 1.0, atol=1e-6)

    def test_eval_mode_deterministic(self):
        cfg = tiny_config(dropout_prob=0.1)
        params = init_encoder_params(cfg, Rng(1))
        ids, kinds = make_inputs()
        a = encode(ids, kinds, cfg, params, mode="eval")
        b = encode(ids, kinds, cfg, params, mode="eval")
        assert np.array_equal(a.token_embeddings.data, b.token_embeddings.data)
        assert np.array_equal(a.attention_maps, b.attention_maps)

    def test_train_mode_dropout_changes_output(self):
        cfg = tiny_config(dropout_prob=0.3)
        params = init_encoder_params(cfg, Rng(1))
        ids, kinds = make_inputs()
        ev = encode(ids, kinds, cfg, params, mode="eval")
        tr = encode(ids, kinds, cfg, params, mode="train", rng=Rng(7))
        assert not np.array_equal(ev.token_embeddings.data, tr.token_embeddings.data)

    def test_train_mode_needs_rng(self):
        cfg = tiny_config(dropout_prob=0.1)
        params = init_encoder_params(cfg, Rng(1))
        ids, kinds = make_inputs()
        with pytest.raises(ContractError):
            encode(ids, kinds, cfg, params, mode="train")

    def test_permuted_tokens_differ_through_positions(self):
        cfg = tiny_config()
        params = init_encoder_params(cfg, Rng(3))
        ids, kinds = make_inputs(4)
        swapped = ids.copy()
        swapped[1], swapped[2] = ids[2], ids[1]
        a = encode(ids, kinds, cfg, params)
        b = encode(swapped, kinds, cfg, params)
        assert not np.allclose(a.token_embeddings.data[1], b.token_embeddings.data[2])

    def test_attention_rows_stochastic(self):
        cfg = tiny_config()
        params = init_encoder_params(cfg, Rng(4))
        ids, kinds = make_inputs(6)
        out = encode(ids, kinds, cfg, params)
        np.testing.assert_allclose(out.attention_maps.sum(axis=3), 1.0, atol=1e-6)
        assert (out.attention_maps >= 0).all()

    def test_too_long_rejected_not_truncated(self):
        cfg = tiny_config(max_seq_len=4)
        params = init_encoder_params(cfg, Rng(0))
        ids, kinds = make_inputs(5)
        with pytest.raises(SequenceLengthError):
            encode(ids, kinds, cfg, params)

    def test_cls_must_lead(self):
        cfg = tiny_config()
        params = init_encoder_params(cfg, Rng(0))
        ids, kinds = make_inputs()
        kinds = kinds.copy()
        kinds[0] = KIND_REAL
        with pytest.raises(ContractError):
            encode(ids, kinds, cfg, params)


class TestPaddingMask:
    def test_padding_receives_zero_attention(self):
        cfg = tiny_config()
        params = init_encoder_params(cfg, Rng(5))
        ids, kinds = make_inputs(3, pad=3)
        out = encode(ids, kinds, cfg, params)
        assert (out.attention_maps[:, :, :, 5:] == 0.0).all()

    def test_padded_equals_unpadded_on_real_positions(self):
        cfg = tiny_config()
        params = init_encoder_params(cfg, Rng(5))
        ids, kinds = make_inputs(3)
        pids, pkinds = make_inputs(3, pad=4)
        a = encode(ids, kinds, cfg, params)
        b = encode(pids, pkinds, cfg, params)
        np.testing.assert_allclose(
            a.token_embeddings.data, b.token_embeddings.data[: len(ids)], atol=1e-12
        )

    def test_padding_contributes_zero_gradient(self):
        cfg = tiny_config()
        params = init_encoder_params(cfg, Rng(5))
        pids, pkinds = make_inputs(3, pad=4)
        with Tape() as tape:
            out = encode(pids, pkinds, cfg, params)
            real = out.real_indices()
            loss = T.reduce_sum(T.power(T.gather_rows(out.token_embeddings, real), 2.0))
        backward(tape, loss)
        # the PAD embedding row (id 0) never reaches the loss
        assert np.array_equal(params["enc.token_emb"].grad[0], np.zeros(cfg.model_dim))
        # and positional rows used only by padding stay untouched
        assert np.array_equal(
            params["enc.pos_emb"].grad[5:9], np.zeros((4, cfg.model_dim))
        )


class TestClassifyCls:
    def test_zero_head_gives_half(self):
        cfg = tiny_config()
        params = init_encoder_params(cfg, Rng(6))
        params["cls.w"] = T.parameter(np.zeros((cfg.model_dim, 1)))
        params["cls.b"] = T.parameter(np.zeros((1, 1)))
        ids, kinds = make_inputs()
        fw = classify_cls(encode(ids, kinds, cfg, params), params)
        assert fw.prob.item() == 0.5

    def test_probability_in_open_interval(self):
        cfg = tiny_config()
        rng = Rng(7)
        params = init_encoder_params(cfg, rng)
        params.update(init_cls_params(cfg, rng))
        ids, kinds = make_inputs()
        fw = classify_cls(encode(ids, kinds, cfg, params), params)
        assert isinstance(fw, ClsForward)
        assert 0.0 < fw.prob.item() < 1.0


class TestEncoderGradients:
    def test_full_encoder_gradcheck(self):
        """2-layer, d=16, 2-head instance against central differences."""
        cfg = tiny_config()
        rng = Rng(8)
        params = init_encoder_params(cfg, rng)
        params.update(init_cls_params(cfg, rng))
        ids, kinds = make_inputs(4)

        def value():
            with Tape() as tape:
                fw = classify_cls(encode(ids, kinds, cfg, params), params)
                loss = T.bce_with_logits(fw.logit, 1.0)
            return tape, loss

        tape, loss = value()
        backward(tape, loss)
        for name in ("enc.l0.q_w", "enc.l1.ffn1_w", "enc.l0.ln1_g", "cls.w", "enc.token_emb"):
            t = params[name]
            numeric = numeric_gradient(lambda: value()[1].item(), t)
            assert max_rel_error(t.grad, numeric) < 1e-3, name


def test_init_deterministic():
    cfg = tiny_config()
    a = init_encoder_params(cfg, Rng(42))
    b = init_encoder_params(cfg, Rng(42))
    assert set(a) == set(b)
    for name in a:
        assert np.array_equal(a[name].data, b[name].data)
