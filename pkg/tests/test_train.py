"""Training loop: schedules, checkpoint selection, reproducibility,
and the zero-shot guard against token-label leakage."""

import numpy as np
import pytest

from zslabel.data import (
    SynthConfig,
    build_vocab,
    generate_synthetic,
    tokenize_dataset,
)
from zslabel.encoder import EncoderConfig, init_encoder_params
from zslabel.errors import ConfigError, ContractError, DivergenceError
from zslabel.softattn import init_softattn_params
from zslabel.tensor import Rng, parameter
from zslabel.train import (
    AdamW,
    TrainConfig,
    clip_gradients,
    linear_schedule,
    strip_token_labels,
    train_model,
)


def tiny_task(n_train=60, n_dev=24, seed=5):
    synth = generate_synthetic(
        SynthConfig(n_train=n_train, n_dev=n_dev, n_test=10, vocab_size=40,
                    cue_lexicon_size=4, min_len=3, max_len=6, seed=seed)
    )
    vocab = build_vocab(synth.train, "word")
    train = tokenize_dataset(synth.train, vocab, "word")
    dev = tokenize_dataset(synth.dev, vocab, "word")
    return train, dev, vocab


def tiny_encoder(vocab):
    return EncoderConfig(vocab_size=len(vocab), max_seq_len=16, num_layers=1,
                         num_heads=2, model_dim=16, ffn_dim=24, dropout_prob=0.1)


def tiny_train_config(**overrides):
    base = dict(epochs=2, batch_size=8, seed=0, attn_layer_size=8, attn_hidden_size=12)
    base.update(overrides)
    return TrainConfig(**base)


class TestSchedule:
    def test_warmup_then_decay(self):
        lrs = [linear_schedule(s, 100, 10, 1.0) for s in range(101)]
        assert lrs[0] == 0.0
        assert lrs[10] == 1.0
        assert lrs[55] == pytest.approx(0.5)
        assert lrs[100] == 0.0
        assert all(a <= b + 1e-12 for a, b in zip(lrs[:10], lrs[1:11]))

    def test_no_warmup(self):
        assert linear_schedule(0, 10, 0, 2.0) == 2.0


class TestAdamW:
    def test_decay_applies_to_weights_only(self):
        w = parameter(np.full((2, 2), 10.0))
        b = parameter(np.full((1, 2), 10.0))
        opt = AdamW({"x_w": w, "x_b": b}, weight_decay=0.5)
        opt.step(lr=0.1)  # zero gradients: only decay moves anything
        assert np.allclose(w.data, 10.0 - 0.1 * 0.5 * 10.0)
        assert np.allclose(b.data, 10.0)

    def test_clip_gradients_global_norm(self):
        a = parameter(np.zeros((2, 2)))
        a.grad = np.full((2, 2), 3.0)
        norm = clip_gradients({"a_w": a}, 1.0)
        assert norm == pytest.approx(6.0)
        assert np.linalg.norm(a.grad) == pytest.approx(1.0)


class TestTrainModel:
    def test_zero_learning_rate_leaves_parameters_at_init(self):
        train, dev, vocab = tiny_task()
        enc = tiny_encoder(vocab)
        cfg = tiny_train_config(epochs=1, learning_rate=0.0, weight_decay=0.0)
        result = train_model(train, dev, enc, cfg, kind="softattn")
        init_rng = Rng(cfg.seed).child(0)
        expected = init_encoder_params(enc, init_rng)
        expected.update(init_softattn_params(enc.model_dim, init_rng, 8, 12))
        for name, p in expected.items():
            assert np.array_equal(result.params[name].data, p.data), name

    def test_fixed_seed_reproducible(self):
        train, dev, vocab = tiny_task()
        enc = tiny_encoder(vocab)
        a = train_model(train, dev, enc, tiny_train_config(), kind="softattn")
        b = train_model(train, dev, enc, tiny_train_config(), kind="softattn")
        assert [h.total for h in a.history] == [h.total for h in b.history]
        assert [h.dev_sentence_f1 for h in a.history] == [h.dev_sentence_f1 for h in b.history]
        for name in a.params:
            assert np.array_equal(a.params[name].data, b.params[name].data)

    def test_best_checkpoint_is_first_argmax(self):
        train, dev, vocab = tiny_task()
        result = train_model(train, dev, tiny_encoder(vocab),
                             tiny_train_config(epochs=4), kind="softattn")
        f1s = [h.dev_sentence_f1 for h in result.history]
        assert result.best_epoch == int(np.argmax(f1s))
        assert result.best_dev_f1 == max(f1s)

    def test_tie_keeps_earlier_epoch(self):
        train, dev, vocab = tiny_task()
        cfg = tiny_train_config(epochs=3, learning_rate=0.0, weight_decay=0.0)
        result = train_model(train, dev, tiny_encoder(vocab), cfg, kind="softattn")
        f1s = [h.dev_sentence_f1 for h in result.history]
        assert len(set(f1s)) == 1  # frozen model, identical dev F1 every epoch
        assert result.best_epoch == 0

    def test_loss_decreases_on_cue_task(self):
        train, dev, vocab = tiny_task(n_train=100)
        result = train_model(train, dev, tiny_encoder(vocab),
                             tiny_train_config(epochs=3), kind="softattn")
        assert result.history[-1].total < result.history[0].total

    def test_cls_kind_trains(self):
        train, dev, vocab = tiny_task()
        result = train_model(train, dev, tiny_encoder(vocab),
                             tiny_train_config(), kind="cls")
        assert result.kind == "cls"
        assert result.head_config is None
        assert "cls.w" in result.params
        assert all(h.min_penalty == 0.0 for h in result.history)

    def test_divergence_aborts_with_step(self):
        train, dev, vocab = tiny_task()
        cfg = tiny_train_config(learning_rate=1e18, clip_norm=0.0)
        with np.errstate(all="ignore"):  # the explosion itself is the point
            with pytest.raises(DivergenceError) as err:
                train_model(train, dev, tiny_encoder(vocab), cfg, kind="softattn")
        assert err.value.step is not None

    def test_untokenized_rejected(self):
        train, dev, vocab = tiny_task()
        raw = strip_token_labels(train)
        raw[0].token_ids = None
        with pytest.raises(ContractError):
            train_model(raw, dev, tiny_encoder(vocab), tiny_train_config())

    def test_unknown_kind_rejected(self):
        train, dev, vocab = tiny_task()
        with pytest.raises(ConfigError):
            train_model(train, dev, tiny_encoder(vocab), tiny_train_config(), kind="bilstm")

    def test_warm_start_uses_given_encoder(self):
        train, dev, vocab = tiny_task()
        enc = tiny_encoder(vocab)
        pretrained = train_model(train, dev, enc, tiny_train_config(epochs=1), kind="cls")
        cfg = tiny_train_config(epochs=1, learning_rate=0.0, weight_decay=0.0)
        warm = train_model(train, dev, enc, cfg, kind="softattn",
                           initial_params=pretrained.params)
        # frozen run: encoder params stay at the warm-start values,
        # head params at their fresh seeded init
        for name, p in pretrained.params.items():
            if name.startswith("enc."):
                assert np.array_equal(warm.params[name].data, p.data), name
        assert "head.proj_w" in warm.params and "cls.w" not in warm.params
        # warm start copies: donor tensors are never mutated
        donor = pretrained.params["enc.token_emb"]
        warm2 = train_model(train, dev, enc, tiny_train_config(epochs=1),
                            kind="softattn", initial_params=pretrained.params)
        assert warm2.params is not pretrained.params
        assert np.array_equal(donor.data, pretrained.params["enc.token_emb"].data)

    def test_warm_start_shape_mismatch_rejected(self):
        train, dev, vocab = tiny_task()
        enc = tiny_encoder(vocab)
        donor = train_model(train, dev, enc, tiny_train_config(epochs=1), kind="cls")
        other = tiny_encoder(vocab)
        other.model_dim, other.ffn_dim = 32, 48
        with pytest.raises(ConfigError, match="warm-start"):
            train_model(train, dev, other, tiny_train_config(epochs=1),
                        kind="softattn", initial_params=donor.params)


class TestZeroShotGuard:
    def test_strip_token_labels(self):
        train, _, _ = tiny_task()
        stripped = strip_token_labels(train)
        assert all(s.token_labels is None for s in stripped)
        assert all(s.token_labels is not None for s in train)  # originals intact

    def test_poisoned_labels_leave_checkpoint_bitwise_unchanged(self):
        train, dev, vocab = tiny_task()
        enc = tiny_encoder(vocab)
        clean = train_model(train, dev, enc, tiny_train_config(), kind="softattn")

        rng = Rng(1)
        for sent in train + dev:
            sent.token_labels = [rng.randbelow(2) for _ in sent.words]
            if sent.sentence_label == 0:
                sent.token_labels = [0] * len(sent.words)  # keep sentences valid
        poisoned = train_model(train, dev, enc, tiny_train_config(), kind="softattn")

        assert set(clean.params) == set(poisoned.params)
        for name in clean.params:
            assert np.array_equal(clean.params[name].data, poisoned.params[name].data), name
        assert [h.total for h in clean.history] == [h.total for h in poisoned.history]


class TestTrainConfig:
    def test_profile_rates(self):
        assert TrainConfig(profile="micro-scratch").resolved_learning_rate() == 1e-3
        assert TrainConfig(profile="pretrained-finetune").resolved_learning_rate() == 2e-5
        assert TrainConfig(learning_rate=0.5).resolved_learning_rate() == 0.5

    @pytest.mark.parametrize(
        "kwargs",
        [dict(epochs=0), dict(batch_size=0), dict(profile="sgd"), dict(warmup_ratio=-0.1)],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs).validate()
