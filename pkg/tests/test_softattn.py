"""Soft attention head: normalization identities, loss component
values against hand calculations, gradient fidelity, Eq-style word
aggregation."""

import numpy as np
import pytest

from conftest import max_rel_error, numeric_gradient
from zslabel import tensor as T
from zslabel.data import KIND_CLS, KIND_REAL, KIND_SEP, LabeledSentence, Vocab, tokenize
from zslabel.encoder import EncoderConfig, EncoderOutput, encode, init_encoder_params
from zslabel.errors import AlignmentError, ConfigError, ContractError, ValidationError
from zslabel.softattn import (
    HeadConfig,
    SoftAttnForward,
    aggregate_word_scores,
    forward,
    init_softattn_params,
    joint_loss,
    normalized_weights,
    token_scores,
)
from zslabel.tensor import Rng, Tape, Tensor, backward


def stub_output(embeddings: np.ndarray, with_special: bool = True) -> EncoderOutput:
    """EncoderOutput wrapping the given real-token embeddings directly,
    isolating the head from the encoder."""
    n, d = embeddings.shape
    if with_special:
        full = np.vstack([np.zeros((1, d)), embeddings, np.zeros((1, d))])
        kinds = np.array([KIND_CLS] + [KIND_REAL] * n + [KIND_SEP], dtype=np.int8)
    else:
        full = embeddings
        kinds = np.array([KIND_REAL] * n, dtype=np.int8)
    total = len(full)
    maps = np.full((1, 1, total, total), 1.0 / total)
    return EncoderOutput(
        token_embeddings=T.parameter(full), attention_maps=maps, token_kinds=kinds
    )


def rigged_params(target_gates: np.ndarray) -> tuple[EncoderOutput, dict]:
    """Head parameters and stub embeddings that make the gates equal
    target_gates: embeddings x satisfy 4*tanh(tanh(x)) = logit(gate)."""
    logits = np.log(target_gates / (1.0 - target_gates))
    embeddings = np.arctanh(logits / 4.0)[:, None]
    output = stub_output(embeddings)
    params = {
        "head.proj_w": T.parameter([[1.0]]),
        "head.proj_b": T.parameter([[0.0]]),
        "head.score_w": T.parameter([[4.0]]),
        "head.score_b": T.parameter([[0.0]]),
        "head.hidden_w": T.parameter(np.ones((1, 2))),
        "head.hidden_b": T.parameter(np.zeros((1, 2))),
        "head.out_w": T.parameter(np.ones((2, 1))),
        "head.out_b": T.parameter(np.zeros((1, 1))),
    }
    return output, params


class TestHeadConfig:
    @pytest.mark.parametrize("kwargs", [dict(beta=0.5), dict(gamma=-1), dict(norm_epsilon=0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            HeadConfig(**kwargs).validate()


class TestNormalizedWeights:
    def test_equal_gates_give_uniform_weights(self):
        for beta in (1.0, 2.0, 3.5):
            w = normalized_weights(np.full(5, 0.7), beta=beta, eps=0.0)
            np.testing.assert_allclose(w, 0.2, atol=1e-12)

    def test_hand_case_beta_two(self):
        # 0.81/0.90 and 0.09/0.90
        w = normalized_weights(np.array([0.9, 0.3]), beta=2.0, eps=0.0)
        np.testing.assert_allclose(w, [0.9, 0.1], atol=1e-12)

    def test_hand_case_beta_one(self):
        w = normalized_weights(np.array([0.9, 0.3]), beta=1.0, eps=0.0)
        np.testing.assert_allclose(w, [0.75, 0.25], atol=1e-12)

    def test_beta_below_one_rejected(self):
        with pytest.raises(ConfigError):
            normalized_weights(np.array([0.5]), beta=0.5)

    def test_sharpening_monotone_and_argmax_stable(self):
        rng = Rng(17)
        for _ in range(200):
            n = 2 + rng.randbelow(12)
            gates = rng.uniform(n) * 0.98 + 0.01
            if np.allclose(gates, gates[0]):
                continue
            base = normalized_weights(gates, beta=1.0, eps=0.0)
            for beta in (2.0, 3.0, 4.0):
                sharp = normalized_weights(gates, beta=beta, eps=0.0)
                assert sharp.max() >= base.max()
                assert sharp.argmax() == base.argmax()


class TestForward:
    def test_gates_match_rigged_targets(self):
        targets = np.array([0.9, 0.3])
        output, params = rigged_params(targets)
        fw = forward(output, params, HeadConfig(beta=2.0))
        np.testing.assert_allclose(fw.gates.data.reshape(-1), targets, atol=1e-12)
        np.testing.assert_allclose(fw.weights.data.reshape(-1), [0.9, 0.1], atol=1e-7)

    def test_weights_match_pure_formula(self):
        cfg = EncoderConfig(vocab_size=10, max_seq_len=10, num_layers=1, num_heads=2,
                            model_dim=8, ffn_dim=12, dropout_prob=0.0)
        rng = Rng(3)
        params = init_encoder_params(cfg, rng)
        params.update(init_softattn_params(8, rng, 6, 7))
        ids = np.array([1, 4, 5, 6, 2])
        kinds = np.array([KIND_CLS] + [KIND_REAL] * 3 + [KIND_SEP], dtype=np.int8)
        hc = HeadConfig(beta=3.0, gamma=0.1, norm_epsilon=1e-8)
        fw = forward(encode(ids, kinds, cfg, params), params, hc)
        expected = normalized_weights(fw.gates.data, beta=3.0, eps=1e-8)
        np.testing.assert_allclose(fw.weights.data.reshape(-1), expected, atol=1e-15)

    def test_reduction_to_plain_normalization(self):
        rng = Rng(9)
        for trial in range(50):
            n = 1 + rng.randbelow(10)
            output, params = rigged_params(rng.uniform(n) * 0.9 + 0.05)
            fw = forward(output, params, HeadConfig(beta=1.0, norm_epsilon=np.nextafter(0, 1)))
            gates = fw.gates.data.reshape(-1)
            plain = gates / gates.sum()
            assert np.abs(fw.weights.data.reshape(-1) - plain).max() <= 1e-12

    def test_invariants_on_random_forwards(self):
        rng = Rng(10)
        for _ in range(30):
            n = 1 + rng.randbelow(8)
            output, params = rigged_params(rng.uniform(n) * 0.9 + 0.05)
            fw = forward(output, params, HeadConfig(beta=2.0))
            gates = fw.gates.data
            assert ((gates >= 0) & (gates <= 1)).all()
            assert abs(fw.weights.data.sum() - 1.0) < 1e-6
            assert 0.0 < fw.prob.item() < 1.0

    def test_no_real_tokens_rejected(self):
        output = stub_output(np.zeros((1, 4)))
        output.token_kinds[1] = KIND_SEP  # no REAL positions left
        params = init_softattn_params(4, Rng(0), 3, 3)
        with pytest.raises(ContractError):
            forward(output, params, HeadConfig())

    def test_permutation_equivariance_with_identity_stub(self):
        rng = Rng(11)
        emb = rng.uniform((5, 6)) - 0.5
        params = init_softattn_params(6, rng, 4, 5)
        hc = HeadConfig(beta=2.0)
        fw = forward(stub_output(emb), params, hc)
        perm = [3, 0, 4, 1, 2]
        fw_p = forward(stub_output(emb[perm]), params, hc)
        np.testing.assert_allclose(
            fw_p.gates.data.reshape(-1), fw.gates.data.reshape(-1)[perm], atol=1e-15
        )
        np.testing.assert_allclose(fw_p.sentence_repr.data, fw.sentence_repr.data, atol=1e-12)
        np.testing.assert_allclose(fw_p.prob.item(), fw.prob.item(), atol=1e-12)


def fake_forward(gates, logit=0.0):
    """Forward carrying only what joint_loss reads."""
    g = Tensor(np.asarray(gates, dtype=np.float64).reshape(-1, 1))
    z = Tensor([[float(logit)]])
    return SoftAttnForward(
        features=None, raw_scores=None, gates=g, weights=None,
        sentence_repr=None, sentence_hidden=None, logit=z,
        prob=T.sigmoid(z), real_indices=np.arange(len(g.data)),
    )


class TestJointLoss:
    def test_hand_computed_case(self):
        # gates [0.2, 0.8], gold 1, prob 0.5: bce = ln 2, penalties 0.04 each
        fw = fake_forward([0.2, 0.8], logit=0.0)
        loss = joint_loss([fw], [1], HeadConfig(beta=2.0, gamma=0.1))
        assert loss.bce == pytest.approx(0.6931471805599453, abs=1e-12)
        assert loss.min_penalty == pytest.approx(0.04, abs=1e-12)
        assert loss.max_penalty == pytest.approx(0.04, abs=1e-12)
        assert loss.total.item() == pytest.approx(0.7011471805599453, abs=1e-4)

    def test_zero_gate_kills_min_penalty(self):
        loss = joint_loss([fake_forward([0.0, 0.5])], [1], HeadConfig())
        assert loss.min_penalty == 0.0

    def test_max_penalty_zeros(self):
        assert joint_loss([fake_forward([1.0, 0.2])], [1], HeadConfig()).max_penalty == 0.0
        assert joint_loss([fake_forward([0.0, 0.0])], [0], HeadConfig()).max_penalty == 0.0

    def test_batch_averaging(self):
        fws = [fake_forward([0.5]), fake_forward([0.3])]
        loss = joint_loss(fws, [1, 0], HeadConfig(gamma=0.0))
        individual = [
            joint_loss([fw], [y], HeadConfig(gamma=0.0)).bce
            for fw, y in zip(fws, [1, 0])
        ]
        assert loss.bce == pytest.approx(np.mean(individual), abs=1e-12)

    def test_non_binary_label_rejected(self):
        with pytest.raises(ValidationError):
            joint_loss([fake_forward([0.5])], [2], HeadConfig())

    def test_empty_batch_rejected(self):
        with pytest.raises(ContractError):
            joint_loss([], [], HeadConfig())

    def test_gamma_weighting(self):
        fw = fake_forward([0.2, 0.8], logit=0.0)
        for gamma in (0.0, 0.1, 1.0):
            loss = joint_loss([fw], [1], HeadConfig(gamma=gamma))
            expected = loss.bce + gamma * (loss.min_penalty + loss.max_penalty)
            assert loss.total.item() == pytest.approx(expected, abs=1e-12)

    def test_gradients_through_loss_and_model(self):
        """Finite differences through forward + joint loss, min/max
        subgradients included."""
        cfg = EncoderConfig(vocab_size=12, max_seq_len=10, num_layers=1, num_heads=2,
                            model_dim=8, ffn_dim=12, dropout_prob=0.0)
        rng = Rng(13)
        params = init_encoder_params(cfg, rng)
        params.update(init_softattn_params(8, rng, 6, 7))
        hc = HeadConfig(beta=2.0, gamma=0.1)
        ids = np.array([1, 4, 5, 6, 7, 2])
        kinds = np.array([KIND_CLS] + [KIND_REAL] * 4 + [KIND_SEP], dtype=np.int8)

        def value():
            with Tape() as tape:
                fw = forward(encode(ids, kinds, cfg, params), params, hc)
                loss = joint_loss([fw], [1], hc)
            return tape, loss

        tape, loss = value()
        backward(tape, loss.total)
        for name in ("head.proj_w", "head.score_w", "head.out_w", "enc.l0.v_w"):
            t = params[name]
            numeric = numeric_gradient(lambda: value()[1].total.item(), t)
            assert max_rel_error(t.grad, numeric) < 1e-3, name


class TestWordAggregation:
    def test_max_over_subwords(self):
        assert aggregate_word_scores([0.2, 0.7, 0.4], [0, 0, 0])[0] == 0.7

    def test_single_subword_identity(self):
        np.testing.assert_allclose(aggregate_word_scores([0.42], [0]), [0.42])

    def test_mixed_split_pattern(self):
        # 3 words split [1, 2, 1]
        out = aggregate_word_scores([0.1, 0.6, 0.3, 0.9], [0, 1, 1, 2])
        np.testing.assert_allclose(out, [0.1, 0.6, 0.9])

    def test_mean_and_first_ablations(self):
        vals, align = [0.2, 0.6, 0.4], [0, 0, 0]
        assert aggregate_word_scores(vals, align, "mean")[0] == pytest.approx(0.4)
        assert aggregate_word_scores(vals, align, "first")[0] == 0.2

    def test_length_mismatch_rejected(self):
        with pytest.raises(AlignmentError):
            aggregate_word_scores([0.1, 0.2], [0])

    def test_token_scores_end_to_end(self):
        vocab = Vocab(["aaaa", "bbbbbb"])
        words = ["aaaa", "bbbbbb"]
        ids, alignment, kinds, _ = tokenize(words, vocab, "word")
        sent = LabeledSentence(words, 1, None, ids, alignment, kinds)
        output, params = rigged_params(np.array([0.2, 0.9]))
        fw = forward(output, params, HeadConfig(beta=2.0))
        scored = token_scores(fw, sent, method="weighted-soft")
        np.testing.assert_allclose(scored.scores, [0.2, 0.9], atol=1e-12)
        assert scored.threshold == 0.5
        assert list(scored.predictions()) == [0, 1]
        assert scored.sentence_prob == pytest.approx(fw.prob.item())
