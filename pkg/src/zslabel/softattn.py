"""Soft attention head: sigmoid token gates that double as token-level
classifiers, with an optional sharpness exponent on the normalization.

Per non-special token i with contextual embedding t_i:

    raw_i    = score_w . tanh(proj_w t_i + proj_b) + score_b
    gate_i   = sigmoid(raw_i)                       in [0, 1]
    weight_i = gate_i^beta / (sum_k gate_k^beta + eps)

The sentence representation is the weight-averaged sum of embeddings,
classified through one tanh layer plus sigmoid. beta = 1 reproduces
plain sum-normalization; beta > 1 sharpens the weight distribution.
The gates are trained purely through the sentence objective plus two
penalties pushing the per-sentence minimum gate to 0 and the maximum
gate to the gold sentence label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import LabeledSentence
from .encoder import EncoderOutput
from .errors import AlignmentError, ConfigError, ContractError, ValidationError
from .scores import ImportanceScores
from .tensor import Rng, Tensor

NATURAL_THRESHOLD = 0.5  # gates are absolute scores, so 0.5 needs no tuning


@dataclass
class HeadConfig:
    beta: float = 2.0
    gamma: float = 0.1
    norm_epsilon: float = 1e-8

    def validate(self) -> None:
        if self.beta < 1.0:
            raise ConfigError(f"beta must be >= 1, got {self.beta}")
        if self.gamma < 0.0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.norm_epsilon <= 0.0:
            raise ConfigError(f"norm_epsilon must be > 0, got {self.norm_epsilon}")


def init_softattn_params(
    model_dim: int,
    rng: Rng,
    attn_layer_size: int = 100,
    attn_hidden_size: int = 300,
) -> dict[str, Tensor]:
    return {
        "head.proj_w": T.glorot_init((model_dim, attn_layer_size), rng),
        "head.proj_b": T.parameter(np.zeros((1, attn_layer_size))),
        "head.score_w": T.glorot_init((attn_layer_size, 1), rng),
        "head.score_b": T.parameter(np.zeros((1, 1))),
        "head.hidden_w": T.glorot_init((model_dim, attn_hidden_size), rng),
        "head.hidden_b": T.parameter(np.zeros((1, attn_hidden_size))),
        "head.out_w": T.glorot_init((attn_hidden_size, 1), rng),
        "head.out_b": T.parameter(np.zeros((1, 1))),
    }


def normalized_weights(gates: np.ndarray, beta: float = 1.0, eps: float = 1e-8) -> np.ndarray:
    """Sharpened sum-normalization: g_i^beta / (sum_k g_k^beta + eps).

    Pure reference for the weight computation inside forward(); beta=1
    with eps=0 is plain sum-normalization.
    """
    gates = np.asarray(gates, dtype=np.float64).reshape(-1)
    if beta < 1.0:
        raise ConfigError(f"beta must be >= 1, got {beta}")
    powered = gates**beta
    return powered / (powered.sum() + eps)


@dataclass
class SoftAttnForward:
    """One sentence pass. gates are the unnormalized token scores in
    [0, 1]; weights the normalized attention; prob the sentence
    probability."""

    features: Tensor       # per-token attention features, N x layer_size
    raw_scores: Tensor     # pre-sigmoid scalar per token, N x 1
    gates: Tensor          # sigmoid scores in [0, 1], N x 1
    weights: Tensor        # normalized attention weights, N x 1
    sentence_repr: Tensor  # weighted sum of token embeddings, 1 x D
    sentence_hidden: Tensor
    logit: Tensor          # 1 x 1
    prob: Tensor           # 1 x 1, in (0, 1)
    real_indices: np.ndarray


def forward(
    output: EncoderOutput, params: dict[str, Tensor], config: HeadConfig
) -> SoftAttnForward:
    """Head forward pass over the non-special tokens of one sentence.

    CLS/SEP/padding take no part: the sentence representation is built
    from real tokens only.
    """
    config.validate()
    real = output.real_indices()
    if real.size == 0:
        raise ContractError("soft attention needs at least one non-special token")
    embeddings = T.gather_rows(output.token_embeddings, real)
    features = T.tanh(T.linear(embeddings, params["head.proj_w"], params["head.proj_b"]))
    raw = T.linear(features, params["head.score_w"], params["head.score_b"])
    gates = T.sigmoid(raw)
    powered = T.power(gates, config.beta)
    denom = T.scale(T.reduce_sum(powered), 1.0, offset=config.norm_epsilon)
    weights = T.mul(powered, T.power(denom, -1.0))
    sentence_repr = T.matmul(weights, embeddings, transpose_a=True)
    hidden = T.tanh(T.linear(sentence_repr, params["head.hidden_w"], params["head.hidden_b"]))
    logit = T.linear(hidden, params["head.out_w"], params["head.out_b"])
    return SoftAttnForward(
        features=features,
        raw_scores=raw,
        gates=gates,
        weights=weights,
        sentence_repr=sentence_repr,
        sentence_hidden=hidden,
        logit=logit,
        prob=T.sigmoid(logit),
        real_indices=real,
    )


@dataclass
class LossBreakdown:
    total: Tensor
    bce: float          # sentence cross-entropy
    min_penalty: float  # mean squared minimum gate
    max_penalty: float  # mean squared (maximum gate - gold label)


def joint_loss(
    forwards: list[SoftAttnForward], gold_labels, config: HeadConfig
) -> LossBreakdown:
    """Batch loss: bce + gamma * (min_penalty + max_penalty).

    The min/max run over each sentence's real tokens; at ties the
    subgradient goes to the first attaining token.
    """
    if not forwards:
        raise ContractError("joint_loss needs a non-empty batch")
    gold = list(gold_labels)
    if len(gold) != len(forwards):
        raise ValidationError(f"{len(forwards)} forwards but {len(gold)} labels")
    if any(y not in (0, 1) for y in gold):
        raise ValidationError(f"gold labels must be binary, got {sorted(set(gold))}")

    bce_sum = min_sum = max_sum = None
    for fw, y in zip(forwards, gold):
        bce = T.bce_with_logits(fw.logit, float(y))
        low = T.power(T.reduce_min(fw.gates), 2.0)
        high = T.power(T.scale(T.reduce_max(fw.gates), 1.0, offset=-float(y)), 2.0)
        bce_sum = bce if bce_sum is None else T.add(bce_sum, bce)
        min_sum = low if min_sum is None else T.add(min_sum, low)
        max_sum = high if max_sum is None else T.add(max_sum, high)
    inv_n = 1.0 / len(forwards)
    bce_mean = T.scale(bce_sum, inv_n)
    min_mean = T.scale(min_sum, inv_n)
    max_mean = T.scale(max_sum, inv_n)
    total = T.add(bce_mean, T.scale(T.add(min_mean, max_mean), config.gamma))
    return LossBreakdown(
        total=total,
        bce=bce_mean.item(),
        min_penalty=min_mean.item(),
        max_penalty=max_mean.item(),
    )


def aggregate_word_scores(
    token_values: np.ndarray, alignment: list[int], aggregation: str = "max"
) -> np.ndarray:
    """Collapse per-token values to per-word scores.

    "max" is the default; "mean" and "first" exist for ablation.
    """
    values = np.asarray(token_values, dtype=np.float64).reshape(-1)
    if len(values) != len(alignment):
        raise AlignmentError(
            f"{len(values)} token values for {len(alignment)} aligned tokens"
        )
    n_words = alignment[-1] + 1 if alignment else 0
    out = np.empty(n_words)
    for w in range(n_words):
        members = [values[i] for i, a in enumerate(alignment) if a == w]
        if not members:
            raise AlignmentError(f"word {w} has no aligned tokens")
        if aggregation == "max":
            out[w] = max(members)
        elif aggregation == "mean":
            out[w] = sum(members) / len(members)
        elif aggregation == "first":
            out[w] = members[0]
        else:
            raise ConfigError(f"unknown aggregation {aggregation!r}")
    return out


def token_scores(
    fw: SoftAttnForward,
    sentence: LabeledSentence,
    method: str = "soft",
    aggregation: str = "max",
    threshold: float = NATURAL_THRESHOLD,
) -> ImportanceScores:
    """Word importance scores from the gates of one forward pass."""
    if sentence.alignment is None:
        raise AlignmentError("sentence has no token alignment")
    word_scores = aggregate_word_scores(fw.gates.data, sentence.alignment, aggregation)
    return ImportanceScores(
        words=list(sentence.words),
        scores=word_scores,
        method=method,
        threshold=threshold,
        sentence_prob=fw.prob.item(),
    )
