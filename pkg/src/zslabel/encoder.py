"""Small trainable transformer encoder exposing every attention map.

Post-layer-norm residual blocks, learned positional embeddings, CLS at
position 0, SEP appended; dropout on attention probabilities and FFN
activations in train mode only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import KIND_CLS, KIND_PAD, KIND_REAL
from .errors import ConfigError, ContractError, SequenceLengthError
from .tensor import Rng, Tensor


@dataclass
class EncoderConfig:
    vocab_size: int
    max_seq_len: int = 128
    num_layers: int = 2
    num_heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 128
    dropout_prob: float = 0.1

    def validate(self) -> None:
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by {self.num_heads} heads"
            )
        if self.max_seq_len < 2:
            raise ConfigError("max_seq_len must be >= 2 (CLS plus one token)")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ConfigError(f"dropout_prob must be in [0, 1), got {self.dropout_prob}")
        if min(self.vocab_size, self.num_layers, self.ffn_dim) < 1:
            raise ConfigError("vocab_size, num_layers and ffn_dim must be >= 1")


@dataclass
class EncoderOutput:
    """Contextual embeddings plus every attention distribution.

    attention_maps has shape (num_layers, num_heads, N, N); each row is
    a distribution over key positions, exactly 0 at padding.
    """

    token_embeddings: Tensor
    attention_maps: np.ndarray
    token_kinds: np.ndarray

    def real_indices(self) -> np.ndarray:
        return np.flatnonzero(self.token_kinds == KIND_REAL)


def init_encoder_params(config: EncoderConfig, rng: Rng) -> dict[str, Tensor]:
    """Glorot-initialized weights, zero biases, unit layer-norm gains.
    Creation order is fixed so a seed pins every value."""
    config.validate()
    d, f = config.model_dim, config.ffn_dim
    params: dict[str, Tensor] = {
        "enc.token_emb": T.glorot_init((config.vocab_size, d), rng),
        "enc.pos_emb": T.glorot_init((config.max_seq_len, d), rng),
    }
    for i in range(config.num_layers):
        p = f"enc.l{i}."
        for name in ("q", "k", "v", "attn_out"):
            params[p + name + "_w"] = T.glorot_init((d, d), rng)
            params[p + name + "_b"] = T.parameter(np.zeros((1, d)))
        params[p + "ln1_g"] = T.parameter(np.ones((1, d)))
        params[p + "ln1_b"] = T.parameter(np.zeros((1, d)))
        params[p + "ffn1_w"] = T.glorot_init((d, f), rng)
        params[p + "ffn1_b"] = T.parameter(np.zeros((1, f)))
        params[p + "ffn2_w"] = T.glorot_init((f, d), rng)
        params[p + "ffn2_b"] = T.parameter(np.zeros((1, d)))
        params[p + "ln2_g"] = T.parameter(np.ones((1, d)))
        params[p + "ln2_b"] = T.parameter(np.zeros((1, d)))
    return params


def init_cls_params(config: EncoderConfig, rng: Rng) -> dict[str, Tensor]:
    """Sentence classification head on the CLS embedding."""
    return {
        "cls.w": T.glorot_init((config.model_dim, 1), rng),
        "cls.b": T.parameter(np.zeros((1, 1))),
    }


def encode(
    token_ids: np.ndarray,
    kinds: np.ndarray,
    config: EncoderConfig,
    params: dict[str, Tensor],
    mode: str = "eval",
    rng: Rng | None = None,
) -> EncoderOutput:
    """Run the encoder over one token sequence.

    Deterministic in eval mode. Over-long sequences are an error, never
    silently truncated (the tokenizer truncates explicitly).
    """
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    token_ids = np.asarray(token_ids, dtype=np.int64)
    kinds = np.asarray(kinds, dtype=np.int8)
    n = len(token_ids)
    if n < 1 or n != len(kinds):
        raise ContractError(f"got {n} token ids and {len(kinds)} kinds")
    if n > config.max_seq_len:
        raise SequenceLengthError(
            f"sequence of {n} tokens exceeds max_seq_len {config.max_seq_len}"
        )
    if kinds[0] != KIND_CLS:
        raise ContractError("position 0 must hold the CLS token")
    train = mode == "train"
    drop = config.dropout_prob if train else 0.0
    if drop > 0.0 and rng is None:
        raise ContractError("train mode with dropout needs an rng")

    key_keep = kinds != KIND_PAD
    x = T.add(
        T.gather_rows(params["enc.token_emb"], token_ids),
        T.gather_rows(params["enc.pos_emb"], np.arange(n)),
    )
    maps = np.empty((config.num_layers, config.num_heads, n, n))
    for i in range(config.num_layers):
        p = f"enc.l{i}."
        q = T.linear(x, params[p + "q_w"], params[p + "q_b"])
        k = T.linear(x, params[p + "k_w"], params[p + "k_b"])
        v = T.linear(x, params[p + "v_w"], params[p + "v_b"])
        attended, probs = T.attention(
            q, k, v, config.num_heads, key_keep, dropout_prob=drop, rng=rng
        )
        maps[i] = probs
        attn_out = T.linear(attended, params[p + "attn_out_w"], params[p + "attn_out_b"])
        x = T.layer_norm(T.add(x, attn_out), params[p + "ln1_g"], params[p + "ln1_b"])
        h = T.gelu(T.linear(x, params[p + "ffn1_w"], params[p + "ffn1_b"]))
        if drop > 0.0:
            h = T.dropout(h, drop, rng)
        ffn_out = T.linear(h, params[p + "ffn2_w"], params[p + "ffn2_b"])
        x = T.layer_norm(T.add(x, ffn_out), params[p + "ln2_g"], params[p + "ln2_b"])
    return EncoderOutput(token_embeddings=x, attention_maps=maps, token_kinds=kinds.copy())


@dataclass
class ClsForward:
    logit: Tensor
    prob: Tensor


def classify_cls(output: EncoderOutput, params: dict[str, Tensor]) -> ClsForward:
    """Sentence probability from the CLS embedding: linear + sigmoid."""
    if output.token_kinds[0] != KIND_CLS:
        raise ContractError("position 0 must hold the CLS token")
    cls_emb = T.gather_rows(output.token_embeddings, np.array([0]))
    logit = T.linear(cls_emb, params["cls.w"], params["cls.b"])
    return ClsForward(logit=logit, prob=T.sigmoid(logit))
