"""Training loop: decoupled-weight-decay Adam, linear warmup then
linear decay, best-checkpoint selection by dev sentence F1.

The trainer never reads gold token labels: both the train and dev
inputs are stripped of them at entry, so a poisoned token column
cannot change a single bit of the resulting checkpoint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import softattn
from .data import LabeledSentence
from .encoder import (
    EncoderConfig,
    classify_cls,
    encode,
    init_cls_params,
    init_encoder_params,
)
from .errors import ConfigError, ContractError, DivergenceError, NumericError
from .evaluate import sentence_prf
from .softattn import HeadConfig, LossBreakdown, init_softattn_params
from .tensor import Rng, Tape, Tensor, backward, bce_with_logits, parameter, scale, add

log = logging.getLogger(__name__)

PROFILE_LEARNING_RATES = {
    "micro-scratch": 1e-3,    # from-scratch micro encoders
    "pretrained-finetune": 2e-5,  # rates for fine-tuning a pretrained encoder
}


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float | None = None  # None resolves via profile
    warmup_ratio: float = 0.1
    weight_decay: float = 0.1
    adam_epsilon: float = 1e-7
    gamma: float = 0.1
    beta: float = 2.0
    seed: int = 0
    eval_batch_size: int = 64
    profile: str = "micro-scratch"
    clip_norm: float = 1.0
    attn_layer_size: int = 100
    attn_hidden_size: int = 300

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.profile not in PROFILE_LEARNING_RATES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        rates = (
            self.warmup_ratio, self.weight_decay, self.adam_epsilon,
            self.gamma, self.clip_norm,
        )
        if any(r < 0 for r in rates):
            raise ConfigError("rates must be >= 0")
        if self.learning_rate is not None and self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")

    def resolved_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return PROFILE_LEARNING_RATES[self.profile]


class AdamW:
    """Adam with decoupled weight decay; decay applies only to weight
    matrices and embeddings (names ending _w or _emb)."""

    def __init__(self, params: dict[str, Tensor], betas=(0.9, 0.999),
                 eps: float = 1e-7, weight_decay: float = 0.1):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self._m[name] = self.beta1 * self._m[name] + (1 - self.beta1) * g
            v = self._v[name] = self.beta2 * self._v[name] + (1 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay > 0 and (name.endswith("_w") or name.endswith("_emb")):
                update = update + self.weight_decay * p.data
            p.data -= lr * update


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad**2).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


def linear_schedule(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup to base_lr, then linear decay to 0."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    if total_steps <= warmup_steps:
        return base_lr
    return base_lr * max(0.0, (total_steps - step) / (total_steps - warmup_steps))


def strip_token_labels(sentences: list[LabeledSentence]) -> list[LabeledSentence]:
    """Zero-shot guard: copies with the gold token labels removed."""
    return [replace(s, token_labels=None) for s in sentences]


@dataclass
class EpochLog:
    epoch: int
    bce: float
    min_penalty: float
    max_penalty: float
    total: float
    dev_sentence_f1: float
    learning_rate: float


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    kind: str
    encoder_config: EncoderConfig
    head_config: HeadConfig | None
    best_epoch: int
    best_dev_f1: float
    history: list[EpochLog] = field(default_factory=list)


def _batch_loss(batch, params, encoder_config, head_config, kind, dropout_rng) -> LossBreakdown:
    if kind == "softattn":
        forwards, labels = [], []
        for sent in batch:
            output = encode(sent.token_ids, sent.kinds, encoder_config, params,
                            mode="train", rng=dropout_rng)
            forwards.append(softattn.forward(output, params, head_config))
            labels.append(sent.sentence_label)
        return softattn.joint_loss(forwards, labels, head_config)
    if kind == "cls":
        loss_sum = None
        for sent in batch:
            output = encode(sent.token_ids, sent.kinds, encoder_config, params,
                            mode="train", rng=dropout_rng)
            fw = classify_cls(output, params)
            term = bce_with_logits(fw.logit, float(sent.sentence_label))
            loss_sum = term if loss_sum is None else add(loss_sum, term)
        mean = scale(loss_sum, 1.0 / len(batch))
        return LossBreakdown(total=mean, bce=mean.item(), min_penalty=0.0, max_penalty=0.0)
    raise ConfigError(f"unknown model kind {kind!r}")


def _dev_sentence_prob(sent, params, encoder_config, head_config, kind) -> float:
    output = encode(sent.token_ids, sent.kinds, encoder_config, params, mode="eval")
    if kind == "softattn":
        return softattn.forward(output, params, head_config).prob.item()
    return classify_cls(output, params).prob.item()


def train_model(
    train_sentences: list[LabeledSentence],
    dev_sentences: list[LabeledSentence],
    encoder_config: EncoderConfig,
    train_config: TrainConfig,
    kind: str = "softattn",
    head_config: HeadConfig | None = None,
    initial_params: dict[str, Tensor] | None = None,
) -> TrainResult:
    """Train a sentence classifier and return the dev-best checkpoint.

    Checkpoint selection uses dev sentence F1 at threshold 0.5; ties
    keep the earlier epoch. The returned history carries per-epoch
    loss components and dev F1.

    initial_params warm-starts any matching parameters (copied, never
    mutated); missing ones, e.g. a fresh head over a pretrained
    encoder, are seeded as usual.
    """
    train_config.validate()
    encoder_config.validate()
    if kind not in ("softattn", "cls"):
        raise ConfigError(f"unknown model kind {kind!r}")
    if not train_sentences or not dev_sentences:
        raise ContractError("train and dev sets must be non-empty")
    if any(s.token_ids is None for s in train_sentences + dev_sentences):
        raise ContractError("sentences must be tokenized before training")
    if head_config is None:
        head_config = HeadConfig(beta=train_config.beta, gamma=train_config.gamma)
    head_config.validate()

    # zero-shot guard: token labels never reach the loop below
    train_sentences = strip_token_labels(train_sentences)
    dev_sentences = strip_token_labels(dev_sentences)

    root = Rng(train_config.seed)
    init_rng, shuffle_rng, dropout_rng = root.child(0), root.child(1), root.child(2)
    params = init_encoder_params(encoder_config, init_rng)
    if kind == "softattn":
        params.update(init_softattn_params(
            encoder_config.model_dim, init_rng,
            train_config.attn_layer_size, train_config.attn_hidden_size,
        ))
    else:
        params.update(init_cls_params(encoder_config, init_rng))
    if initial_params is not None:
        for name, tensor in initial_params.items():
            if name in params:
                if tensor.data.shape != params[name].data.shape:
                    raise ConfigError(
                        f"warm-start shape mismatch for {name}: "
                        f"{tensor.data.shape} vs {params[name].data.shape}"
                    )
                params[name] = parameter(tensor.data.copy())

    optimizer = AdamW(
        params,
        eps=train_config.adam_epsilon,
        weight_decay=train_config.weight_decay,
    )
    base_lr = train_config.resolved_learning_rate()
    n = len(train_sentences)
    steps_per_epoch = (n + train_config.batch_size - 1) // train_config.batch_size
    total_steps = steps_per_epoch * train_config.epochs
    warmup_steps = int(round(train_config.warmup_ratio * total_steps))

    best_params: dict[str, Tensor] | None = None
    best_f1 = -1.0
    best_epoch = -1
    history: list[EpochLog] = []
    global_step = 0
    dev_gold = [s.sentence_label for s in dev_sentences]

    for epoch in range(train_config.epochs):
        order = list(range(n))
        shuffle_rng.shuffle(order)
        sums = np.zeros(4)  # bce, min_penalty, max_penalty, total
        for start in range(0, n, train_config.batch_size):
            batch = [train_sentences[i] for i in order[start:start + train_config.batch_size]]
            optimizer.zero_grad()
            try:
                with Tape() as tape:
                    loss = _batch_loss(batch, params, encoder_config, head_config, kind, dropout_rng)
                    total_val = loss.total.item()
                    if not np.isfinite(total_val):
                        raise DivergenceError(
                            f"loss became non-finite at step {global_step} (epoch {epoch})",
                            step=global_step,
                        )
                    backward(tape, loss.total)
            except DivergenceError:
                raise
            except NumericError as exc:
                raise DivergenceError(
                    f"non-finite values at step {global_step} (epoch {epoch}): {exc}",
                    step=global_step,
                ) from exc
            clip_gradients(params, train_config.clip_norm)
            lr = linear_schedule(global_step, total_steps, warmup_steps, base_lr)
            optimizer.step(lr)
            global_step += 1
            sums += (loss.bce, loss.min_penalty, loss.max_penalty, total_val)

        dev_probs = [
            _dev_sentence_prob(s, params, encoder_config, head_config, kind)
            for s in dev_sentences
        ]
        dev_f1 = sentence_prf(dev_probs, dev_gold).f1
        history.append(EpochLog(
            epoch=epoch,
            bce=sums[0] / steps_per_epoch,
            min_penalty=sums[1] / steps_per_epoch,
            max_penalty=sums[2] / steps_per_epoch,
            total=sums[3] / steps_per_epoch,
            dev_sentence_f1=dev_f1,
            learning_rate=lr,
        ))
        log.info("epoch %d: loss %.4f dev sentence F1 %.4f", epoch, sums[3] / steps_per_epoch, dev_f1)
        if dev_f1 > best_f1:
            best_f1 = dev_f1
            best_epoch = epoch
            best_params = {name: parameter(p.data.copy()) for name, p in params.items()}

    return TrainResult(
        params=best_params,
        kind=kind,
        encoder_config=encoder_config,
        head_config=head_config if kind == "softattn" else None,
        best_epoch=best_epoch,
        best_dev_f1=best_f1,
        history=history,
    )
