"""Assembled sentence model: encoder plus head parameters, the vocab
they were trained with, and the scoring entry points behind each
token-labeling method.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import headscore, lime, softattn
from .data import LabeledSentence, Vocab
from .encoder import EncoderConfig, EncoderOutput, classify_cls, encode
from .errors import ContractError
from .evaluate import random_baseline
from .headscore import HeadId, ThresholdResult, select_best_head, tune_threshold
from .scores import ScoreFile
from .softattn import HeadConfig
from .tensor import Rng, Tensor, load_params, save_params
from .train import TrainResult

log = logging.getLogger(__name__)


@dataclass
class SentenceModel:
    kind: str  # "softattn" or "cls"
    encoder_config: EncoderConfig
    head_config: HeadConfig | None
    vocab: Vocab
    params: dict[str, Tensor]
    split_mode: str = "word"     # tokenizer settings travel with the model
    piece_len: int = 4

    @classmethod
    def from_train_result(
        cls, result: TrainResult, vocab: Vocab,
        split_mode: str = "word", piece_len: int = 4,
    ) -> "SentenceModel":
        return cls(
            kind=result.kind,
            encoder_config=result.encoder_config,
            head_config=result.head_config,
            vocab=vocab,
            params=result.params,
            split_mode=split_mode,
            piece_len=piece_len,
        )

    def encode_sentence(self, sent: LabeledSentence, mode: str = "eval", rng=None) -> EncoderOutput:
        if sent.token_ids is None:
            raise ContractError("sentence is not tokenized")
        return encode(sent.token_ids, sent.kinds, self.encoder_config, self.params, mode, rng)

    def prob_from_tokens(self, token_ids: np.ndarray, kinds: np.ndarray) -> float:
        """Black-box sentence probability used by LIME."""
        output = encode(token_ids, kinds, self.encoder_config, self.params, mode="eval")
        if self.kind == "softattn":
            return softattn.forward(output, self.params, self.head_config).prob.item()
        return classify_cls(output, self.params).prob.item()

    def sentence_prob(self, sent: LabeledSentence) -> float:
        return self.prob_from_tokens(sent.token_ids, sent.kinds)

    def softattn_forward(self, sent: LabeledSentence, beta: float | None = None):
        if self.kind != "softattn":
            raise ContractError(f"checkpoint kind {self.kind!r} has no soft attention head")
        config = self.head_config if beta is None else replace(self.head_config, beta=beta)
        return softattn.forward(self.encode_sentence(sent), self.params, config)

    def save(self, path) -> None:
        meta = {
            "kind": self.kind,
            "encoder_config": asdict(self.encoder_config),
            "head_config": None if self.head_config is None else asdict(self.head_config),
            "vocab_pieces": self.vocab.pieces,
            "tokenizer": {"split_mode": self.split_mode, "piece_len": self.piece_len},
        }
        save_params(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "SentenceModel":
        params, meta = load_params(path)
        head = meta["head_config"]
        return cls(
            kind=meta["kind"],
            encoder_config=EncoderConfig(**meta["encoder_config"]),
            head_config=None if head is None else HeadConfig(**head),
            vocab=Vocab(meta["vocab_pieces"]),
            params=params,
            split_mode=meta["tokenizer"]["split_mode"],
            piece_len=meta["tokenizer"]["piece_len"],
        )

    def tokenize(self, sentences):
        """Tokenize raw sentences exactly as at training time."""
        from .data import tokenize_dataset

        return tokenize_dataset(
            sentences, self.vocab, self.split_mode, self.piece_len,
            self.encoder_config.max_seq_len,
        )


# ---------------------------------------------------------------------------
# scoring methods
# ---------------------------------------------------------------------------


def score_with_gates(
    model: SentenceModel,
    sentences: list[LabeledSentence],
    method: str = "weighted-soft",
    beta: float | None = None,
    aggregation: str = "max",
) -> ScoreFile:
    """Token scores straight from the soft attention gates.

    method "soft" pins beta to 1 (plain sum normalization); the gates
    themselves do not depend on beta, only the sentence probability
    does. The natural threshold 0.5 needs no tuning.
    """
    if method == "soft":
        beta = 1.0
    elif beta is None:
        beta = model.head_config.beta
    scored = [
        softattn.token_scores(
            model.softattn_forward(sent, beta=beta), sent,
            method=method, aggregation=aggregation,
        )
        for sent in sentences
    ]
    return ScoreFile(scored, method=method, threshold=softattn.NATURAL_THRESHOLD,
                     flags={"beta": repr(float(beta))})


def score_with_head(
    model: SentenceModel,
    sentences: list[LabeledSentence],
    dev_sentences: list[LabeledSentence],
    query_positions: str = "cls+real",
    aggregation: str = "max",
) -> tuple[ScoreFile, HeadId, ThresholdResult]:
    """Attention-head scoring with dev-set head selection and dev-F1
    threshold tuning (both consult gold token labels; disclosed in the
    output flags)."""
    head = select_best_head(
        dev_sentences, model.encode_sentence,
        query_positions=query_positions, aggregation=aggregation,
    )
    dev_scored = [
        headscore.head_token_scores(
            model.encode_sentence(sent), head, sent,
            query_positions=query_positions, aggregation=aggregation,
        )
        for sent in dev_sentences
    ]
    tuned = tune_threshold(
        [s.scores for s in dev_scored], [s.token_labels for s in dev_sentences]
    )
    scored = [
        headscore.head_token_scores(
            model.encode_sentence(sent), head, sent,
            threshold=tuned.threshold,
            query_positions=query_positions, aggregation=aggregation,
            sentence_prob=model.sentence_prob(sent),
        )
        for sent in sentences
    ]
    flags = {
        "head": f"{head.layer},{head.head}",
        "token_labels_used": "head_selection,threshold_tuning",
    }
    return ScoreFile(scored, method="head", threshold=tuned.threshold, flags=flags), head, tuned


def score_with_lime(
    model: SentenceModel,
    sentences: list[LabeledSentence],
    dev_sentences: list[LabeledSentence],
    config: lime.LimeConfig,
) -> tuple[ScoreFile, ThresholdResult]:
    """LIME scoring with the decision threshold tuned for dev token F1
    (consults gold token labels; disclosed in the output flags)."""
    def run(sent_list, threshold, with_probs):
        out = []
        for i, sent in enumerate(sent_list):
            rng = Rng(config.seed).child(i)
            scored = lime.lime_scores(sent, model.prob_from_tokens, config, threshold, rng=rng)
            if not with_probs:
                scored.sentence_prob = None
            out.append(scored)
        return out

    dev_scored = run(dev_sentences, 0.0, with_probs=False)
    tuned = tune_threshold(
        [s.scores for s in dev_scored], [s.token_labels for s in dev_sentences]
    )
    scored = run(sentences, tuned.threshold, with_probs=True)
    flags = {"token_labels_used": "threshold_tuning", "n_samples": str(config.n_samples)}
    return ScoreFile(scored, method="lime", threshold=tuned.threshold, flags=flags), tuned


def score_random(sentences: list[LabeledSentence], seed: int) -> ScoreFile:
    scored = random_baseline(sentences, seed)
    return ScoreFile(scored, method="random", threshold=0.5, flags={"seed": str(seed)})
