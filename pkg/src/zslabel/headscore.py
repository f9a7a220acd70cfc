"""Zero-shot token scoring from a single self-attention head.

A token's score under head (layer, head) is the mean attention it
receives across query positions. The best head is picked by token-level
MAP on a development set, and the decision threshold is tuned for dev
token F1; both steps consult gold token labels and are logged as such.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .data import KIND_CLS, KIND_PAD, KIND_REAL, LabeledSentence
from .encoder import EncoderOutput
from .errors import ConfigError, DimensionError, ValidationError
from .evaluate import token_map, token_prf
from .scores import ImportanceScores
from .softattn import aggregate_word_scores

log = logging.getLogger(__name__)


class HeadId(NamedTuple):
    layer: int
    head: int


# published full-scale operating points for this method, by corpus
# family (dev-tuned; desk-scale runs tune their own)
REFERENCE_THRESHOLDS = {
    "conll2010": 0.320,
    "fce": 0.080,
    "bea2019": 0.080,
}


def column_mean_scores(matrix: np.ndarray, query_rows=None) -> np.ndarray:
    """Mean attention received per position: column means of an
    attention matrix, optionally over a subset of query rows."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionError(f"attention matrix must be square, got {matrix.shape}")
    if query_rows is None:
        return matrix.mean(axis=0)
    rows = np.asarray(query_rows)
    if rows.size == 0:
        raise ValidationError("need at least one query row")
    return matrix[rows].mean(axis=0)


def _query_rows(kinds: np.ndarray, query_positions: str) -> np.ndarray:
    if query_positions == "cls+real":
        return np.flatnonzero((kinds == KIND_REAL) | (kinds == KIND_CLS))
    if query_positions == "real":
        return np.flatnonzero(kinds == KIND_REAL)
    if query_positions == "all_nonpad":
        return np.flatnonzero(kinds != KIND_PAD)
    raise ConfigError(f"unknown query_positions {query_positions!r}")


def head_token_scores(
    output: EncoderOutput,
    head: HeadId,
    sentence: LabeledSentence,
    threshold: float = 0.5,
    query_positions: str = "cls+real",
    aggregation: str = "max",
    sentence_prob: float | None = None,
) -> ImportanceScores:
    """Word scores from one head of one encoded sentence."""
    n_layers, n_heads = output.attention_maps.shape[:2]
    if not (0 <= head.layer < n_layers and 0 <= head.head < n_heads):
        raise IndexError(
            f"head {tuple(head)} out of range for {n_layers} layers x {n_heads} heads"
        )
    matrix = output.attention_maps[head.layer, head.head]
    token_vals = column_mean_scores(matrix, _query_rows(output.token_kinds, query_positions))
    real = output.real_indices()
    if sentence.alignment is None:
        raise ValidationError("sentence has no token alignment")
    word_scores = aggregate_word_scores(token_vals[real], sentence.alignment, aggregation)
    return ImportanceScores(
        words=list(sentence.words),
        scores=word_scores,
        method="head",
        threshold=threshold,
        sentence_prob=sentence_prob,
    )


def select_best_head(
    dev_sentences: list[LabeledSentence],
    encode_fn: Callable[[LabeledSentence], EncoderOutput],
    query_positions: str = "cls+real",
    aggregation: str = "max",
) -> HeadId:
    """The (layer, head) with the highest dev token MAP; exact ties go
    to the lower layer, then the lower head."""
    if not dev_sentences:
        raise ValidationError("empty development set")
    if any(s.token_labels is None for s in dev_sentences):
        raise ValidationError("head selection needs gold token labels on the dev set")
    log.info("disclosure: gold token labels consulted for attention-head selection")

    per_head_scores: dict[HeadId, list[np.ndarray]] = {}
    gold = [s.token_labels for s in dev_sentences]
    n_layers = n_heads = None
    for sent in dev_sentences:
        output = encode_fn(sent)
        n_layers, n_heads = output.attention_maps.shape[:2]
        rows = _query_rows(output.token_kinds, query_positions)
        real = output.real_indices()
        for layer in range(n_layers):
            for head in range(n_heads):
                token_vals = column_mean_scores(output.attention_maps[layer, head], rows)
                per_head_scores.setdefault(HeadId(layer, head), []).append(
                    aggregate_word_scores(token_vals[real], sent.alignment, aggregation)
                )
    best: HeadId | None = None
    best_map = -1.0
    for layer in range(n_layers):
        for head in range(n_heads):
            candidate = HeadId(layer, head)
            score = token_map(per_head_scores[candidate], gold)
            if score > best_map:
                best, best_map = candidate, score
    return best


@dataclass
class ThresholdResult:
    threshold: float
    best_f1: float
    no_positive_gold: bool = False


def tune_threshold(dev_scores, gold_token_labels) -> ThresholdResult:
    """Threshold maximizing dev token F1 over a candidate grid.

    The grid is the midpoints between consecutive sorted unique scores,
    plus one candidate below the minimum so the all-positive decision
    stays reachable. Ties in F1 resolve to the smallest threshold. With
    no positive gold tokens the threshold is +inf (never predict
    positive) and the result is flagged.
    """
    if len(dev_scores) == 0:
        raise ValidationError("cannot tune a threshold on an empty dev set")
    flat_gold = np.concatenate([np.asarray(g, dtype=np.int64) for g in gold_token_labels])
    if not (flat_gold == 1).any():
        log.warning("no positive dev tokens; threshold set to +inf")
        return ThresholdResult(float("inf"), 0.0, no_positive_gold=True)
    flat = np.concatenate([np.asarray(s, dtype=np.float64) for s in dev_scores])
    if flat.size != flat_gold.size:
        raise ValidationError(f"{flat.size} scores vs {flat_gold.size} token labels")
    uniq = np.unique(flat)
    candidates = [float(uniq[0]) - 0.5]
    candidates.extend(((uniq[:-1] + uniq[1:]) / 2.0).tolist())
    log.info("disclosure: gold token labels consulted for threshold tuning")
    best_thr, best_f1 = candidates[0], -1.0
    for thr in candidates:
        f1 = token_prf(dev_scores, gold_token_labels, thr).f1
        if f1 > best_f1:
            best_thr, best_f1 = thr, f1
    return ThresholdResult(best_thr, best_f1)
