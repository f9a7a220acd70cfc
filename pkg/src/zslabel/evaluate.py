"""Metrics: sentence and token precision/recall/F1, token-ranking mean
average precision, the uniform random baseline, multi-seed aggregation
and a paired t-test.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .data import LabeledSentence
from .errors import (
    AlignmentError,
    PairingError,
    UndefinedMetricError,
    ValidationError,
)
from .scores import ImportanceScores
from .tensor import Rng


@dataclass
class PRF:
    precision: float
    recall: float
    f1: float
    tp: float
    fp: float
    fn: float

    @classmethod
    def from_counts(cls, tp: float, fp: float, fn: float) -> "PRF":
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = f1_score(precision, recall)
        return cls(precision, recall, f1, tp, fp, fn)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def token_prf(scores_per_sentence, gold_per_sentence, threshold: float) -> PRF:
    """Micro-averaged token metrics; positive iff score > threshold."""
    if len(scores_per_sentence) != len(gold_per_sentence):
        raise AlignmentError(
            f"{len(scores_per_sentence)} scored vs {len(gold_per_sentence)} gold sentences"
        )
    tp = fp = fn = 0
    for idx, (scores, gold) in enumerate(zip(scores_per_sentence, gold_per_sentence)):
        scores = np.asarray(scores, dtype=np.float64)
        gold = np.asarray(gold, dtype=np.int64)
        if scores.shape != gold.shape:
            raise AlignmentError(
                f"sentence {idx}: {scores.shape[0]} scores vs {gold.shape[0]} gold labels"
            )
        pred = scores > threshold
        tp += int(np.sum(pred & (gold == 1)))
        fp += int(np.sum(pred & (gold == 0)))
        fn += int(np.sum(~pred & (gold == 1)))
    return PRF.from_counts(tp, fp, fn)


def sentence_prf(probs, gold, threshold: float = 0.5) -> PRF:
    probs = np.asarray(probs, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.int64)
    if probs.size == 0:
        raise ValidationError("cannot compute sentence metrics on an empty corpus")
    if probs.shape != gold.shape:
        raise AlignmentError(f"{probs.shape[0]} probs vs {gold.shape[0]} gold labels")
    pred = probs > threshold
    tp = int(np.sum(pred & (gold == 1)))
    fp = int(np.sum(pred & (gold == 0)))
    fn = int(np.sum(~pred & (gold == 1)))
    return PRF.from_counts(tp, fp, fn)


def average_precision(scores, gold) -> float:
    """AP of the ranking induced by descending scores (ties broken by
    ascending position): mean over gold-positive ranks k of
    positives-within-top-k / k."""
    scores = np.asarray(scores, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.int64)
    if scores.shape != gold.shape:
        raise AlignmentError(f"{scores.shape[0]} scores vs {gold.shape[0]} gold labels")
    if not (gold == 1).any():
        raise UndefinedMetricError("average precision needs a positive token")
    order = np.lexsort((np.arange(len(scores)), -scores))
    hits = gold[order] == 1
    precision_at = np.cumsum(hits) / np.arange(1, len(scores) + 1)
    return float(precision_at[hits].mean())


def token_map(scores_per_sentence, gold_per_sentence) -> float:
    """Mean AP over sentences that contain at least one positive token."""
    if len(scores_per_sentence) != len(gold_per_sentence):
        raise AlignmentError(
            f"{len(scores_per_sentence)} scored vs {len(gold_per_sentence)} gold sentences"
        )
    aps = [
        average_precision(scores, gold)
        for scores, gold in zip(scores_per_sentence, gold_per_sentence)
        if any(np.asarray(gold) == 1)
    ]
    if not aps:
        raise UndefinedMetricError("no sentence has a positive token")
    return float(np.mean(aps))


def global_token_map(scores_per_sentence, gold_per_sentence) -> float:
    """Alternative MAP over one corpus-wide ranking (ties broken by
    sentence index, then position)."""
    if len(scores_per_sentence) != len(gold_per_sentence):
        raise AlignmentError(
            f"{len(scores_per_sentence)} scored vs {len(gold_per_sentence)} gold sentences"
        )
    all_scores, all_gold, sent_idx, pos_idx = [], [], [], []
    for i, (scores, gold) in enumerate(zip(scores_per_sentence, gold_per_sentence)):
        for j, (s, g) in enumerate(zip(np.asarray(scores), np.asarray(gold))):
            all_scores.append(float(s))
            all_gold.append(int(g))
            sent_idx.append(i)
            pos_idx.append(j)
    scores = np.array(all_scores)
    gold = np.array(all_gold)
    if not (gold == 1).any():
        raise UndefinedMetricError("no positive token in corpus")
    order = np.lexsort((pos_idx, sent_idx, -scores))
    hits = gold[order] == 1
    precision_at = np.cumsum(hits) / np.arange(1, len(scores) + 1)
    return float(precision_at[hits].mean())


def random_baseline(sentences: list[LabeledSentence], seed: int) -> list[ImportanceScores]:
    """i.i.d. uniform [0, 1) score per word at the natural 0.5 threshold."""
    rng = Rng(seed)
    return [
        ImportanceScores(
            words=list(sent.words),
            scores=rng.uniform(len(sent.words)),
            method="random",
            threshold=0.5,
        )
        for sent in sentences
    ]


@dataclass
class TTestResult:
    statistic: float
    pvalue: float
    dof: int
    zero_variance: bool = False


def paired_t_test(a, b) -> TTestResult:
    """Two-tailed paired t-test on per-seed metric pairs.

    Identical samples give p = 1 with the zero_variance flag; nonzero
    constant differences give p = 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise PairingError(f"cannot pair {a.shape[0]} with {b.shape[0]} values")
    n = a.size
    if n < 2:
        raise ValidationError("paired t-test needs at least 2 pairs")
    diffs = a - b
    dof = n - 1
    sd = float(diffs.std(ddof=1))
    mean = float(diffs.mean())
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, dof, zero_variance=True)
        return TTestResult(math.copysign(math.inf, mean), 0.0, dof, zero_variance=True)
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * float(stats.t.sf(abs(t), dof))
    return TTestResult(t, p, dof)


@dataclass
class MetricsReport:
    method: str
    threshold: float
    token: PRF
    token_map: float
    sentence: PRF | None = None
    seed: int | None = None
    n_seeds: int = 1

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def compute_report(
    scored: list[ImportanceScores],
    gold: list[LabeledSentence],
    threshold: float | None = None,
    seed: int | None = None,
) -> MetricsReport:
    """Full report for one scored corpus against gold sentences."""
    if len(scored) != len(gold):
        raise AlignmentError(f"{len(scored)} scored vs {len(gold)} gold sentences")
    for i, (s, g) in enumerate(zip(scored, gold)):
        if g.token_labels is None:
            raise ValidationError(f"gold sentence {i} lacks token labels")
        if len(s.words) != len(g.words):
            raise AlignmentError(
                f"sentence {i}: scored {len(s.words)} words, gold has {len(g.words)}"
            )
    method = scored[0].method
    thr = scored[0].threshold if threshold is None else threshold
    score_arrays = [s.scores for s in scored]
    gold_arrays = [g.token_labels for g in gold]
    token = token_prf(score_arrays, gold_arrays, thr)
    tmap = token_map(score_arrays, gold_arrays)
    sentence = None
    if all(s.sentence_prob is not None for s in scored):
        sentence = sentence_prf(
            [s.sentence_prob for s in scored], [g.sentence_label for g in gold]
        )
    return MetricsReport(
        method=method, threshold=thr, token=token, token_map=tmap,
        sentence=sentence, seed=seed,
    )


def _mean_prf(values: list[PRF | None]) -> PRF | None:
    present = [v for v in values if v is not None]
    if len(present) != len(values) or not present:
        return None
    return PRF(
        precision=float(np.mean([v.precision for v in present])),
        recall=float(np.mean([v.recall for v in present])),
        f1=float(np.mean([v.f1 for v in present])),
        tp=float(np.mean([v.tp for v in present])),
        fp=float(np.mean([v.fp for v in present])),
        fn=float(np.mean([v.fn for v in present])),
    )


def aggregate_seeds(reports: list[MetricsReport]) -> MetricsReport:
    """Arithmetic mean over per-seed reports of one method."""
    if not reports:
        raise ValidationError("no reports to aggregate")
    methods = {r.method for r in reports}
    if len(methods) > 1:
        raise PairingError(f"cannot aggregate across methods {sorted(methods)}")
    return MetricsReport(
        method=reports[0].method,
        threshold=float(np.mean([r.threshold for r in reports])),
        token=_mean_prf([r.token for r in reports]),
        token_map=float(np.mean([r.token_map for r in reports])),
        sentence=_mean_prf([r.sentence for r in reports]),
        seed=None,
        n_seeds=sum(r.n_seeds for r in reports),
    )


def render_table(reports: list[MetricsReport]) -> str:
    """Fixed-width comparison table: Sent F1, F1, MAP per method."""
    header = f"{'Method':<24} {'Sent F1':>8} {'F1':>8} {'MAP':>8}"
    lines = [header, "-" * len(header)]
    for r in reports:
        sent = f"{r.sentence.f1:8.4f}" if r.sentence is not None else f"{'-':>8}"
        lines.append(f"{r.method:<24} {sent} {r.token.f1:8.4f} {r.token_map:8.4f}")
    return "\n".join(lines)
