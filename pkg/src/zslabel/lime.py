"""Perturbation-based word importance: mask random word subsets, query
the sentence classifier, fit a kernel-weighted ridge surrogate.

The classifier under explanation is any black box mapping a token id
sequence to a probability. Kernel, ridge strength and the mask-count
distribution are implementation choices exposed on LimeConfig, not
givens of the method.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import KIND_REAL, LabeledSentence, Vocab
from .errors import (
    ConditioningError,
    ConfigError,
    ContractError,
    ValidationError,
)
from .scores import ImportanceScores
from .tensor import Rng

log = logging.getLogger(__name__)

# published full-scale operating points for this method, by corpus
# family (dev-tuned; desk-scale runs tune their own)
REFERENCE_THRESHOLDS = {
    "conll2010": 0.200,
    "fce": 0.001,
    "bea2019": 0.010,
}


@dataclass
class LimeConfig:
    n_samples: int = 5000
    kernel_width: float = 0.25
    ridge: float = 1.0
    mask_mode: str = "mask"  # "mask" replaces subwords with MASK; "delete" drops them
    seed: int = 0

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.kernel_width <= 0:
            raise ConfigError(f"kernel_width must be > 0, got {self.kernel_width}")
        if self.ridge < 0:
            raise ConfigError(f"ridge must be >= 0, got {self.ridge}")
        if self.mask_mode not in ("mask", "delete"):
            raise ConfigError(f"unknown mask_mode {self.mask_mode!r}")


@dataclass
class PerturbationSample:
    presence: np.ndarray          # bool per word; False = masked out
    weight: float                 # kernel weight, > 0
    prob: float | None = None     # classifier probability, filled later

    def __post_init__(self):
        self.presence = np.asarray(self.presence, dtype=bool)
        if self.weight <= 0:
            raise ValidationError(f"kernel weight must be > 0, got {self.weight}")


def kernel_weight(presence: np.ndarray, width: float) -> float:
    """exp(-D^2 / width^2), D = cosine distance to the all-ones vector.

    For a binary vector with m of n words kept this is 1 - sqrt(m/n);
    the all-masked vector gets distance 1.
    """
    presence = np.asarray(presence, dtype=bool)
    m, n = int(presence.sum()), presence.size
    distance = 1.0 if m == 0 else 1.0 - np.sqrt(m / n)
    return float(np.exp(-(distance**2) / width**2))


def generate_samples(
    n_words: int, n_samples: int, rng: Rng, kernel_width: float = 0.25
) -> list[PerturbationSample]:
    """Perturbation set: the unperturbed sample first, then n_samples-1
    random masks (k masked words, k uniform in 1..n_words-1). A
    one-word sentence only admits the unperturbed and fully-masked
    samples."""
    if n_words < 1:
        raise ValidationError("need at least one word")
    if n_samples < 1:
        raise ValidationError("need at least one sample")
    samples = [
        PerturbationSample(np.ones(n_words, dtype=bool), kernel_weight(np.ones(n_words, dtype=bool), kernel_width))
    ]
    for _ in range(n_samples - 1):
        presence = np.ones(n_words, dtype=bool)
        k = 1 if n_words == 1 else 1 + rng.randbelow(n_words - 1)
        presence[rng.subset(n_words, k)] = False
        samples.append(PerturbationSample(presence, kernel_weight(presence, kernel_width)))
    return samples


def perturbed_token_ids(
    sentence: LabeledSentence, presence: np.ndarray, mask_mode: str = "mask"
) -> tuple[np.ndarray, np.ndarray]:
    """Token ids and kinds with every subword of each absent word
    replaced by MASK (or deleted)."""
    if sentence.token_ids is None or sentence.alignment is None:
        raise ValidationError("sentence is not tokenized")
    ids = sentence.token_ids.copy()
    kinds = sentence.kinds.copy()
    real_positions = np.flatnonzero(sentence.kinds == KIND_REAL)
    drop = []
    for pos, word_idx in zip(real_positions, sentence.alignment):
        if not presence[word_idx]:
            if mask_mode == "mask":
                ids[pos] = Vocab.MASK
            else:
                drop.append(pos)
    if drop:
        keep = np.setdiff1d(np.arange(len(ids)), np.array(drop))
        ids, kinds = ids[keep], kinds[keep]
    return ids, kinds


def fit_local_model(
    samples: list[PerturbationSample], ridge: float = 1.0
) -> tuple[np.ndarray, float]:
    """Kernel-weighted ridge regression of probabilities on presence.

    Features are standardized for the penalty and mapped back, so the
    returned (weights, intercept) live on the raw 0/1 presence scale.
    A singular system escalates the ridge strength tenfold up to three
    times before failing.
    """
    if any(s.prob is None for s in samples):
        raise ContractError("all samples need classifier probabilities before fitting")
    x = np.stack([s.presence.astype(np.float64) for s in samples])
    y = np.array([s.prob for s in samples])
    w = np.array([s.weight for s in samples])
    if len({tuple(row) for row in x.astype(int)}) < 2:
        raise ValidationError("need at least 2 distinct presence vectors")

    wsum = w.sum()
    mean = (w[:, None] * x).sum(axis=0) / wsum
    var = (w[:, None] * (x - mean) ** 2).sum(axis=0) / wsum
    std = np.sqrt(var)
    std[std == 0.0] = 1.0
    xs = (x - mean) / std

    n_features = x.shape[1]
    design = np.hstack([np.ones((len(samples), 1)), xs])
    gram = design.T @ (w[:, None] * design)
    rhs = design.T @ (w * y)
    penalty = np.ones(n_features + 1)
    penalty[0] = 0.0  # intercept unpenalized

    strength = ridge
    for attempt in range(4):
        try:
            sol = np.linalg.solve(gram + strength * np.diag(penalty), rhs)
        except np.linalg.LinAlgError:
            sol = None
        if sol is not None and np.isfinite(sol).all():
            coef_std, intercept_std = sol[1:], sol[0]
            weights = coef_std / std
            intercept = intercept_std - float((coef_std * mean / std).sum())
            return weights, float(intercept)
        if attempt < 3:
            strength = strength * 10.0 if strength > 0 else 1e-8
            log.warning("singular surrogate system; ridge escalated to %g", strength)
    raise ConditioningError("surrogate regression singular after ridge escalation")


def lime_scores(
    sentence: LabeledSentence,
    classifier: Callable[[np.ndarray, np.ndarray], float],
    config: LimeConfig,
    threshold: float,
    rng: Rng | None = None,
) -> ImportanceScores:
    """End-to-end word importance for one sentence.

    classifier maps (token_ids, kinds) to a probability; determinism
    follows from the config seed (or the explicitly passed rng, when a
    caller runs many sentences off one seed).
    """
    config.validate()
    if rng is None:
        rng = Rng(config.seed)
    samples = generate_samples(len(sentence.words), config.n_samples, rng, config.kernel_width)
    for sample in samples:
        ids, kinds = perturbed_token_ids(sentence, sample.presence, config.mask_mode)
        sample.prob = classifier(ids, kinds)
    weights, _ = fit_local_model(samples, config.ridge)
    unperturbed = samples[0].prob
    return ImportanceScores(
        words=list(sentence.words),
        scores=weights,
        method="lime",
        threshold=threshold,
        sentence_prob=unperturbed,
    )
