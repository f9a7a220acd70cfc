"""Datasets: tokenization, subword/word alignment, TSV loading, and
synthetic cue-detection corpora for desk-scale experiments.

The on-disk sentence format is word-per-line TSV (``word<TAB>label``),
blank line between sentences, with an optional ``# sent_label=<0|1>``
header line per sentence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ParseError, ValidationError
from .tensor import Rng

log = logging.getLogger(__name__)

# token kinds, used for attention masking and score extraction
KIND_PAD = 0
KIND_CLS = 1
KIND_SEP = 2
KIND_REAL = 3

_LETTERS = "abcdefghijklmnopqrstuvwxyz"


class Vocab:
    """Piece-to-id mapping with a fixed reserved block.

    Reserved ids: PAD=0, CLS=1, SEP=2, MASK=3, UNK=4. Regular pieces
    start at RESERVED; in the vocab file, line number equals id minus
    RESERVED.
    """

    PAD = 0
    CLS = 1
    SEP = 2
    MASK = 3
    UNK = 4
    RESERVED = 5

    def __init__(self, pieces: list[str]):
        self.pieces = list(pieces)
        self._index = {p: i + self.RESERVED for i, p in enumerate(self.pieces)}
        if len(self._index) != len(self.pieces):
            raise ValidationError("duplicate pieces in vocabulary")

    def __len__(self) -> int:
        return self.RESERVED + len(self.pieces)

    def id_of(self, piece: str) -> int:
        return self._index.get(piece, self.UNK)

    def piece_of(self, token_id: int) -> str:
        if token_id < self.RESERVED:
            return ("<pad>", "<cls>", "<sep>", "<mask>", "<unk>")[token_id]
        return self.pieces[token_id - self.RESERVED]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for piece in self.pieces:
                f.write(piece + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.rstrip("\n")])


@dataclass
class LabeledSentence:
    """A sentence with its gold sentence label and optional per-word
    gold token labels (token labels are for evaluation only; the
    trainer is guarded against reading them)."""

    words: list[str]
    sentence_label: int
    token_labels: list[int] | None = None
    token_ids: np.ndarray | None = None
    alignment: list[int] | None = None
    kinds: np.ndarray | None = None
    truncated: bool = False

    def validate(self) -> None:
        if self.sentence_label not in (0, 1):
            raise ValidationError(f"sentence label must be 0/1, got {self.sentence_label}")
        if self.token_labels is not None:
            if len(self.token_labels) != len(self.words):
                raise ValidationError(
                    f"{len(self.token_labels)} token labels for {len(self.words)} words"
                )
            if any(lab not in (0, 1) for lab in self.token_labels):
                raise ValidationError("token labels must be 0/1")
            if any(self.token_labels) and self.sentence_label != 1:
                raise ValidationError("positive token label inside a negative sentence")
        if self.alignment is not None:
            if any(b < a for a, b in zip(self.alignment, self.alignment[1:])):
                raise ValidationError("alignment must be non-decreasing")
            if sorted(set(self.alignment)) != list(range(len(self.words))):
                raise ValidationError("alignment must cover every word index")

    def real_token_count(self) -> int:
        return 0 if self.alignment is None else len(self.alignment)


def word_pieces(word: str, split_mode: str, piece_len: int = 4) -> list[str]:
    """Split one word into pieces: identity in word mode, fixed-width
    character chunks (ceil(len/piece_len) pieces) in subword mode."""
    if split_mode == "word":
        return [word]
    if split_mode == "subword":
        if piece_len < 1:
            raise ConfigError(f"piece_len must be >= 1, got {piece_len}")
        return [word[i : i + piece_len] for i in range(0, len(word), piece_len)]
    raise ConfigError(f"unknown split_mode {split_mode!r}")


def tokenize(
    words: list[str],
    vocab: Vocab,
    split_mode: str = "word",
    piece_len: int = 4,
    max_seq_len: int = 128,
) -> tuple[np.ndarray, list[int], np.ndarray, bool]:
    """Map words to token ids with CLS prepended and SEP appended.

    Returns (token_ids, alignment, kinds, truncated). Alignment holds
    one word index per real token. Truncation happens at a word
    boundary: a word whose pieces do not all fit is dropped entirely
    and the flag is set.
    """
    if not words:
        raise ValidationError("cannot tokenize an empty word list")
    budget = max_seq_len - 2
    ids: list[int] = [Vocab.CLS]
    alignment: list[int] = []
    kinds: list[int] = [KIND_CLS]
    truncated = False
    used = 0
    for w_idx, word in enumerate(words):
        pieces = word_pieces(word, split_mode, piece_len)
        if used + len(pieces) > budget:
            truncated = True
            break
        for piece in pieces:
            ids.append(vocab.id_of(piece))
            alignment.append(w_idx)
            kinds.append(KIND_REAL)
        used += len(pieces)
    ids.append(Vocab.SEP)
    kinds.append(KIND_SEP)
    return np.array(ids, dtype=np.int64), alignment, np.array(kinds, dtype=np.int8), truncated


def tokenize_dataset(
    sentences: list[LabeledSentence],
    vocab: Vocab,
    split_mode: str = "word",
    piece_len: int = 4,
    max_seq_len: int = 128,
) -> list[LabeledSentence]:
    """Tokenized copies of the input sentences; truncation also trims
    words and token labels so per-sentence invariants keep holding."""
    out = []
    for sent in sentences:
        ids, alignment, kinds, truncated = tokenize(
            sent.words, vocab, split_mode, piece_len, max_seq_len
        )
        n_kept = alignment[-1] + 1 if alignment else 0
        new = replace(
            sent,
            words=sent.words[:n_kept],
            token_labels=None if sent.token_labels is None else sent.token_labels[:n_kept],
            token_ids=ids,
            alignment=alignment,
            kinds=kinds,
            truncated=truncated,
        )
        new.validate()
        out.append(new)
    return out


def words_from_tokens(token_ids: np.ndarray, alignment: list[int], vocab: Vocab) -> list[str]:
    """Reassemble words by concatenating each word's pieces."""
    real = [int(t) for t, k in zip(token_ids, _kinds_of(token_ids)) if k == KIND_REAL]
    if len(real) != len(alignment):
        raise ValidationError("alignment length does not match real token count")
    n_words = alignment[-1] + 1 if alignment else 0
    words = [""] * n_words
    for tid, w_idx in zip(real, alignment):
        words[w_idx] += vocab.piece_of(tid)
    return words


def _kinds_of(token_ids: np.ndarray) -> np.ndarray:
    kinds = np.full(len(token_ids), KIND_REAL, dtype=np.int8)
    kinds[token_ids == Vocab.PAD] = KIND_PAD
    kinds[token_ids == Vocab.CLS] = KIND_CLS
    kinds[token_ids == Vocab.SEP] = KIND_SEP
    return kinds


def pad_tokens(
    token_ids: np.ndarray, kinds: np.ndarray, target_len: int
) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad a token sequence with PAD ids up to target_len."""
    n = len(token_ids)
    if target_len < n:
        raise ValidationError(f"target_len {target_len} below sequence length {n}")
    ids = np.concatenate([token_ids, np.full(target_len - n, Vocab.PAD, dtype=np.int64)])
    kd = np.concatenate([kinds, np.full(target_len - n, KIND_PAD, dtype=np.int8)])
    return ids, kd


def build_vocab(
    sentences: list[LabeledSentence], split_mode: str = "word", piece_len: int = 4
) -> Vocab:
    """Vocabulary over all pieces in corpus order (deterministic)."""
    seen: dict[str, None] = {}
    for sent in sentences:
        for word in sent.words:
            for piece in word_pieces(word, split_mode, piece_len):
                seen.setdefault(piece, None)
    return Vocab(list(seen))


# ---------------------------------------------------------------------------
# TSV loading / writing
# ---------------------------------------------------------------------------


def load_tsv(path) -> list[LabeledSentence]:
    """Parse a word-per-line TSV file into labeled sentences.

    The sentence label is the header value when a ``# sent_label=``
    line is present, else the OR of the token labels. A positive
    header over all-zero token labels loads with a warning (sentence
    annotated, tokens not); a zero header over a positive token is an
    error.
    """
    sentences: list[LabeledSentence] = []
    words: list[str] = []
    labels: list[int] = []
    header: int | None = None
    header_line = 0

    def flush(line_no: int) -> None:
        nonlocal words, labels, header
        if not words:
            if header is not None:
                raise ParseError("sentence header without words", path, header_line)
            return
        or_label = 1 if any(labels) else 0
        if header is None:
            sent_label = or_label
        else:
            sent_label = header
            if header == 0 and or_label == 1:
                raise ParseError(
                    "sent_label=0 contradicts a positive token label", path, line_no
                )
            if header == 1 and or_label == 0:
                log.warning(
                    "%s: sentence ending at line %d has sent_label=1 but no "
                    "positive token labels",
                    path,
                    line_no,
                )
        sentences.append(LabeledSentence(words, sent_label, labels))
        words, labels, header = [], [], None

    with open(path, encoding="utf-8") as f:
        line_no = 0
        for raw in f:
            line_no += 1
            line = raw.rstrip("\n")
            if not line.strip():
                flush(line_no)
                continue
            if line.startswith("#"):
                directive = line[1:].strip()
                if directive.startswith("sent_label="):
                    value = directive[len("sent_label="):]
                    if value not in ("0", "1"):
                        raise ParseError(f"bad sent_label value {value!r}", path, line_no)
                    header = int(value)
                    header_line = line_no
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ParseError(f"expected 2 tab-separated columns, got {len(cols)}", path, line_no)
            word, label = cols
            if not word:
                raise ParseError("empty word", path, line_no)
            if label not in ("0", "1"):
                raise ParseError(f"token label must be 0 or 1, got {label!r}", path, line_no)
            words.append(word)
            labels.append(int(label))
        flush(line_no + 1)
    if not sentences:
        raise ParseError("no sentences in file", path)
    for sent in sentences:
        sent.validate()
    return sentences


def write_tsv(path, sentences: list[LabeledSentence]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, sent in enumerate(sentences):
            if i:
                f.write("\n")
            f.write(f"# sent_label={sent.sentence_label}\n")
            labels = sent.token_labels or [0] * len(sent.words)
            for word, label in zip(sent.words, labels):
                f.write(f"{word}\t{label}\n")


def dataset_stats(sentences: list[LabeledSentence]) -> dict:
    """Corpus summary suitable for a JSON dump."""
    lengths = [len(s.words) for s in sentences]
    has_labels = [s for s in sentences if s.token_labels is not None]
    return {
        "n_sentences": len(sentences),
        "n_positive_sentences": sum(s.sentence_label for s in sentences),
        "n_words": int(sum(lengths)),
        "n_positive_tokens": int(sum(sum(s.token_labels) for s in has_labels)),
        "token_labels_present": len(has_labels) == len(sentences),
        "min_len": int(min(lengths)) if lengths else 0,
        "max_len": int(max(lengths)) if lengths else 0,
        "mean_len": float(np.mean(lengths)) if lengths else 0.0,
        "n_distinct_words": len({w for s in sentences for w in s.words}),
    }


def split_dev(
    sentences: list[LabeledSentence], fraction: float = 0.1, seed: int = 0
) -> tuple[list[LabeledSentence], list[LabeledSentence]]:
    """Hold out a seeded random fraction as a development set."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"dev fraction must be in (0, 1), got {fraction}")
    order = list(range(len(sentences)))
    Rng(seed).shuffle(order)
    n_dev = max(1, int(round(len(sentences) * fraction)))
    dev_idx = set(order[:n_dev])
    train = [s for i, s in enumerate(sentences) if i not in dev_idx]
    dev = [s for i, s in enumerate(sentences) if i in dev_idx]
    return train, dev


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    """Cue-detection corpus: a sentence is positive iff it contains a
    cue (or, in the distributed variant, both halves of a cue pair)."""

    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    vocab_size: int = 200
    cue_lexicon_size: int = 10
    positive_rate: float = 0.5
    min_len: int = 5
    max_len: int = 15
    distributed_cues: bool = False
    lone_cue_rate: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ConfigError("all split sizes must be >= 1")
        if self.cue_lexicon_size >= self.vocab_size:
            raise ConfigError("cue lexicon must be smaller than the vocabulary")
        if not 0.0 <= self.positive_rate <= 1.0:
            raise ConfigError(f"positive_rate must be in [0, 1], got {self.positive_rate}")
        if self.positive_rate > 0 and self.cue_lexicon_size < 1:
            raise ConfigError("positive sentences need a non-empty cue lexicon")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError(f"bad length range [{self.min_len}, {self.max_len}]")
        if self.distributed_cues:
            if self.cue_lexicon_size < 2 or self.cue_lexicon_size % 2:
                raise ConfigError("distributed cues need an even lexicon of >= 2 words")
            if self.positive_rate > 0 and self.min_len < 2:
                raise ConfigError("distributed cues need sentences of >= 2 words")


@dataclass
class SyntheticData:
    train: list[LabeledSentence]
    dev: list[LabeledSentence]
    test: list[LabeledSentence]
    cue_words: list[str]
    filler_words: list[str] = field(repr=False, default_factory=list)


def _random_word(rng: Rng) -> str:
    length = 3 + rng.randbelow(6)
    return "".join(_LETTERS[rng.randbelow(26)] for _ in range(length))


def generate_synthetic(config: SynthConfig) -> SyntheticData:
    """Deterministic synthetic corpus; splits are mutually disjoint at
    the sentence level (generation retries on collision)."""
    config.validate()
    root = Rng(config.seed)
    word_rng = root.child(0)
    sent_rng = root.child(1)

    words: list[str] = []
    seen_words: set[str] = set()
    while len(words) < config.vocab_size:
        w = _random_word(word_rng)
        if w not in seen_words:
            seen_words.add(w)
            words.append(w)
    cues = words[: config.cue_lexicon_size]
    fillers = words[config.cue_lexicon_size:]
    pairs = [(cues[i], cues[i + 1]) for i in range(0, len(cues) - 1, 2)]

    seen_sentences: set[tuple[str, ...]] = set()

    def draw() -> LabeledSentence:
        for _ in range(1000):
            length = config.min_len + sent_rng.randbelow(config.max_len - config.min_len + 1)
            positive = sent_rng.uniform() < config.positive_rate
            sent_words = [fillers[sent_rng.randbelow(len(fillers))] for _ in range(length)]
            labels = [0] * length
            if config.distributed_cues:
                if positive:
                    half_a, half_b = pairs[sent_rng.randbelow(len(pairs))]
                    pos_a, pos_b = sent_rng.subset(length, 2)
                    sent_words[pos_a], sent_words[pos_b] = half_a, half_b
                    labels[pos_a] = labels[pos_b] = 1
                elif sent_rng.uniform() < config.lone_cue_rate:
                    sent_words[sent_rng.randbelow(length)] = cues[sent_rng.randbelow(len(cues))]
            elif positive:
                n_cues = 1 + (1 if length >= 2 and sent_rng.uniform() < 0.3 else 0)
                for pos in sent_rng.subset(length, n_cues):
                    sent_words[pos] = cues[sent_rng.randbelow(len(cues))]
                    labels[pos] = 1
            key = tuple(sent_words)
            if key in seen_sentences:
                continue
            seen_sentences.add(key)
            return LabeledSentence(sent_words, 1 if positive else 0, labels)
        raise ConfigError("could not draw a fresh sentence; corpus space too small")

    train = [draw() for _ in range(config.n_train)]
    dev = [draw() for _ in range(config.n_dev)]
    test = [draw() for _ in range(config.n_test)]
    for sent in train + dev + test:
        sent.validate()
    return SyntheticData(train, dev, test, cues, fillers)
