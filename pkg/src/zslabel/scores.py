"""Per-word importance scores and their line-oriented text format.

One sentence per block: ``word<TAB>score<TAB>predicted_label`` lines,
blank-line separated. ``#`` lines carry metadata: file-level method /
threshold / disclosure flags at the top, optional ``# sent_prob=`` per
sentence (needed downstream for sentence-level metrics).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError


@dataclass
class ImportanceScores:
    """Word-level scores for one sentence under one scoring method."""

    words: list[str]
    scores: np.ndarray
    method: str
    threshold: float
    sentence_prob: float | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (len(self.words),):
            raise ValidationError(
                f"{len(self.words)} words but scores shape {self.scores.shape}"
            )

    def predictions(self) -> np.ndarray:
        """Binary word labels: positive iff score > threshold."""
        return (self.scores > self.threshold).astype(np.int64)


@dataclass
class ScoreFile:
    """A scored corpus: per-sentence blocks plus file-level metadata."""

    sentences: list[ImportanceScores]
    method: str
    threshold: float
    flags: dict[str, str] = field(default_factory=dict)


def _format_float(x: float) -> str:
    return "inf" if math.isinf(x) else repr(float(x))


def write_scores(path_or_file, score_file: ScoreFile) -> None:
    f = path_or_file
    owned = not hasattr(f, "write")
    if owned:
        f = open(f, "w", encoding="utf-8")
    try:
        f.write(f"# method={score_file.method}\n")
        f.write(f"# threshold={_format_float(score_file.threshold)}\n")
        for key, value in score_file.flags.items():
            f.write(f"# {key}={value}\n")
        for sent in score_file.sentences:
            f.write("\n")
            if sent.sentence_prob is not None:
                f.write(f"# sent_prob={_format_float(sent.sentence_prob)}\n")
            for word, score, pred in zip(sent.words, sent.scores, sent.predictions()):
                f.write(f"{word}\t{_format_float(float(score))}\t{pred}\n")
    finally:
        if owned:
            f.close()


def read_scores(path_or_file) -> ScoreFile:
    f = path_or_file
    owned = not hasattr(f, "read")
    path = f if owned else getattr(f, "name", "<stream>")
    if owned:
        f = open(f, encoding="utf-8")
    try:
        header: dict[str, str] = {}
        sentences: list[ImportanceScores] = []
        words: list[str] = []
        scores: list[float] = []
        sent_meta: dict[str, str] = {}
        in_header = True

        def flush(line_no):
            nonlocal words, scores, sent_meta
            if not words:
                if sent_meta:
                    raise ParseError("metadata block without words", path, line_no)
                return
            prob = sent_meta.get("sent_prob")
            sentences.append(
                ImportanceScores(
                    words=words,
                    scores=np.array(scores),
                    method=header.get("method", "unknown"),
                    threshold=float(header.get("threshold", "0.5")),
                    sentence_prob=None if prob is None else float(prob),
                )
            )
            words, scores, sent_meta = [], [], {}

        line_no = 0
        for raw in f:
            line_no += 1
            line = raw.rstrip("\n")
            if not line.strip():
                in_header = False
                flush(line_no)
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" not in body:
                    raise ParseError(f"bad metadata line {line!r}", path, line_no)
                key, _, value = body.partition("=")
                if in_header:
                    header[key.strip()] = value.strip()
                else:
                    sent_meta[key.strip()] = value.strip()
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ParseError(f"expected 3 tab-separated columns, got {len(cols)}", path, line_no)
            in_header = False
            words.append(cols[0])
            try:
                scores.append(float(cols[1]))
            except ValueError as exc:
                raise ParseError(f"bad score {cols[1]!r}", path, line_no) from exc
            if cols[2] not in ("0", "1"):
                raise ParseError(f"bad predicted label {cols[2]!r}", path, line_no)
        flush(line_no + 1)
        if not sentences:
            raise ParseError("no scored sentences in file", path)
        if "method" not in header or "threshold" not in header:
            raise ParseError("missing method/threshold header", path)
        flags = {k: v for k, v in header.items() if k not in ("method", "threshold")}
        return ScoreFile(
            sentences=sentences,
            method=header["method"],
            threshold=float(header["threshold"]),
            flags=flags,
        )
    finally:
        if owned:
            f.close()


def scores_to_text(score_file: ScoreFile) -> str:
    buf = io.StringIO()
    write_scores(buf, score_file)
    return buf.getvalue()
