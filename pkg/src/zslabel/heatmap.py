"""Terminal and HTML heatmaps of per-word importance scores.

Shading uses a fixed [0, 1] scale (scores are absolute, so sentences
are comparable); several methods stack per sentence for side-by-side
reading, in input order.
"""

from __future__ import annotations

from .errors import ValidationError
from .scores import ScoreFile

RESET = "\x1b[0m"


def _clamp(v: float) -> float:
    return 0.0 if v < 0.0 else 1.0 if v > 1.0 else v


def _cell_rgb(value: float) -> tuple[int, int, int]:
    """White at 0 up to saturated red at 1."""
    fade = int(round(255 * (1.0 - _clamp(value))))
    return 255, fade, fade


def ansi_word(word: str, value: float) -> str:
    r, g, b = _cell_rgb(value)
    return f"\x1b[48;2;{r};{g};{b}m\x1b[30m{word}{RESET}"


def render_ansi(score_files: list[ScoreFile]) -> str:
    """One block per sentence; inside it one shaded line per method,
    stacked in input order."""
    if not score_files:
        raise ValidationError("no score files to render")
    counts = {len(sf.sentences) for sf in score_files}
    if len(counts) != 1:
        raise ValidationError(f"score files disagree on sentence count: {sorted(counts)}")
    lines = []
    for idx in range(counts.pop()):
        lines.append(f"sentence {idx}")
        for sf in score_files:
            sent = sf.sentences[idx]
            shaded = " ".join(ansi_word(w, v) for w, v in zip(sent.words, sent.scores))
            lines.append(f"  {sf.method:>14}  {shaded}")
        lines.append("")
    return "\n".join(lines)


def render_html(score_files: list[ScoreFile]) -> str:
    if not score_files:
        raise ValidationError("no score files to render")
    counts = {len(sf.sentences) for sf in score_files}
    if len(counts) != 1:
        raise ValidationError(f"score files disagree on sentence count: {sorted(counts)}")
    parts = [
        "<!DOCTYPE html><html><head><meta charset='utf-8'><style>",
        "body{font-family:monospace} .w{padding:1px 3px;margin:1px;display:inline-block}",
        ".m{color:#555;display:inline-block;width:10em;text-align:right;margin-right:1em}",
        "</style></head><body>",
    ]
    for idx in range(counts.pop()):
        parts.append(f"<div class='s'><h4>sentence {idx}</h4>")
        for sf in score_files:
            sent = sf.sentences[idx]
            spans = "".join(
                f"<span class='w' style='background:rgba(255,0,0,{_clamp(v):.3f})'>{w}</span>"
                for w, v in zip(sent.words, sent.scores)
            )
            parts.append(f"<div><span class='m'>{sf.method}</span>{spans}</div>")
        parts.append("</div>")
    parts.append("</body></html>")
    return "\n".join(parts)
