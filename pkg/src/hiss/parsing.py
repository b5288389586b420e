"""Label extraction and small text helpers shared by HiSS and the baselines.

Every method parses its verdict through :func:`match_label` so a fix to
label matching applies everywhere at once.
"""

from __future__ import annotations

import re

from .errors import LabelNotInScheme, NoFinalLine
from .model import CLASSIFIED_AS, LabelScheme, Verdict

_LEADING_JUNK = " \t\r\n\"'`*_([“‘:"


def _is_label_char(ch: str) -> bool:
    return ch.isalnum() or ch == "-"


def match_label(text: str, scheme: LabelScheme) -> str:
    """Longest scheme label that ``text`` starts with, on a word boundary.

    Longest-match keeps ``mostly-true`` from being read as ``true``; the
    boundary check keeps ``half-true`` from being read as ``half``.
    """
    s = text.lstrip(_LEADING_JUNK).lower()
    best = None
    for label in scheme.labels:
        if s.startswith(label) and (len(s) == len(label) or not _is_label_char(s[len(label)])):
            if best is None or len(label) > len(best):
                best = label
    if best is None:
        word = s.split()[0] if s.split() else ""
        raise LabelNotInScheme(f"{word!r} is not one of {list(scheme.labels)}")
    return best


def final_line(text: str) -> str:
    """Last line containing "classified as"."""
    lines = [ln for ln in text.splitlines() if CLASSIFIED_AS in ln.lower()]
    if not lines:
        raise NoFinalLine("no line containing 'classified as'")
    return lines[-1].strip()


def parse_final_label(text: str, scheme: LabelScheme) -> Verdict:
    """Verdict from the label after the final " as " on the last "classified as" line."""
    line = final_line(text)
    lowered = line.lower()
    cut = lowered.rfind(" as ")
    if cut >= 0:
        tail = line[cut + len(" as "):]
    else:
        tail = line[lowered.rfind(CLASSIFIED_AS) + len(CLASSIFIED_AS):]
    return Verdict(scheme.label(match_label(tail, scheme)), line)


def collapse_repeats(text: str) -> str:
    """Drop consecutive duplicate lines (repetition under greedy decoding)."""
    out: list[str] = []
    for line in text.splitlines():
        if out and line.strip() and line.strip() == out[-1].strip():
            continue
        out.append(line)
    return "\n".join(out).strip()


_QUESTION_SPLIT = re.compile(r"Question:", re.IGNORECASE)


def extract_question(text: str) -> str | None:
    """Question text from a generated ``Question: ...`` block.

    A block that repeats its question (``Question: X? Question: X?``) yields
    the last segment; returns None when the block is not a question.
    """
    stripped = text.lstrip()
    if not stripped.lower().startswith("question:"):
        return None
    parts = [p.strip() for p in _QUESTION_SPLIT.split(stripped) if p.strip()]
    if not parts:
        return None
    return collapse_repeats(parts[-1])
