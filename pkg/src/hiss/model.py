"""Domain types shared across the package.

All types are frozen value objects. Traces serialize to plain dicts whose
keys are the field names below, so a batch output file is one
``trace.to_json()`` per line.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .errors import DuplicateLabel, EmptyScheme, LabelNotInScheme

CLASSIFIED_AS = "classified as"


@dataclass(frozen=True)
class LabelScheme:
    name: str
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.labels:
            raise EmptyScheme(f"scheme {self.name!r} has no labels")
        if any(lab != lab.lower() for lab in self.labels):
            raise ValueError("scheme labels must be lowercase; use make_scheme()")
        if len(set(self.labels)) != len(self.labels):
            raise DuplicateLabel(f"duplicate labels in scheme {self.name!r}")

    def __contains__(self, value: object) -> bool:
        return isinstance(value, str) and value.lower() in self.labels

    def __len__(self) -> int:
        return len(self.labels)

    def label(self, value: str) -> "Label":
        """Return the Label for ``value`` (case-insensitive)."""
        if value not in self:
            raise LabelNotInScheme(f"{value!r} is not a {self.name} label {list(self.labels)}")
        return Label(self, value.lower())

    def index(self, value: str) -> int:
        return self.labels.index(value.lower())

    def phrase(self) -> str:
        """Label set as written in prompts: ``a, b, and c``."""
        if len(self.labels) == 1:
            return self.labels[0]
        if len(self.labels) == 2:
            return f"{self.labels[0]} and {self.labels[1]}"
        return ", ".join(self.labels[:-1]) + ", and " + self.labels[-1]

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "labels": list(self.labels)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LabelScheme":
        return make_scheme(data["name"], data["labels"])


def make_scheme(name: str, labels: Sequence[str]) -> LabelScheme:
    """Build a scheme, lowercasing labels and keeping their order."""
    if not labels:
        raise EmptyScheme(f"scheme {name!r} has no labels")
    lowered = [str(lab).strip().lower() for lab in labels]
    seen: set[str] = set()
    for lab in lowered:
        if not lab:
            raise EmptyScheme(f"scheme {name!r} has an empty label")
        if lab in seen:
            raise DuplicateLabel(f"label {lab!r} appears twice in scheme {name!r}")
        seen.add(lab)
    return LabelScheme(name, tuple(lowered))


LIAR = make_scheme(
    "liar", ["pants-fire", "false", "barely-true", "half-true", "mostly-true", "true"]
)
RAWFC = make_scheme("rawfc", ["true", "half", "false"])
SCHEMES = {"liar": LIAR, "rawfc": RAWFC}


def get_scheme(name: str) -> LabelScheme:
    try:
        return SCHEMES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; expected one of {sorted(SCHEMES)}") from None


@dataclass(frozen=True)
class Label:
    scheme: LabelScheme
    value: str

    def __post_init__(self) -> None:
        if self.value not in self.scheme.labels:
            raise LabelNotInScheme(f"{self.value!r} is not a {self.scheme.name} label")

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Claim:
    id: str
    text: str
    gold: Label | None = None
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError(f"claim {self.id!r} has empty text")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "gold": self.gold.value if self.gold else None,
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], scheme: LabelScheme | None = None) -> "Claim":
        gold = data.get("gold")
        if gold is not None:
            if scheme is None:
                raise ValueError("a scheme is needed to read gold labels")
            gold = scheme.label(gold)
        return cls(
            id=str(data["id"]),
            text=data["text"],
            gold=gold,
            metadata={str(k): str(v) for k, v in (data.get("metadata") or {}).items()},
        )


@dataclass(frozen=True)
class Subclaim:
    index: int
    text: str

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("subclaim index is 1-based")
        if not self.text.strip():
            raise ValueError("subclaim text is empty")


class Confidence(str, enum.Enum):
    CONFIDENT = "confident"
    NOT_CONFIDENT = "not_confident"


class SearchPolicy(str, enum.Enum):
    NEVER = "never"
    ALWAYS = "always"
    SELF_DECIDE = "self_decide"


@dataclass(frozen=True)
class EvidenceSnippet:
    text: str
    source_url: str
    query: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("evidence text is empty")

    def to_dict(self) -> dict[str, str]:
        return {"text": self.text, "source_url": self.source_url, "query": self.query}


# step / subclaim / trace flags
FLAG_NO_EVIDENCE = "no_evidence"
FLAG_QUESTION_CAP = "question_cap_exceeded"
FLAG_SUBCLAIM_CAP = "subclaim_cap_exceeded"
FLAG_AMBIGUOUS_CONFIDENCE = "ambiguous_confidence"


@dataclass(frozen=True)
class QAStep:
    question: str
    confidence: Confidence
    evidence: EvidenceSnippet | None
    answer: str
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question,
            "confidence": self.confidence.value,
            "evidence": self.evidence.to_dict() if self.evidence else None,
            "answer": self.answer,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "QAStep":
        ev = data.get("evidence")
        return cls(
            question=data["question"],
            confidence=Confidence(data["confidence"]),
            evidence=EvidenceSnippet(**ev) if ev else None,
            answer=data["answer"],
            flags=tuple(data.get("flags", ())),
        )


@dataclass(frozen=True)
class SubclaimVerification:
    subclaim: Subclaim
    steps: tuple[QAStep, ...]
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "subclaim": {"index": self.subclaim.index, "text": self.subclaim.text},
            "steps": [s.to_dict() for s in self.steps],
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SubclaimVerification":
        return cls(
            subclaim=Subclaim(**data["subclaim"]),
            steps=tuple(QAStep.from_dict(s) for s in data["steps"]),
            flags=tuple(data.get("flags", ())),
        )


@dataclass(frozen=True)
class Verdict:
    label: Label
    raw_line: str

    def to_dict(self) -> dict[str, str]:
        return {"label": self.label.value, "raw_line": self.raw_line}


@dataclass(frozen=True)
class VerificationTrace:
    claim: Claim
    subclaims: tuple[SubclaimVerification, ...]
    verdict: Verdict | None
    transcript: str
    config_fingerprint: str
    shot_count: int
    scheme: LabelScheme
    config: Mapping[str, Any] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()
    error: str | None = None

    def steps(self) -> list[QAStep]:
        return [step for sv in self.subclaims for step in sv.steps]

    def to_dict(self) -> dict[str, Any]:
        return {
            "claim": self.claim.to_dict(),
            "subclaims": [sv.to_dict() for sv in self.subclaims],
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "transcript": self.transcript,
            "config_fingerprint": self.config_fingerprint,
            "shot_count": self.shot_count,
            "scheme": self.scheme.to_dict(),
            "config": dict(self.config),
            "warnings": list(self.warnings),
            "error": self.error,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "VerificationTrace":
        scheme = LabelScheme.from_dict(data["scheme"])
        verdict = data.get("verdict")
        return cls(
            claim=Claim.from_dict(data["claim"], scheme),
            subclaims=tuple(SubclaimVerification.from_dict(s) for s in data["subclaims"]),
            verdict=Verdict(scheme.label(verdict["label"]), verdict["raw_line"]) if verdict else None,
            transcript=data["transcript"],
            config_fingerprint=data["config_fingerprint"],
            shot_count=int(data["shot_count"]),
            scheme=scheme,
            config=dict(data.get("config") or {}),
            warnings=tuple(data.get("warnings", ())),
            error=data.get("error"),
        )

    @classmethod
    def from_json(cls, line: str) -> "VerificationTrace":
        return cls.from_dict(json.loads(line))


def fingerprint(payload: Mapping[str, Any]) -> str:
    """Stable short hash of a JSON-able mapping."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}" + (f" ({self.detail})" if self.detail else "")


def _in_transcript(text: str, transcript: str) -> bool:
    # structured text may have repeated lines collapsed; each line must still
    # be verbatim in the raw transcript
    return all(line.strip() in transcript for line in text.splitlines() if line.strip())


def validate_trace(trace: VerificationTrace) -> list[Violation]:
    """Check every type invariant of a trace. Returns [] when all hold."""
    out: list[Violation] = []
    cfg = trace.config
    policy = SearchPolicy(cfg.get("search_policy", SearchPolicy.SELF_DECIDE.value))
    decompose = cfg.get("decompose", True)
    complete = trace.error is None

    if not trace.claim.text.strip():
        out.append(Violation("claim.text", "empty-claim-text"))
    if "shot_count" in cfg and cfg["shot_count"] != trace.shot_count:
        out.append(Violation("shot_count", "shot-count-mismatch",
                             f"{trace.shot_count} != {cfg['shot_count']}"))

    if not trace.subclaims:
        if decompose:
            out.append(Violation("subclaims", "empty-subclaims"))
        else:
            out.append(Violation("subclaims", "no-decompose-shape", "expected exactly one subclaim"))
    elif not decompose:
        if len(trace.subclaims) != 1 or trace.subclaims[0].subclaim.text != trace.claim.text:
            out.append(Violation("subclaims", "no-decompose-shape",
                                 "expected one subclaim equal to the claim text"))

    for i, sv in enumerate(trace.subclaims, start=1):
        where = f"subclaims[{i - 1}]"
        if sv.subclaim.index != i:
            out.append(Violation(f"{where}.subclaim.index", "subclaim-order",
                                 f"{sv.subclaim.index} at position {i}"))
        if not sv.subclaim.text.strip():
            out.append(Violation(f"{where}.subclaim.text", "empty-subclaim-text"))
        if complete and not sv.steps:
            out.append(Violation(f"{where}.steps", "empty-steps"))
        for m, step in enumerate(sv.steps):
            sw = f"{where}.steps[{m}]"
            if not step.question.strip():
                out.append(Violation(f"{sw}.question", "empty-question"))
            elif not _in_transcript(step.question, trace.transcript):
                out.append(Violation(f"{sw}.question", "question-not-in-transcript"))
            if not step.answer.strip():
                out.append(Violation(f"{sw}.answer", "empty-answer"))
            elif not _in_transcript(step.answer, trace.transcript):
                out.append(Violation(f"{sw}.answer", "answer-not-in-transcript"))
            searched_empty = FLAG_NO_EVIDENCE in step.flags
            if policy is SearchPolicy.NEVER:
                if step.evidence is not None:
                    out.append(Violation(f"{sw}.evidence", "evidence-under-never"))
            elif policy is SearchPolicy.ALWAYS:
                if step.evidence is None and not searched_empty:
                    out.append(Violation(f"{sw}.evidence", "missing-evidence"))
            else:
                if step.evidence is not None and step.confidence is Confidence.CONFIDENT:
                    out.append(Violation(f"{sw}.evidence", "evidence-on-confident"))
                if (step.confidence is Confidence.NOT_CONFIDENT and step.evidence is None
                        and not searched_empty):
                    out.append(Violation(f"{sw}.evidence", "missing-evidence"))

    if trace.verdict is not None:
        if CLASSIFIED_AS not in trace.verdict.raw_line.lower():
            out.append(Violation("verdict.raw_line", "raw-line-without-classified-as"))
        if trace.verdict.label.value not in trace.scheme.labels:
            out.append(Violation("verdict.label", "label-not-in-scheme"))
    elif complete:
        out.append(Violation("verdict", "missing-verdict"))
    return out
