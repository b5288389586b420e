"""Few-shot comparison methods: standard prompting, chain-of-thought, and
chain-of-thought with one retrieved background snippet.

All three parse their verdict with :func:`hiss.parsing.parse_final_label`,
the same parser the hierarchical protocol uses.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

from . import prompts as P
from .backend import Backend, CompletionRequest
from .model import Claim, EvidenceSnippet, LabelScheme, Verdict
from .parsing import parse_final_label
from .prompts import DemoSet
from .search import SearchCache, SearchEngine, retrieve_evidence

COT_STOPS = ("\nQ:", "\n\n")
STANDARD_STOPS = ("\nQ:", "\n")
BACKGROUND_PREFIX = "Background information:"
FLAG_NO_BACKGROUND = "no_background"


class BaselineKind(str, enum.Enum):
    STANDARD = "standard"
    VANILLA_COT = "vanilla_cot"
    SEARCH_COT = "search_cot"

    @classmethod
    def parse(cls, name: str) -> "BaselineKind":
        aliases = {"cot": cls.VANILLA_COT, "search-cot": cls.SEARCH_COT}
        return aliases.get(name) or cls(name.replace("-", "_"))


@dataclass(frozen=True)
class BaselineResult:
    """One baseline run, shaped like a trace for batch output."""

    kind: BaselineKind
    claim: Claim
    verdict: Verdict | None
    transcript: str
    chain_text: str = ""
    background: EvidenceSnippet | None = None
    flags: tuple[str, ...] = ()
    config_fingerprint: str = ""
    error: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.kind.value,
            "claim": self.claim.to_dict(),
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "chain_text": self.chain_text,
            "background": self.background.to_dict() if self.background else None,
            "flags": list(self.flags),
            "transcript": self.transcript,
            "config_fingerprint": self.config_fingerprint,
            "error": self.error,
        }


def _complete(backend: Backend, prompt: str, stops: tuple[str, ...], claim: Claim,
              max_tokens: int = 512, temperature: float = 0.0) -> str:
    req = CompletionRequest(prompt=prompt, temperature=temperature, max_tokens=max_tokens,
                            stop_sequences=stops, conversation_id=claim.id)
    return backend.complete(req).text


def run_standard(claim: Claim, scheme: LabelScheme, backend: Backend, demos: DemoSet,
                 k: int = 4) -> tuple[Verdict, str]:
    """Ask for the label directly. Returns the verdict and the full transcript."""
    query = P.standard_query(claim.text, scheme)
    prompt = P.with_query(demos, k, query)
    text = _complete(backend, prompt, STANDARD_STOPS, claim)
    first = text.strip().split("\n", 1)[0] if text.strip() else ""
    # the label line is the query's "... classified as" line plus the answer
    question_line = query.split("\n")[0].removeprefix("Q: ")
    verdict = parse_final_label(f"{question_line} {first}", scheme)
    return verdict, prompt + text


def split_chain(text: str) -> str:
    """Reasoning before the final "Thus the claim is classified as" clause."""
    lowered = text.lower()
    cut = lowered.rfind("thus the claim is classified as")
    if cut < 0:
        at = lowered.rfind("classified as")
        if at < 0:
            return text.strip()
        cut = max(lowered.rfind(". ", 0, at) + 1, lowered.rfind("\n", 0, at) + 1, 0)
    return text[:cut].strip()


def _cot(claim: Claim, scheme: LabelScheme, backend: Backend, prompt: str) -> tuple[str, Verdict, str]:
    text = _complete(backend, prompt, COT_STOPS, claim)
    verdict = parse_final_label(text, scheme)
    return split_chain(text), verdict, prompt + text


def run_vanilla_cot(claim: Claim, scheme: LabelScheme, backend: Backend, demos: DemoSet,
                    k: int = 4) -> tuple[str, Verdict, str]:
    """Reasoning chain then label. Returns (chain_text, verdict, transcript)."""
    prompt = P.with_query(demos, k, P.cot_query(claim.text, scheme))
    return _cot(claim, scheme, backend, prompt)


def search_cot_prompt(claim: Claim, scheme: LabelScheme, demos: DemoSet, k: int,
                      background: EvidenceSnippet | None) -> str:
    query = P.cot_query(claim.text, scheme)
    if background is not None:
        query = f"{BACKGROUND_PREFIX} {background.text}\n{query}"
    return P.with_query(demos, k, query)


def run_search_cot(claim: Claim, scheme: LabelScheme, backend: Backend, demos: DemoSet,
                   engine: SearchEngine | None, cache: SearchCache,
                   k: int = 4) -> tuple[str, Verdict, str, EvidenceSnippet | None]:
    """Chain-of-thought with the claim's top filtered snippet as background.

    The claim text is the search query. When no hit survives filtering the
    prompt carries no background; callers flag that case.
    """
    background = retrieve_evidence(claim.text, cache, engine)
    prompt = search_cot_prompt(claim, scheme, demos, k, background)
    chain, verdict, transcript = _cot(claim, scheme, backend, prompt)
    return chain, verdict, transcript, background


def run_baseline(kind: BaselineKind, claim: Claim, scheme: LabelScheme, backend: Backend,
                 demos: DemoSet, engine: SearchEngine | None = None,
                 cache: SearchCache | None = None, k: int = 4,
                 config_fingerprint: str = "") -> BaselineResult:
    """Dispatch to one baseline and package the result."""
    if kind is BaselineKind.STANDARD:
        verdict, transcript = run_standard(claim, scheme, backend, demos, k)
        return BaselineResult(kind, claim, verdict, transcript, config_fingerprint=config_fingerprint)
    if kind is BaselineKind.VANILLA_COT:
        chain, verdict, transcript = run_vanilla_cot(claim, scheme, backend, demos, k)
        return BaselineResult(kind, claim, verdict, transcript, chain,
                              config_fingerprint=config_fingerprint)
    chain, verdict, transcript, bg = run_search_cot(
        claim, scheme, backend, demos, engine, cache if cache is not None else SearchCache(), k)
    flags = () if bg is not None else (FLAG_NO_BACKGROUND,)
    return BaselineResult(kind, claim, verdict, transcript, chain, bg, flags,
                          config_fingerprint=config_fingerprint)
