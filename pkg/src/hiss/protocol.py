"""The hierarchical step-by-step verification protocol.

One claim runs as a single growing prompt. The model is paused with stop
sequences at three kinds of points and the controller appends text there:

* after the decomposition, to open each subclaim block;
* after each generated question, to ask for a yes/no confidence reply;
* after that reply, to open the ``Answer:`` line, injecting the top search
  snippet when the search policy calls for evidence.

Generation after the last subclaim must end in a "... classified as <label>"
line, which is parsed with the shared label parser.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Any

from . import prompts as P
from .backend import Backend, CompletionRequest, CompletionResponse, FinishReason
from .errors import ClaimFailed, HissError, NoFinalLine, UnparseableDecomposition
from .model import (
    FLAG_AMBIGUOUS_CONFIDENCE,
    FLAG_NO_EVIDENCE,
    FLAG_QUESTION_CAP,
    FLAG_SUBCLAIM_CAP,
    Claim,
    Confidence,
    LabelScheme,
    QAStep,
    SearchPolicy,
    Subclaim,
    SubclaimVerification,
    Verdict,
    VerificationTrace,
    fingerprint,
)
from .parsing import collapse_repeats, extract_question, parse_final_label
from .prompts import DemoSet
from .search import SearchCache, SearchEngine, retrieve_evidence

log = logging.getLogger(__name__)

PROMPT_FORMAT_VERSION = "1"
NO_EVIDENCE_ANSWER = "No relevant background information was found."

DECOMPOSITION_STOPS = ("\nTo verify", "\nQuestion:", "\nQ:")
QUESTION_STOPS = (P.CONFIDENCE_STOP, "\nTo verify", P.FINAL_SENTINEL, "\nQ:")
CONFIDENCE_STOPS = ("no", "\n")
ANSWER_STOPS = ("Question:", "\nTo verify", P.FINAL_SENTINEL, "\nQ:")
FINAL_STOPS = ("\nQ:", "\n\n")
ELICIT_STOPS = ("\n", "\nQ:")


@dataclass(frozen=True)
class RunConfig:
    scheme: LabelScheme
    shot_count: int = 4
    search_policy: SearchPolicy = SearchPolicy.SELF_DECIDE
    decompose: bool = True
    step_by_step: bool = True
    max_subclaims: int = 6
    max_questions_per_subclaim: int = 6
    prompt_asset: str = ""
    max_tokens: int = 512
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.shot_count < 0:
            raise ValueError("shot_count must be >= 0")
        if self.max_subclaims < 1 or self.max_questions_per_subclaim < 1:
            raise ValueError("caps must be >= 1")
        object.__setattr__(self, "search_policy", SearchPolicy(self.search_policy))
        if not self.prompt_asset:
            object.__setattr__(self, "prompt_asset", f"{self.scheme.name}_hiss")

    def to_dict(self) -> dict[str, Any]:
        return {
            "scheme": self.scheme.name,
            "shot_count": self.shot_count,
            "search_policy": self.search_policy.value,
            "decompose": self.decompose,
            "step_by_step": self.step_by_step,
            "max_subclaims": self.max_subclaims,
            "max_questions_per_subclaim": self.max_questions_per_subclaim,
            "prompt_asset": self.prompt_asset,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        }

    def fingerprint(self, backend_id: str, asset_id: str) -> str:
        return fingerprint({
            "scheme": self.scheme.to_dict(),
            "config": self.to_dict(),
            "backend": backend_id,
            "asset": asset_id,
            "format": PROMPT_FORMAT_VERSION,
        })

    def ablated(self, name: str) -> "RunConfig":
        """Copy with one named ablation applied (as accepted by the CLI grid)."""
        if name in ("", "default"):
            return self
        if name == "no-decompose":
            return replace(self, decompose=False)
        if name == "no-stepwise":
            return replace(self, step_by_step=False)
        if name.startswith("search="):
            return replace(self, search_policy=SearchPolicy(name.split("=", 1)[1].replace("-", "_")))
        raise ValueError(f"unknown ablation {name!r}")


class Phase(enum.IntEnum):
    DECOMPOSITION = 0
    SUBCLAIM_LOOP = 1
    FINAL = 2


@dataclass
class ProtocolState:
    """Append-only prompt plus the controller's position in the protocol."""

    prompt_so_far: str
    claim: Claim
    config: RunConfig
    phase: Phase = Phase.DECOMPOSITION
    current_subclaim: int | None = None
    question_count: dict[int, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    #: subclaim blocks say "the claim" instead of "subclaim j"
    single_block: bool = False
    #: non-question text that ended the last subclaim loop, parsed with the final line
    carry: str = ""
    #: the last subclaim loop stopped at the question cap, so the model is
    #: still mid-question and the final header must be written for it
    capped: bool = False

    @property
    def conversation_id(self) -> str:
        return self.claim.id

    def append(self, text: str) -> None:
        self.prompt_so_far += text

    def newline(self) -> None:
        if not self.prompt_so_far.endswith("\n"):
            self.prompt_so_far += "\n"

    def enter(self, phase: Phase, subclaim: int | None = None) -> None:
        if phase < self.phase:
            raise RuntimeError(f"phase cannot move back from {self.phase.name} to {phase.name}")
        if phase is Phase.SUBCLAIM_LOOP and subclaim is not None:
            if self.current_subclaim is not None and subclaim <= self.current_subclaim:
                raise RuntimeError("subclaims are visited in order")
            self.current_subclaim = subclaim
            self.question_count[subclaim] = 0
        self.phase = phase


def _generate(state: ProtocolState, backend: Backend, stops: tuple[str, ...]) -> CompletionResponse:
    request = CompletionRequest(
        prompt=state.prompt_so_far,
        temperature=state.config.temperature,
        max_tokens=state.config.max_tokens,
        stop_sequences=stops,
        conversation_id=state.conversation_id,
    )
    return backend.complete(request)


def assemble_prompt(demos: DemoSet, claim: Claim, config: RunConfig) -> ProtocolState:
    """K demonstrations followed by the claim block the model continues."""
    prompt = P.with_query(demos, config.shot_count, P.hiss_query(claim.text))
    return ProtocolState(prompt, claim, config)


# --------------------------------------------------------------------------
# decomposition

_NUMBERED = re.compile(r"^\s*(\d+)[.)]\s+(\S.*?)\s*$", re.MULTILINE)


def parse_decomposition(text: str, claim_text: str, max_subclaims: int) -> tuple[list[Subclaim], bool]:
    """Subclaims from a decomposition block, and whether the cap cut the list."""
    items = [m.group(2) for m in _NUMBERED.finditer(text)]
    deduped: list[str] = []
    for item in items:
        if not deduped or item != deduped[-1]:
            deduped.append(item)
    if deduped:
        capped = len(deduped) > max_subclaims
        return [Subclaim(i, t) for i, t in enumerate(deduped[:max_subclaims], start=1)], capped
    if P.NO_SPLIT_SENTINEL.lower() in text.lower():
        return [Subclaim(1, claim_text)], False
    raise UnparseableDecomposition(f"no numbered subclaims and no no-split sentence in {text[:120]!r}")


def run_decomposition(state: ProtocolState, backend: Backend) -> list[Subclaim]:
    """Generate up to the first subclaim block header and parse the subclaim list."""
    if not state.config.decompose:
        raise RuntimeError("decomposition is disabled in this configuration")
    state.enter(Phase.DECOMPOSITION)
    response = _generate(state, backend, DECOMPOSITION_STOPS)
    state.append(response.text)
    subclaims, capped = parse_decomposition(response.text, state.claim.text, state.config.max_subclaims)
    if capped:
        state.flags.append(FLAG_SUBCLAIM_CAP)
    if len(subclaims) == 1 and P.NO_SPLIT_SENTINEL.lower() in response.text.lower():
        state.single_block = True
    return subclaims


# --------------------------------------------------------------------------
# subclaim loop


def detect_confidence(response: CompletionResponse) -> tuple[Confidence, bool]:
    """Read the reply to the confidence probe.

    Returns (confidence, ambiguous). A reply stopped by ``no`` is not
    confident; a first line containing "yes" is confident; anything else is
    treated as confident and reported as ambiguous.
    """
    if response.finish_reason is FinishReason.STOP_SEQUENCE_HIT and response.matched_stop == "no":
        return Confidence.NOT_CONFIDENT, False
    first = response.text.strip().split("\n", 1)[0] if response.text.strip() else ""
    if re.search(r"\byes\b", first, re.IGNORECASE):
        return Confidence.CONFIDENT, False
    return Confidence.CONFIDENT, True


def _wants_search(policy: SearchPolicy, confidence: Confidence) -> bool:
    if policy is SearchPolicy.ALWAYS:
        return True
    if policy is SearchPolicy.NEVER:
        return False
    return confidence is Confidence.NOT_CONFIDENT


def _answer_question(state: ProtocolState, question: str, backend: Backend,
                     engine: SearchEngine | None, cache: SearchCache) -> tuple[QAStep, bool]:
    config = state.config
    flags: list[str] = []
    sep = "" if state.prompt_so_far[-1:].isspace() else " "
    state.append(sep + P.CONFIDENCE_INSTRUCTION)

    reply = _generate(state, backend, CONFIDENCE_STOPS)
    confidence, ambiguous = detect_confidence(reply)
    if ambiguous:
        flags.append(FLAG_AMBIGUOUS_CONFIDENCE)
        state.warnings.append(f"ambiguous confidence reply {reply.text.strip()!r} to {question!r}")
    if confidence is Confidence.NOT_CONFIDENT:
        state.append(reply.text + ("No." if not reply.text.strip() else reply.matched_stop))
    else:
        state.append(reply.text)
    state.newline()

    evidence = None
    if _wants_search(config.search_policy, confidence):
        evidence = retrieve_evidence(question, cache, engine)
        if evidence is None:
            flags.append(FLAG_NO_EVIDENCE)
    state.append(f"{P.ANSWER_PREFIX} {evidence.text}" if evidence else P.ANSWER_PREFIX)

    cont = _generate(state, backend, ANSWER_STOPS)
    state.append(cont.text)
    answer = collapse_repeats((evidence.text + cont.text) if evidence else cont.text)
    more = cont.matched_stop == "Question:" or cont.finish_reason is FinishReason.LENGTH
    return QAStep(question, confidence, evidence, answer, tuple(flags)), more


def run_subclaim_loop(state: ProtocolState, subclaim: Subclaim, backend: Backend,
                      engine: SearchEngine | None, cache: SearchCache,
                      config: RunConfig | None = None) -> SubclaimVerification:
    """Verify one subclaim through progressive question/answer steps."""
    config = config or state.config
    if not config.step_by_step:
        raise RuntimeError("step-by-step verification is disabled in this configuration")
    state.enter(Phase.SUBCLAIM_LOOP, subclaim.index)
    state.capped = False
    state.newline()
    state.append(P.subclaim_header(None if state.single_block else subclaim.index) + "\n")

    steps: list[QAStep] = []
    flags: list[str] = []
    while True:
        block = _generate(state, backend, QUESTION_STOPS)
        question = None
        if block.matched_stop == P.CONFIDENCE_STOP:
            question = extract_question(block.text)
        if question is None:
            state.append(block.text)
            if block.text.strip():
                state.carry += block.text
            break
        if len(steps) >= config.max_questions_per_subclaim:
            state.capped = True
            flags.append(FLAG_QUESTION_CAP)
            state.warnings.append(f"question cap hit on subclaim {subclaim.index}")
            break
        state.append(block.text)
        state.question_count[subclaim.index] += 1
        step, more = _answer_question(state, question, backend, engine, cache)
        steps.append(step)
        if not more:
            break
    return SubclaimVerification(subclaim, tuple(steps), tuple(flags))


def run_search_only(state: ProtocolState, subclaim: Subclaim, engine: SearchEngine | None,
                    cache: SearchCache) -> SubclaimVerification:
    """Verify a subclaim by searching it directly, without probing questions."""
    state.enter(Phase.SUBCLAIM_LOOP, subclaim.index)
    state.newline()
    state.append(P.search_header(None if state.single_block else subclaim.index) + "\n")
    flags: list[str] = []
    evidence = None
    confidence = Confidence.CONFIDENT
    if state.config.search_policy is not SearchPolicy.NEVER:
        confidence = Confidence.NOT_CONFIDENT
        evidence = retrieve_evidence(subclaim.text, cache, engine)
        if evidence is None:
            flags.append(FLAG_NO_EVIDENCE)
    answer = evidence.text if evidence else NO_EVIDENCE_ANSWER
    state.append(f"{P.QUESTION_PREFIX} {subclaim.text}\n{P.ANSWER_PREFIX} {answer}\n")
    step = QAStep(subclaim.text, confidence, evidence, answer, tuple(flags))
    return SubclaimVerification(subclaim, (step,))


# --------------------------------------------------------------------------
# final prediction


def run_final_prediction(state: ProtocolState, backend: Backend, scheme: LabelScheme) -> Verdict:
    """Continue to the "classified as" line, eliciting it once if the model does not."""
    state.enter(Phase.FINAL)
    if not state.capped:
        response = _generate(state, backend, FINAL_STOPS)
        state.append(response.text)
        try:
            return parse_final_label(state.carry + "\n" + response.text, scheme)
        except NoFinalLine:
            pass
    header = P.final_header(scheme)
    state.newline()
    state.append(header)
    response = _generate(state, backend, ELICIT_STOPS)
    state.append(response.text)
    return parse_final_label(header + response.text, scheme)


# --------------------------------------------------------------------------
# whole run


def run_hiss(claim: Claim, config: RunConfig, backend: Backend, engine: SearchEngine | None,
             cache: SearchCache, demos: DemoSet | None = None) -> VerificationTrace:
    """Decompose, verify each subclaim, and predict a label for one claim.

    Any failure is raised as :class:`ClaimFailed` carrying the partial trace.
    """
    demos = demos or P.load_demos(config.prompt_asset)
    fp = config.fingerprint(backend.backend_id, demos.asset_id)
    state = assemble_prompt(demos, claim, config)
    done: list[SubclaimVerification] = []

    def trace(verdict: Verdict | None, error: str | None = None) -> VerificationTrace:
        cfg = config.to_dict()
        if state.flags:
            cfg["flags"] = list(state.flags)
        return VerificationTrace(
            claim=claim, subclaims=tuple(done), verdict=verdict, transcript=state.prompt_so_far,
            config_fingerprint=fp, shot_count=config.shot_count, scheme=config.scheme,
            config=cfg, warnings=tuple(state.warnings), error=error)

    try:
        if config.decompose:
            subclaims = run_decomposition(state, backend)
        else:
            state.append(P.NO_SPLIT_LINE)
            state.single_block = True
            subclaims = [Subclaim(1, claim.text)]
        for sub in subclaims:
            if config.step_by_step:
                done.append(run_subclaim_loop(state, sub, backend, engine, cache))
            else:
                done.append(run_search_only(state, sub, engine, cache))
        verdict = run_final_prediction(state, backend, config.scheme)
    except HissError as exc:
        raise ClaimFailed(claim.id, exc, trace(None, exc.code)) from exc
    return trace(verdict)


# --------------------------------------------------------------------------
# transcript rendering / parsing


def generation_text(trace: VerificationTrace) -> str:
    """The part of a transcript after the claim block, i.e. what follows ``A: ``."""
    marker = P.hiss_query(trace.claim.text)
    idx = trace.transcript.rfind(marker)
    return trace.transcript[idx + len(marker):] if idx >= 0 else trace.transcript


def render_generation(trace: VerificationTrace) -> str:
    """Canonical transcript text for a trace's structured content."""
    single = len(trace.subclaims) == 1 and trace.subclaims[0].subclaim.text == trace.claim.text
    lines: list[str] = []
    if single:
        lines.append(P.NO_SPLIT_LINE)
    else:
        lines.append(f"{P.DECOMPOSE_SENTINEL} {len(trace.subclaims)} subclaims that are easier to verify:")
        lines += [f"{sv.subclaim.index}. {sv.subclaim.text}" for sv in trace.subclaims]
    for sv in trace.subclaims:
        lines.append(P.subclaim_header(None if single else sv.subclaim.index))
        for step in sv.steps:
            reply = "Yes." if step.confidence is Confidence.CONFIDENT else "No."
            lines.append(f"{P.QUESTION_PREFIX} {step.question}")
            lines.append(f"{P.CONFIDENCE_INSTRUCTION} {reply}")
            lines.append(f"{P.ANSWER_PREFIX} {step.answer}")
    if trace.verdict is not None:
        lines.append(trace.verdict.raw_line)
    return "\n".join(lines)


def parse_generation(text: str, claim: Claim, scheme: LabelScheme) -> tuple[list[SubclaimVerification], Verdict]:
    """Recover subclaims, steps and verdict from transcript text.

    Evidence provenance is not visible in text, so parsed steps carry no
    evidence; compare with :func:`structure`.
    """
    head, _, body = text.partition(P.VERIFY_PREFIX)
    subclaims, _ = parse_decomposition(head, claim.text, 10**6)
    blocks = re.split(r"(?m)^\s*To verify ", P.VERIFY_PREFIX + body)
    blocks = [b for b in blocks if b.strip()]
    result: list[SubclaimVerification] = []
    final_region = ""
    for sub, block in zip(subclaims, blocks):
        steps: list[QAStep] = []
        body_lines = block.split("\n", 1)[1] if "\n" in block else ""
        cut = body_lines.find(P.FINAL_SENTINEL)
        if cut >= 0:
            final_region = body_lines[cut:]
            body_lines = body_lines[:cut]
        chunks = re.split(r"(?=\bQuestion:)", body_lines)
        pending_q: list[str] = []
        for chunk in chunks:
            if not chunk.strip():
                continue
            q_text, sep, rest = chunk.partition(P.CONFIDENCE_STOP)
            if not sep:
                pending_q.append(chunk)
                continue
            question = extract_question("".join(pending_q) + q_text)
            pending_q = []
            reply, _, answer_part = rest.partition("\n")
            conf = (Confidence.NOT_CONFIDENT if re.search(r":\s*no\b", reply, re.IGNORECASE)
                    else Confidence.CONFIDENT)
            answer = answer_part.strip()
            if answer.startswith(P.ANSWER_PREFIX):
                answer = answer[len(P.ANSWER_PREFIX):]
            steps.append(QAStep(question or "", conf, None, collapse_repeats(answer)))
        result.append(SubclaimVerification(sub, tuple(steps)))
    if not final_region:
        final_region = text
    return result, parse_final_label(final_region, scheme)


def structure(subclaims, verdict: Verdict | None) -> tuple:
    """Evidence-free comparable shape of a verification."""
    return (
        tuple(
            (sv.subclaim.index, sv.subclaim.text,
             tuple((s.question, s.confidence.value, s.answer) for s in sv.steps))
            for sv in subclaims
        ),
        verdict.label.value if verdict else None,
    )
