"""Demonstration assets and the fixed text of every prompt the package sends."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import InsufficientDemos
from .model import LabelScheme

DECOMPOSE_SENTINEL = "A fact checker will decompose the claim into"
NO_SPLIT_SENTINEL = "A fact checker will not split the claim"
NO_SPLIT_LINE = "A fact checker will not split the claim since the original claim is easier to verify."
VERIFY_PREFIX = "To verify"
_STEP_TAIL = (
    ", a fact-checker will go through a step-by-step process to ask and answer a series of "
    "questions relevant to its factuality. Here are the specific steps he/she raise each "
    "question and look for an answer:"
)
QUESTION_PREFIX = "Question:"
ANSWER_PREFIX = "Answer:"
CONFIDENCE_STOP = "Tell me if you are confident"
CONFIDENCE_INSTRUCTION = (
    'Tell me if you are confident to answer the question or not. Answer with "yes" or "no":'
)
FINAL_SENTINEL = "Based on the answers"
SEARCH_TAIL = ", a fact-checker will search for relevant background information:"


def subclaim_header(index: int | None) -> str:
    """Header opening a subclaim's question block; ``None`` means the whole claim."""
    target = "the claim" if index is None else f"subclaim {index}"
    return f"{VERIFY_PREFIX} {target}{_STEP_TAIL}"


def search_header(index: int | None) -> str:
    target = "the claim" if index is None else f"subclaim {index}"
    return f"{VERIFY_PREFIX} {target}{SEARCH_TAIL}"


def final_header(scheme: LabelScheme) -> str:
    return (f"{FINAL_SENTINEL} to these questions, it is clear that among {scheme.phrase()}, "
            "the claim is classified as")


def hiss_query(claim_text: str) -> str:
    return f'Q: Claim: "{claim_text}"\nA: '


def standard_query(claim_text: str, scheme: LabelScheme) -> str:
    return f'Q: Among {scheme.phrase()}, the claim "{claim_text}" is classified as\nA:'


def cot_query(claim_text: str, scheme: LabelScheme) -> str:
    return (f"Q: Choose a label from {scheme.phrase()} for the following claim.\n"
            f'Claim: "{claim_text}"\nA:')


@dataclass(frozen=True)
class DemoSet:
    name: str
    version: str
    demos: tuple[str, ...]

    @property
    def asset_id(self) -> str:
        return f"{self.name}@{self.version}"

    def __len__(self) -> int:
        return len(self.demos)

    def render(self, k: int) -> str:
        """First ``k`` demonstrations joined as they appear in a prompt."""
        if k < 0:
            raise ValueError("k must be >= 0")
        if k > len(self.demos):
            raise InsufficientDemos(f"{self.asset_id} has {len(self.demos)} demos, {k} requested")
        return "\n\n".join(self.demos[:k])


def parse_demo_text(text: str, name: str = "custom") -> DemoSet:
    header: dict[str, str] = {}
    lines = text.splitlines()
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            key, _, value = line.lstrip("# ").partition(":")
            if value:
                header.setdefault(key.strip(), value.strip())
            body_start = i + 1
        else:
            break
    body = "\n".join(lines[body_start:]).strip()
    demos = tuple(d.strip() for d in body.split("\n\n") if d.strip())
    return DemoSet(header.get("asset", name), header.get("version", "0"), demos)


def load_demos(name_or_path: str) -> DemoSet:
    """Load a shipped asset by name (``liar_hiss``) or a demo file by path."""
    path = Path(name_or_path)
    if path.suffix == ".txt" and path.exists():
        return parse_demo_text(path.read_text(encoding="utf-8"), path.stem)
    try:
        text = resources.files("hiss").joinpath("assets").joinpath(f"{name_or_path}.txt").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"no prompt asset named {name_or_path!r}") from None
    return parse_demo_text(text, name_or_path)


def default_asset(scheme: LabelScheme, method: str) -> str:
    """Shipped asset name for a scheme and method (hiss, standard, cot)."""
    kind = {"hiss": "hiss", "standard": "standard", "cot": "cot", "search-cot": "cot",
            "vanilla_cot": "cot", "search_cot": "cot"}[method]
    return f"{scheme.name}_{kind}"


def with_query(demos: DemoSet, k: int, query: str) -> str:
    prefix = demos.render(k)
    return f"{prefix}\n\n{query}" if prefix else query
