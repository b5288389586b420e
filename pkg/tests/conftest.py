from __future__ import annotations

import json
from pathlib import Path

import pytest

from hiss.backend import ScriptedBackend
from hiss.model import LIAR, RAWFC, Claim
from hiss.protocol import RunConfig
from hiss.search import import_cache

import fixture_builder as fb

DATA = Path(__file__).parent / "data"
FIXTURES = fb.FIXTURE_DIR


@pytest.fixture
def spending_claim() -> Claim:
    return Claim("t4", fb.SPENDING_CLAIM, LIAR.label("false"))


@pytest.fixture
def spending_backend() -> ScriptedBackend:
    return ScriptedBackend.from_file(FIXTURES / "spending.json")


@pytest.fixture
def spending_cache():
    return import_cache(FIXTURES / "spending_cache.json", frozen=True)


@pytest.fixture
def liar_config() -> RunConfig:
    return RunConfig(scheme=LIAR)


@pytest.fixture
def rawfc10_claims() -> list[Claim]:
    lines = (FIXTURES / "rawfc10_claims.jsonl").read_text(encoding="utf-8").splitlines()
    return [Claim.from_dict(json.loads(x), RAWFC) for x in lines]


@pytest.fixture
def rawfc10_backend() -> ScriptedBackend:
    return ScriptedBackend.from_file(FIXTURES / "rawfc10.json")


@pytest.fixture
def rawfc10_cache():
    return import_cache(FIXTURES / "rawfc10_cache.json", frozen=True)
