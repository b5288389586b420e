import json

import pytest
from click.testing import CliRunner

import fixture_builder as fb
from conftest import DATA, FIXTURES
from hiss.cli import main

CLAIMS = str(FIXTURES / "rawfc10_claims.jsonl")
RAWFC10 = ["--dataset", "jsonl", "--path", CLAIMS, "--scheme", "rawfc",
           "--fixture", "rawfc10", "--cache", "rawfc10_cache", "--freeze-cache"]


def run(*args, **kw):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False, **kw)


def test_verify_spending():
    r = run("verify", fb.SPENDING_CLAIM, "--id", "t4", "--fixture", "spending",
            "--cache", "spending_cache", "--freeze-cache")
    assert r.exit_code == 0, r.output
    trace = json.loads(r.stdout)
    assert trace["verdict"]["label"] == "false"
    assert len(trace["subclaims"]) == 2


def test_verify_standard_method(tmp_path):
    fixture = tmp_path / "std.json"
    fixture.write_text(json.dumps({"conversations": {"*": [{"continuation": " mostly-true."}]}}))
    r = run("verify", "Some claim.", "--method", "standard", "--fixture", fixture)
    assert r.exit_code == 0, r.output
    assert json.loads(r.stdout)["verdict"]["label"] == "mostly-true"


def test_verify_without_key_or_fixture(monkeypatch):
    monkeypatch.delenv("HISS_LLM_API_KEY", raising=False)
    r = run("verify", "Some claim.")
    assert r.exit_code == 1
    assert json.loads(r.stderr.strip().splitlines()[-1])["error"] == "BackendUnavailable"


def test_batch_deterministic(tmp_path):
    a = run("batch", *RAWFC10, "--out", tmp_path / "a")
    b = run("batch", *RAWFC10, "--out", tmp_path / "b", "--jobs", "3")
    assert a.exit_code == b.exit_code == 0, a.output
    for name in ("traces.jsonl", "predictions.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert "claims 10  skipped 0  failed 0" in a.stdout


def test_batch_resume(tmp_path):
    out = tmp_path / "r"
    assert run("batch", *RAWFC10, "--out", out, "--limit", "4").exit_code == 0
    traces = out / "traces.jsonl"
    # simulate a crash mid-write
    traces.write_bytes(traces.read_bytes() + b'{"claim": {"id": "c0')
    r = run("batch", *RAWFC10, "--out", out, "--resume")
    assert r.exit_code == 0, r.output
    assert "skipped 4" in r.stdout
    full = tmp_path / "full"
    run("batch", *RAWFC10, "--out", full)
    assert traces.read_bytes() == (full / "traces.jsonl").read_bytes()
    assert (out / "predictions.jsonl").read_bytes() == (full / "predictions.jsonl").read_bytes()


def test_batch_frozen_miss_fails_one_claim(tmp_path):
    cache = json.loads((FIXTURES / "rawfc10_cache.json").read_text())
    # c01's first question is searched under the default policy
    del cache["did the city council approve a 12 percent property tax increase?"]
    path = tmp_path / "partial.json"
    path.write_text(json.dumps(cache))
    args = [a if a != "rawfc10_cache" else str(path) for a in RAWFC10]
    r = run("batch", *args, "--out", tmp_path / "o")
    assert r.exit_code == 1
    preds = [json.loads(x) for x in (tmp_path / "o" / "predictions.jsonl").read_text().splitlines()]
    failed = [p for p in preds if p["error"]]
    assert len(preds) == 10 and [p["id"] for p in failed] == ["c01"]
    assert {p["error"] for p in failed} == {"FrozenCacheMiss"}
    assert all(p["label"] for p in preds if not p["error"])


def test_ablate_grid(tmp_path):
    r = run("ablate", *RAWFC10, "--out", tmp_path, "--grid", "default", "--grid", "search=never",
            "--format", "json")
    assert r.exit_code == 0, r.output
    assert (tmp_path / "default" / "report.json").exists()
    assert (tmp_path / "search-never" / "report.json").exists()
    assert len(r.stdout.strip().splitlines()) == 2


def test_ablate_empty_grid_runs_default(tmp_path):
    r = run("ablate", *RAWFC10, "--out", tmp_path)
    assert r.exit_code == 0, r.output
    assert [p.name for p in tmp_path.iterdir()] == ["default"]
    assert (tmp_path / "default" / "report.txt").read_text().startswith("P ")


def _preds(tmp_path, name, rows):
    p = tmp_path / name
    p.write_text("".join(json.dumps({"id": i, "label": lab}) + "\n" for i, lab in rows))
    return p


RAWFC_MINI = ["--dataset", "rawfc", "--path", DATA / "rawfc_mini", "--split", "test"]


def _mini_ids():
    from hiss.datasets import load_rawfc
    return [(c.id, c.gold.value) for c in load_rawfc(DATA / "rawfc_mini", "test")]


def test_eval_all_correct(tmp_path):
    p = _preds(tmp_path, "p.jsonl", _mini_ids())
    r = run("eval", *RAWFC_MINI, "--predictions", p, "--format", "json")
    assert r.exit_code == 0, r.output
    assert json.loads(r.stdout)["macro_f1"] == 1.0


def test_eval_derived_oracle(tmp_path):
    ids = _mini_ids()
    golds = dict(ids)
    # golds true/half/false/false; predict half/half/false/true
    order = sorted(golds, key=lambda i: ["true", "half", "false"].index(golds[i]))
    preds = dict(zip(order, ["half", "half", "false", "true"]))
    p = _preds(tmp_path, "p.jsonl", preds.items())
    r = run("eval", *RAWFC_MINI, "--predictions", p, "--format", "json")
    report = json.loads(r.stdout)
    # true: P 0 R 0; half: P 1/2 R 1; false: P 1 R 1/2
    assert report["macro_p"] == pytest.approx(0.5)
    assert report["macro_r"] == pytest.approx(0.5)
    assert report["macro_f1"] == pytest.approx(0.5)


def test_eval_unknown_id(tmp_path):
    p = _preds(tmp_path, "p.jsonl", [("nope", "true")])
    r = run("eval", *RAWFC_MINI, "--predictions", p)
    assert r.exit_code == 2
    assert json.loads(r.stderr)["error"] == "UnknownId"


def test_eval_compare(tmp_path):
    ids = _mini_ids()
    a = _preds(tmp_path, "a.jsonl", ids)
    b = _preds(tmp_path, "b.jsonl", [(i, "true") for i, _ in ids])
    r = run("eval", *RAWFC_MINI, "--predictions", a, "--compare", b, "--iterations", "1000")
    assert r.exit_code == 0, r.output
    assert "permutation p" in r.output


def test_cache_commands(tmp_path):
    src = FIXTURES / "spending_cache.json"
    r = run("cache", "show", src)
    assert r.exit_code == 0 and "queries" in r.stdout
    dst = tmp_path / "n.json"
    assert run("cache", "normalize", src, dst).exit_code == 0
    assert run("cache", "show", dst).stdout == r.stdout
    merged = run("cache", "merge", "-", src, FIXTURES / "rawfc10_cache.json")
    assert merged.exit_code == 0 and json.loads(merged.stdout)
    miss = run("cache", "show", src, "--query", "no such query at all")
    assert miss.exit_code == 1


def test_demos_commands():
    r = run("demos", "list")
    assert "liar_hiss@1" in r.stdout
    shown = run("demos", "show", "liar_hiss", "--k", "2")
    assert shown.stdout.count("Q: Claim:") == 2
    sel = run("demos", "select", "--dataset", "liar", "--path", DATA / "liar_mini", "--split", "train",
              "--k", "3", "--seed", "1")
    data = json.loads(sel.stdout)
    assert data["k"] == 3 and len(data["ids"]) == 3 and data["seed"] == 1
    again = run("demos", "select", "--dataset", "liar", "--path", DATA / "liar_mini", "--split", "train",
                "--k", "3", "--seed", "1")
    assert again.stdout == sel.stdout
