"""``hiss`` command line: verify, batch, ablate, eval, cache, demos.

Exit status: 0 success, 1 infrastructure failure (network, keys, cache,
I/O), 2 method or parse failure. Errors are printed to stderr as one JSON
object with a stable ``error`` code.
"""

from __future__ import annotations

import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import click

from . import baselines as B
from . import prompts as P
from .backend import (
    Backend,
    HttpBackendConfig,
    HttpCompletionBackend,
    RetryingBackend,
    RetryPolicy,
    ScriptedBackend,
)
from .datasets import import_jsonl, load_liar, load_rawfc, select_demos
from .errors import ClaimFailed, HissError, LabelNotInScheme, UnknownId
from .metrics import REPORT_FORMATS, confusion, emit_report, macro_metrics, paired_permutation_test
from .model import FLAG_NO_EVIDENCE, Claim, Confidence, LabelScheme, SearchPolicy, fingerprint, get_scheme
from .protocol import RunConfig, run_hiss
from .search import (
    HttpSearchConfig,
    HttpSearchEngine,
    SearchCache,
    SearchHit,
    cache_to_json,
    export_cache,
    import_cache,
    normalize_query,
)

log = logging.getLogger("hiss")

METHODS = ("hiss", "standard", "cot", "search-cot")
ABLATIONS = ("default", "no-decompose", "no-stepwise", "search=never", "search=always")


def _fail(exc: BaseException) -> "NoReturn":  # noqa: F821
    if isinstance(exc, ClaimFailed):
        payload = {"error": exc.cause_code, "claim_id": exc.claim_id, "message": str(exc.cause)}
        code = exc.exit_code
    elif isinstance(exc, HissError):
        payload = {"error": exc.code, "message": str(exc)}
        code = exc.exit_code
    else:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        code = 1
    click.echo(json.dumps(payload), err=True)
    sys.exit(code)


# --------------------------------------------------------------------------
# settings shared by every command


def _shipped(name: str) -> Path | None:
    base = resources.files("hiss").joinpath("fixtures")
    for candidate in (name, f"{name}.json"):
        res = base.joinpath(candidate)
        if res.is_file():
            return Path(str(res))
    return None


def _is_packaged(path: Path) -> bool:
    base = Path(str(resources.files("hiss").joinpath("fixtures"))).resolve()
    return path.resolve().parent == base


def resolve_fixture(value: str, must_exist: bool = True) -> Path:
    """A path if it exists, else the name of a file shipped in ``hiss/fixtures``."""
    path = Path(value)
    if path.exists():
        return path
    shipped = _shipped(value)
    if shipped is not None:
        return shipped
    if must_exist:
        raise click.BadParameter(f"no such file or shipped fixture: {value}")
    return path


@dataclass
class Settings:
    scheme: LabelScheme
    method: str = "hiss"
    k: int = 4
    search_policy: SearchPolicy = SearchPolicy.SELF_DECIDE
    decompose: bool = True
    step_by_step: bool = True
    fixture: Path | None = None
    cache_path: Path | None = None
    freeze_cache: bool = False
    jobs: int = 1
    seed: int = 0
    prompt_asset: str | None = None
    backend_cfg: dict[str, Any] = field(default_factory=dict)
    search_cfg: dict[str, Any] = field(default_factory=dict)
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def run_config(self) -> RunConfig:
        return RunConfig(
            scheme=self.scheme, shot_count=self.k, search_policy=self.search_policy,
            decompose=self.decompose, step_by_step=self.step_by_step,
            prompt_asset=self.prompt_asset or P.default_asset(self.scheme, "hiss"))

    def make_backend(self) -> Backend:
        if self.fixture is not None:
            return ScriptedBackend.from_file(self.fixture)
        inner = HttpCompletionBackend(HttpBackendConfig.from_mapping(self.backend_cfg))
        return RetryingBackend(inner, self.retry)

    def make_cache(self) -> SearchCache:
        if self.cache_path is not None and self.cache_path.exists():
            return import_cache(self.cache_path, frozen=self.freeze_cache)
        return SearchCache(frozen=self.freeze_cache)

    def make_engine(self) -> "LazyEngine | None":
        if self.freeze_cache:
            return None
        return LazyEngine(HttpSearchConfig.from_mapping(self.search_cfg))

    def save_cache(self, cache: SearchCache) -> None:
        # shipped fixture caches are read-only
        if self.cache_path is not None and not self.freeze_cache and _shipped(str(self.cache_path)) is None \
                and not _is_packaged(self.cache_path):
            export_cache(cache, self.cache_path)


class LazyEngine:
    """Builds the live search client on first use so cached runs need no key."""

    def __init__(self, config: HttpSearchConfig):
        self.config = config
        self._engine: HttpSearchEngine | None = None
        self.calls = 0

    def search(self, query: str) -> list[SearchHit]:
        if self._engine is None:
            self._engine = HttpSearchEngine(self.config)
        self.calls += 1
        return self._engine.search(query)


def _read_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise click.BadParameter(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise click.BadParameter("config file must hold a JSON object")
    return data


def build_settings(opts: dict[str, Any]) -> Settings:
    """Config file values, overridden by any flag given on the command line."""
    cfg = _read_config(opts.get("config"))

    def pick(name: str, default: Any = None) -> Any:
        value = opts.get(name)
        if value is None:
            value = cfg.get(name, default)
        return value

    scheme = get_scheme(pick("scheme", "liar"))
    policy = pick("search_policy", SearchPolicy.SELF_DECIDE.value)
    fixture = pick("fixture")
    cache = pick("cache")
    retry = cfg.get("retry") or {}
    return Settings(
        scheme=scheme,
        method=pick("method", "hiss"),
        k=int(pick("k", 4)),
        search_policy=SearchPolicy(str(policy).replace("-", "_")),
        decompose=not (opts.get("no_decompose") or cfg.get("no_decompose", False)),
        step_by_step=not (opts.get("no_stepwise") or cfg.get("no_stepwise", False)),
        fixture=resolve_fixture(fixture) if fixture else None,
        cache_path=resolve_fixture(cache, must_exist=False) if cache else None,
        freeze_cache=bool(opts.get("freeze_cache") or cfg.get("freeze_cache", False)),
        jobs=int(pick("jobs", 1)),
        seed=int(pick("seed", 0)),
        prompt_asset=pick("prompt_asset"),
        backend_cfg=cfg.get("backend") or {},
        search_cfg=cfg.get("search") or {},
        retry=RetryPolicy(**{k: v for k, v in retry.items() if k in ("max_attempts", "backoff_base_ms")}),
    )


def common_options(fn: Callable) -> Callable:
    options = [
        click.option("--config", type=click.Path(dir_okay=False), help="JSON config file; flags override it."),
        click.option("--scheme", type=click.Choice(["liar", "rawfc"]), default=None),
        click.option("--method", type=click.Choice(METHODS), default=None),
        click.option("--k", "k", type=click.IntRange(min=0), default=None, help="Demonstrations per prompt (4)."),
        click.option("--search-policy", type=click.Choice(["self_decide", "always", "never"]), default=None),
        click.option("--no-decompose", is_flag=True, default=None),
        click.option("--no-stepwise", is_flag=True, default=None),
        click.option("--fixture", default=None, help="Scripted transcript file or shipped fixture name."),
        click.option("--cache", default=None, help="Search cache JSON file (read, and written unless frozen)."),
        click.option("--freeze-cache", is_flag=True, default=None, help="Never query live search."),
        click.option("--prompt-asset", default=None, help="Demo asset name or .txt path."),
        click.option("--jobs", type=click.IntRange(min=1), default=None),
        click.option("--seed", type=int, default=None),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def dataset_options(fn: Callable) -> Callable:
    options = [
        click.option("--dataset", type=click.Choice(["liar", "rawfc", "jsonl"]), required=True),
        click.option("--path", "data_path", type=click.Path(exists=True), required=True,
                     help="Dataset file or directory."),
        click.option("--split", type=click.Choice(["train", "val", "test"]), default="test"),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def load_dataset(name: str, path: str, split: str, scheme: LabelScheme) -> list[Claim]:
    if name == "liar":
        return load_liar(path, split)
    if name == "rawfc":
        return load_rawfc(path, split)
    return import_jsonl(path, scheme)


# --------------------------------------------------------------------------
# running one claim


@dataclass
class Outcome:
    claim_id: str
    record: dict[str, Any]
    label: str | None
    exit_code: int = 0
    error: str | None = None
    questions: int = 0
    not_confident: int = 0
    searched: int = 0
    with_evidence: int = 0


def run_one(claim: Claim, settings: Settings, config: RunConfig, backend: Backend,
            engine, cache: SearchCache) -> Outcome:
    method = settings.method
    try:
        if method == "hiss":
            trace = run_hiss(claim, config, backend, engine, cache)
            return _hiss_outcome(trace)
        kind = B.BaselineKind.parse(method)
        demos = P.load_demos(settings.prompt_asset or P.default_asset(settings.scheme, method))
        fp = fingerprint({"method": kind.value, "scheme": settings.scheme.to_dict(), "k": settings.k,
                          "backend": backend.backend_id, "asset": demos.asset_id})
        try:
            result = B.run_baseline(kind, claim, settings.scheme, backend, demos, engine, cache,
                                    settings.k, fp)
        except HissError as exc:
            raise ClaimFailed(claim.id, exc) from exc
        return Outcome(claim.id, result.to_dict(), result.verdict.label.value,
                       searched=int(kind is B.BaselineKind.SEARCH_COT))
    except ClaimFailed as exc:
        log.warning("claim %s failed: %s", claim.id, exc)
        record = exc.trace.to_dict() if exc.trace is not None else {
            "method": method, "claim": claim.to_dict(), "verdict": None}
        record["error"] = exc.cause_code
        return Outcome(claim.id, record, None, exc.exit_code, exc.cause_code)


def _hiss_outcome(trace) -> Outcome:
    steps = trace.steps()
    return Outcome(
        trace.claim.id, trace.to_dict(), trace.verdict.label.value,
        questions=len(steps),
        not_confident=sum(s.confidence is Confidence.NOT_CONFIDENT for s in steps),
        searched=sum(s.evidence is not None or FLAG_NO_EVIDENCE in s.flags for s in steps),
        with_evidence=sum(s.evidence is not None for s in steps),
    )


# --------------------------------------------------------------------------
# batch machinery


def _read_done(traces: Path) -> set[str]:
    """Claim ids already written; a torn final line is dropped."""
    if not traces.exists():
        return set()
    lines = traces.read_text(encoding="utf-8").splitlines(keepends=True)
    done, keep = set(), []
    for line in lines:
        try:
            done.add(str(json.loads(line)["claim"]["id"]))
            keep.append(line if line.endswith("\n") else line + "\n")
        except (json.JSONDecodeError, KeyError, TypeError):
            log.warning("dropping unreadable line in %s", traces)
    traces.write_text("".join(keep), encoding="utf-8")
    return done


def _rewrite_predictions(preds: Path, done: set[str]) -> None:
    if not preds.exists():
        return
    keep = []
    for line in preds.read_text(encoding="utf-8").splitlines():
        try:
            if str(json.loads(line)["id"]) in done:
                keep.append(line + "\n")
        except (json.JSONDecodeError, KeyError, TypeError):
            continue
    preds.write_text("".join(keep), encoding="utf-8")


@dataclass
class BatchSummary:
    total: int = 0
    skipped: int = 0
    failed: int = 0
    exit_code: int = 0
    questions: int = 0
    not_confident: int = 0
    searched: int = 0
    with_evidence: int = 0

    def add(self, o: Outcome) -> None:
        self.total += 1
        self.questions += o.questions
        self.not_confident += o.not_confident
        self.searched += o.searched
        self.with_evidence += o.with_evidence
        if o.error:
            self.failed += 1
            # infrastructure failures dominate method failures
            self.exit_code = 1 if 1 in (self.exit_code, o.exit_code) else max(self.exit_code, o.exit_code)

    def lines(self) -> list[str]:
        return [
            f"claims {self.total}  skipped {self.skipped}  failed {self.failed}",
            f"questions {self.questions}  not-confident {self.not_confident}  "
            f"searched {self.searched}  with-evidence {self.with_evidence}",
        ]


def run_batch(claims: list[Claim], settings: Settings, out_dir: Path, resume: bool,
              backend: Backend | None = None, cache: SearchCache | None = None,
              config: RunConfig | None = None) -> tuple[BatchSummary, list[Outcome]]:
    out_dir.mkdir(parents=True, exist_ok=True)
    traces, preds = out_dir / "traces.jsonl", out_dir / "predictions.jsonl"
    done: set[str] = set()
    if resume:
        done = _read_done(traces)
        _rewrite_predictions(preds, done)
    else:
        traces.write_text("", encoding="utf-8")
        preds.write_text("", encoding="utf-8")
    backend = backend or settings.make_backend()
    cache = cache if cache is not None else settings.make_cache()
    engine = settings.make_engine()
    config = config or settings.run_config()
    todo = [c for c in claims if c.id not in done]
    summary = BatchSummary(skipped=len(claims) - len(todo))
    outcomes = []
    work = lambda c: run_one(c, settings, config, backend, engine, cache)  # noqa: E731
    with traces.open("a", encoding="utf-8") as tf, preds.open("a", encoding="utf-8") as pf, \
            ThreadPoolExecutor(max_workers=settings.jobs) as pool:
        # map() yields in input order, so output bytes do not depend on --jobs
        for outcome in pool.map(work, todo):
            tf.write(json.dumps(outcome.record, ensure_ascii=False) + "\n")
            pf.write(json.dumps({"id": outcome.claim_id, "label": outcome.label,
                                 "error": outcome.error}) + "\n")
            tf.flush()
            pf.flush()
            summary.add(outcome)
            outcomes.append(outcome)
    settings.save_cache(cache)
    return summary, outcomes


def read_predictions(path: Path) -> dict[str, str | None]:
    out: dict[str, str | None] = {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            out[str(row["id"])] = row.get("label")
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise click.BadParameter(f"{path} line {n}: {exc}") from exc
    return out


def score(predictions: dict[str, str | None], golds: list[Claim], scheme: LabelScheme,
          fp: str = ""):
    by_id = {c.id: c for c in golds}
    unknown = [i for i in predictions if i not in by_id]
    if unknown:
        raise UnknownId(f"prediction ids not in gold data: {unknown[:5]}")
    ids = list(predictions)
    for i in ids:
        if by_id[i].gold is None:
            raise LabelNotInScheme(f"claim {i!r} has no gold label")
    matrix = confusion([predictions[i] for i in ids], [by_id[i].gold for i in ids], scheme)
    report = macro_metrics(matrix, fp)
    report.abstentions = [i for i in ids if predictions[i] is None]
    return report


# --------------------------------------------------------------------------
# commands


@click.group()
@click.option("-v", "--verbose", count=True, help="Log to stderr (-v info, -vv debug).")
def main(verbose: int) -> None:
    """Hierarchical step-by-step claim verification."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@main.command()
@click.argument("claim_text")
@click.option("--id", "claim_id", default="claim", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@common_options
def verify(claim_text: str, claim_id: str, out: str | None, **opts: Any) -> None:
    """Verify one claim and print its trace as JSON."""
    try:
        settings = build_settings(opts)
        backend = settings.make_backend()
        cache = settings.make_cache()
        claim = Claim(claim_id, claim_text)
        outcome = run_one(claim, settings, settings.run_config(), backend, settings.make_engine(), cache)
        settings.save_cache(cache)
    except HissError as exc:
        _fail(exc)
    text = json.dumps(outcome.record, ensure_ascii=False, indent=2) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)
    if outcome.error:
        click.echo(json.dumps({"error": outcome.error, "claim_id": claim_id}), err=True)
        sys.exit(outcome.exit_code)


@main.command()
@dataset_options
@click.option("--out", type=click.Path(file_okay=False), required=True,
              help="Directory for traces.jsonl and predictions.jsonl.")
@click.option("--resume", is_flag=True, help="Skip claims already in the trace file.")
@click.option("--limit", type=int, default=None, help="Only the first N claims.")
@common_options
def batch(dataset: str, data_path: str, split: str, out: str, resume: bool, limit: int | None,
          **opts: Any) -> None:
    """Run a method over a dataset split."""
    try:
        settings = build_settings(opts)
        claims = load_dataset(dataset, data_path, split, settings.scheme)[:limit]
        summary, _ = run_batch(claims, settings, Path(out), resume)
    except HissError as exc:
        _fail(exc)
    for line in summary.lines():
        click.echo(line)
    sys.exit(summary.exit_code)


@main.command()
@dataset_options
@click.option("--grid", multiple=True, type=click.Choice(ABLATIONS),
              help="Configuration to run; repeat for several. Default: default only.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--format", "fmt", type=click.Choice(REPORT_FORMATS), default="text")
@common_options
def ablate(dataset: str, data_path: str, split: str, grid: tuple[str, ...], out: str, fmt: str,
           **opts: Any) -> None:
    """Run HiSS under several ablations and report each one."""
    try:
        settings = build_settings(opts)
        settings.method = "hiss"
        claims = load_dataset(dataset, data_path, split, settings.scheme)
        cache = settings.make_cache()
        asset_id = P.load_demos(settings.run_config().prompt_asset).asset_id
        worst = 0
        for name in dict.fromkeys(grid or ("default",)):
            config = settings.run_config().ablated(name)
            target = Path(out) / name.replace("=", "-")
            # a fresh backend per configuration: scripted conversations restart
            backend = settings.make_backend()
            summary, outcomes = run_batch(claims, settings, target, False,
                                          backend=backend, cache=cache, config=config)
            preds = {o.claim_id: o.label for o in outcomes}
            report = score(preds, claims, settings.scheme, config.fingerprint(backend.backend_id, asset_id))
            emit_report(report, fmt, target / ("report.txt" if fmt == "text" else f"report.{fmt}"))
            click.echo(f"{name:<14} {report.summary_line()}  ({summary.lines()[1]})")
            worst = max(worst, summary.exit_code)
    except HissError as exc:
        _fail(exc)
    sys.exit(worst)


@main.command(name="eval")
@dataset_options
@click.option("--predictions", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--compare", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Second predictions file for a paired permutation test.")
@click.option("--iterations", type=int, default=10_000, show_default=True)
@click.option("--format", "fmt", type=click.Choice(REPORT_FORMATS), default="text")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--scheme", type=click.Choice(["liar", "rawfc"]), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--config", type=click.Path(dir_okay=False), default=None)
def eval_cmd(dataset: str, data_path: str, split: str, predictions: str, compare: str | None,
             iterations: int, fmt: str, out: str | None, scheme: str | None, seed: int,
             config: str | None) -> None:
    """Score a predictions file against gold labels."""
    try:
        cfg = _read_config(config)
        sch = get_scheme(scheme or cfg.get("scheme") or ("liar" if dataset == "liar" else "rawfc"))
        golds = load_dataset(dataset, data_path, split, sch)
        preds = read_predictions(Path(predictions))
        report = score(preds, golds, sch)
        text = emit_report(report, fmt, out)
        if out is None:
            click.echo(text, nl=False)
        if compare:
            other = read_predictions(Path(compare))
            if set(other) != set(preds):
                raise UnknownId("the two prediction files cover different claim ids")
            ids = list(preds)
            by_id = {c.id: c for c in golds}
            p = paired_permutation_test([preds[i] for i in ids], [other[i] for i in ids],
                                        [by_id[i].gold for i in ids], sch, iterations, seed)
            click.echo(f"permutation p {p:.4f}", err=out is None and fmt != "text")
    except HissError as exc:
        _fail(exc)


@main.group()
def cache() -> None:
    """Inspect and maintain search cache files."""


@cache.command("show")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--query", default=None, help="Print the hits stored for one query.")
def cache_show(path: str, query: str | None) -> None:
    try:
        c = import_cache(path)
    except HissError as exc:
        _fail(exc)
    if query is None:
        click.echo(f"{len(c)} queries, {sum(len(h) for h in c.entries.values())} hits")
        for key in sorted(c.entries):
            click.echo(f"  {len(c.entries[key]):>3}  {key}")
        return
    hits = c.get(query)
    if hits is None:
        click.echo(json.dumps({"error": "FrozenCacheMiss", "message": normalize_query(query)}), err=True)
        sys.exit(1)
    click.echo(json.dumps([h.to_dict() for h in hits], indent=2, ensure_ascii=False))


@cache.command("normalize")
@click.argument("src", type=click.Path(exists=True, dir_okay=False))
@click.argument("dst", type=click.Path(dir_okay=False))
def cache_normalize(src: str, dst: str) -> None:
    """Rewrite a cache file in canonical form (normalized keys, sorted)."""
    try:
        export_cache(import_cache(src), dst)
    except HissError as exc:
        _fail(exc)


@cache.command("merge")
@click.argument("dst", type=click.Path(dir_okay=False))
@click.argument("srcs", nargs=-1, type=click.Path(exists=True, dir_okay=False))
def cache_merge(dst: str, srcs: tuple[str, ...]) -> None:
    """Merge cache files; earlier files win on conflicting queries."""
    try:
        merged = SearchCache()
        for src in reversed(srcs):
            for key, hits in import_cache(src).entries.items():
                merged.put(key, hits)
        click.echo(cache_to_json(merged), nl=False) if dst == "-" else export_cache(merged, dst)
    except HissError as exc:
        _fail(exc)


@main.group()
def demos() -> None:
    """Shipped demonstration assets."""


@demos.command("list")
def demos_list() -> None:
    base = resources.files("hiss").joinpath("assets")
    for res in sorted(base.iterdir(), key=lambda r: r.name):
        if res.name.endswith(".txt"):
            d = P.load_demos(res.name[:-4])
            click.echo(f"{d.asset_id:<22} {len(d)} demos")


@demos.command("show")
@click.argument("name")
@click.option("--k", "k", type=click.IntRange(min=0), default=4, show_default=True)
def demos_show(name: str, k: int) -> None:
    try:
        click.echo(P.load_demos(name).render(k))
    except FileNotFoundError as exc:
        raise click.BadParameter(str(exc)) from None
    except HissError as exc:
        _fail(exc)


@demos.command("select")
@dataset_options
@click.option("--k", "k", type=click.IntRange(min=0), default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--scheme", type=click.Choice(["liar", "rawfc"]), default=None)
def demos_select(dataset: str, data_path: str, split: str, k: int, seed: int, scheme: str | None) -> None:
    """Sample demonstration claims from a training split and print the provenance."""
    try:
        sch = get_scheme(scheme or ("liar" if dataset == "liar" else "rawfc"))
        pool = load_dataset(dataset, data_path, split, sch)
        sel = select_demos(pool, k, seed)
    except HissError as exc:
        _fail(exc)
    record = {**sel.provenance(), "dataset": dataset, "split": split,
              "claims": [c.to_dict() for c in sel.claims]}
    click.echo(json.dumps(record, indent=2, ensure_ascii=False))


if __name__ == "__main__":  # pragma: no cover
    main()
