"""Confusion matrices, macro precision/recall/F1 and a paired permutation test.

Macro F1 is the harmonic mean of macro-averaged precision and recall, not
the mean of per-class F1 scores.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import EmptyMatrix, IoFailure, LabelNotInScheme, LengthMismatch
from .model import Label, LabelScheme, make_scheme

#: prediction value for a run that produced no parseable label
ABSTAIN = None


def f1_from_pr(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if (p + r) > 0 else 0.0


def _label_value(x: Label | str | None, scheme: LabelScheme) -> str | None:
    if x is None:
        return None
    value = x.value if isinstance(x, Label) else str(x).lower()
    if value not in scheme.labels:
        raise LabelNotInScheme(f"{value!r} is not a {scheme.name} label")
    return value


@dataclass
class ConfusionMatrix:
    """Rows are gold labels, columns predicted labels, in scheme order.

    ``abstentions[g]`` counts gold-``g`` examples with no prediction; they
    are false negatives for ``g`` and false positives for no class.
    """

    scheme: LabelScheme
    counts: np.ndarray
    abstentions: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        n = len(self.scheme)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (n, n):
            raise ValueError(f"counts must be {n}x{n}")
        if self.abstentions is None:
            self.abstentions = np.zeros(n, dtype=np.int64)
        self.abstentions = np.asarray(self.abstentions, dtype=np.int64)
        if (self.counts < 0).any() or (self.abstentions < 0).any():
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum() + self.abstentions.sum())

    def gold_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1) + self.abstentions

    def pred_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def confusion(preds: Sequence[Label | str | None], golds: Sequence[Label | str],
              scheme: LabelScheme) -> ConfusionMatrix:
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(golds)} golds")
    n = len(scheme)
    counts = np.zeros((n, n), dtype=np.int64)
    abstain = np.zeros(n, dtype=np.int64)
    for p, g in zip(preds, golds):
        gv = _label_value(g, scheme)
        if gv is None:
            raise LabelNotInScheme("gold label is missing")
        pv = _label_value(p, scheme)
        if pv is None:
            abstain[scheme.index(gv)] += 1
        else:
            counts[scheme.index(gv), scheme.index(pv)] += 1
    return ConfusionMatrix(scheme, counts, abstain)


def _per_class(matrix: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray]:
    tp = np.diag(matrix.counts).astype(float)
    pred = matrix.pred_counts().astype(float)
    gold = matrix.gold_counts().astype(float)
    p = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    r = np.divide(tp, gold, out=np.zeros_like(tp), where=gold > 0)
    return p, r


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    scheme: LabelScheme
    per_class: dict[str, ClassScores]
    macro_p: float
    macro_r: float
    macro_f1: float
    n: int
    config_fingerprint: str = ""
    abstentions: list[str] = field(default_factory=list)
    counts: list[list[int]] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "scheme": self.scheme.to_dict(),
            "n": self.n,
            "macro_p": self.macro_p,
            "macro_r": self.macro_r,
            "macro_f1": self.macro_f1,
            "per_class": {k: {"precision": v.precision, "recall": v.recall, "f1": v.f1}
                          for k, v in self.per_class.items()},
            "config_fingerprint": self.config_fingerprint,
            "abstentions": list(self.abstentions),
            "counts": self.counts,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EvalReport":
        scheme = make_scheme(data["scheme"]["name"], data["scheme"]["labels"])
        return cls(
            scheme=scheme,
            per_class={k: ClassScores(v["precision"], v["recall"], v["f1"])
                       for k, v in data["per_class"].items()},
            macro_p=data["macro_p"], macro_r=data["macro_r"], macro_f1=data["macro_f1"],
            n=data["n"], config_fingerprint=data.get("config_fingerprint", ""),
            abstentions=list(data.get("abstentions", [])), counts=data.get("counts"),
        )

    def summary_line(self) -> str:
        return f"P {self.macro_p * 100:.1f}  R {self.macro_r * 100:.1f}  F1 {self.macro_f1 * 100:.1f}"


def macro_metrics(matrix: ConfusionMatrix, config_fingerprint: str = "") -> EvalReport:
    if matrix.total == 0:
        raise EmptyMatrix("no scored examples")
    p, r = _per_class(matrix)
    per_class = {
        label: ClassScores(float(p[i]), float(r[i]), f1_from_pr(float(p[i]), float(r[i])))
        for i, label in enumerate(matrix.scheme.labels)
    }
    macro_p, macro_r = float(p.mean()), float(r.mean())
    return EvalReport(matrix.scheme, per_class, macro_p, macro_r, f1_from_pr(macro_p, macro_r),
                      matrix.total, config_fingerprint, counts=matrix.counts.tolist())


# --------------------------------------------------------------------------
# significance


def _macro_f1_batch(pred_idx: np.ndarray, gold_idx: np.ndarray, n_labels: int) -> np.ndarray:
    """Macro F1 for each row of ``pred_idx`` (shape iterations x n); -1 = abstain."""
    gold_onehot = gold_idx[None, :, None] == np.arange(n_labels)[None, None, :]
    pred_onehot = pred_idx[:, :, None] == np.arange(n_labels)[None, None, :]
    tp = (gold_onehot & pred_onehot).sum(axis=1).astype(float)
    pred_n = pred_onehot.sum(axis=1).astype(float)
    gold_n = np.broadcast_to(gold_onehot.sum(axis=1), tp.shape).astype(float)
    p = np.divide(tp, pred_n, out=np.zeros_like(tp), where=pred_n > 0).mean(axis=1)
    r = np.divide(tp, gold_n, out=np.zeros_like(tp), where=gold_n > 0).mean(axis=1)
    denom = p + r
    return np.divide(2 * p * r, denom, out=np.zeros_like(p), where=denom > 0)


def _indices(values: Sequence[Label | str | None], scheme: LabelScheme) -> np.ndarray:
    out = []
    for v in values:
        lv = _label_value(v, scheme)
        out.append(-1 if lv is None else scheme.index(lv))
    return np.array(out, dtype=np.int64)


def paired_permutation_test(preds_a: Sequence, preds_b: Sequence, golds: Sequence,
                            scheme: LabelScheme, iterations: int = 10_000, seed: int = 0,
                            chunk: int = 2_000) -> float:
    """Two-sided p-value for the macro-F1 difference between two systems.

    Each permutation swaps the two systems' predictions on a random subset
    of examples. ``p = (hits + 1) / (iterations + 1)``.
    """
    if not (len(preds_a) == len(preds_b) == len(golds)):
        raise LengthMismatch("preds_a, preds_b and golds must have equal length")
    if iterations < 1000:
        raise ValueError("iterations must be >= 1000")
    a, b, g = (_indices(x, scheme) for x in (preds_a, preds_b, golds))
    k = len(scheme)
    observed = abs(_macro_f1_batch(a[None], g, k)[0] - _macro_f1_batch(b[None], g, k)[0])
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < iterations:
        m = min(chunk, iterations - done)
        swap = rng.random((m, len(g))) < 0.5
        pa = np.where(swap, b[None], a[None])
        pb = np.where(swap, a[None], b[None])
        diff = np.abs(_macro_f1_batch(pa, g, k) - _macro_f1_batch(pb, g, k))
        hits += int((diff >= observed - 1e-12).sum())
        done += m
    return (hits + 1) / (iterations + 1)


# --------------------------------------------------------------------------
# emission

REPORT_FORMATS = ("json", "csv", "text")


def render_report(report: EvalReport, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "precision", "recall", "f1"])
        for label, s in report.per_class.items():
            w.writerow([label, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f1:.4f}"])
        w.writerow(["macro", f"{report.macro_p:.4f}", f"{report.macro_r:.4f}", f"{report.macro_f1:.4f}"])
        return buf.getvalue()
    if fmt == "text":
        lines = [report.summary_line(), f"n {report.n}"]
        for label, s in report.per_class.items():
            lines.append(f"  {label:<12} P {s.precision * 100:5.1f}  R {s.recall * 100:5.1f}  "
                         f"F1 {s.f1 * 100:5.1f}")
        if report.abstentions:
            lines.append(f"abstentions {len(report.abstentions)}: {', '.join(report.abstentions)}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"format must be one of {REPORT_FORMATS}")


def emit_report(report: EvalReport, fmt: str, path: str | Path | None = None) -> str:
    """Render ``report``; write it to ``path`` when given. Returns the text."""
    text = render_report(report, fmt)
    if path is not None:
        try:
            Path(path).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot write report {path}: {exc}") from exc
    return text


def read_report(path: str | Path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
