"""Micro precision / recall / F over relation triples."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .corpus import RelationInstance
from .relgraph import NO_RELATION, RELATION_LABELS, RelationGraph


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return prf(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self) -> float:
        return prf(self.tp, self.fp, self.fn)[1]

    @property
    def f(self) -> float:
        return prf(self.tp, self.fp, self.fn)[2]


@dataclass
class MetricsReport:
    per_class: dict[str, ClassCounts] = field(default_factory=dict)

    @property
    def overall(self) -> ClassCounts:
        return ClassCounts(
            sum(c.tp for c in self.per_class.values()),
            sum(c.fp for c in self.per_class.values()),
            sum(c.fn for c in self.per_class.values()),
        )

    @property
    def micro_f(self) -> float:
        return self.overall.f

    def rows(self) -> list[tuple[str, ClassCounts]]:
        names = list(RELATION_LABELS) + sorted(set(self.per_class) - set(RELATION_LABELS))
        return [(n, self.per_class.get(n, ClassCounts())) for n in names] + [("Overall", self.overall)]

    def merge(self, other: MetricsReport) -> MetricsReport:
        out = MetricsReport({k: ClassCounts(v.tp, v.fp, v.fn) for k, v in self.per_class.items()})
        for k, v in other.per_class.items():
            c = out.per_class.setdefault(k, ClassCounts())
            c.tp += v.tp
            c.fp += v.fp
            c.fn += v.fn
        return out


def _count(gold: set, pred: set, report: MetricsReport) -> None:
    for *_, label in gold | pred:
        report.per_class.setdefault(label, ClassCounts())
    for *_, label in gold & pred:
        report.per_class[label].tp += 1
    for *_, label in pred - gold:
        report.per_class[label].fp += 1
    for *_, label in gold - pred:
        report.per_class[label].fn += 1


def score(gold: Iterable[RelationInstance], predicted: RelationGraph) -> MetricsReport:
    """Score one document: exact (head, tail, label) matches; NoRelation is never a class."""
    report = MetricsReport()
    g = {(r.head, r.tail, r.label) for r in gold if r.label != NO_RELATION}
    p = {(r.head, r.tail, r.label) for r in predicted.edges()}
    _count(g, p, report)
    return report


def score_corpus(gold: Mapping[str, Sequence[RelationInstance]], predicted: Mapping[str, RelationGraph]) -> MetricsReport:
    """Pool counts over documents keyed by doc_id; both sides must cover the same documents."""
    if set(gold) != set(predicted):
        missing = sorted(set(gold) ^ set(predicted))
        raise ValueError(f"document ids differ between gold and predictions: {missing[:5]}")
    report = MetricsReport()
    for doc_id in sorted(gold):
        report = report.merge(score(gold[doc_id], predicted[doc_id]))
    return report


def report_table(report: MetricsReport) -> str:
    rows = report.rows()
    width = max(len("Relation"), *(len(n) for n, _ in rows))
    lines = [f"{'Relation':<{width}}  {'Prec.':>6}  {'Recall':>6}  {'F-score':>7}"]
    for name, c in rows:
        if name == "Overall":
            lines.append("-" * len(lines[0]))
        lines.append(f"{name:<{width}}  {c.precision:>6.3f}  {c.recall:>6.3f}  {c.f:>7.3f}")
    return "\n".join(lines) + "\n"


def report_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["relation", "tp", "fp", "fn", "precision", "recall", "f"])
    for name, c in report.rows():
        w.writerow([name, c.tp, c.fp, c.fn, f"{c.precision:.6f}", f"{c.recall:.6f}", f"{c.f:.6f}"])
    return buf.getvalue()
