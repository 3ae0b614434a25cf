"""Iterative close-first edge editing at inference time."""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import Document
from .model import EdgeClassifier
from .numeric import Tensor
from .relgraph import (
    EDGE_CLASSES,
    EditSchedule,
    Pair,
    RelationGraph,
    as_arrays,
    build_schedule,
    init_random_graph,
    matching_random_schedule,
)
from .rules import DictionarySet, RuleConfig, rule_extract

INIT_KINDS = ("empty", "rule", "random")
ORDER_KINDS = ("close", "random")


@dataclass(frozen=True)
class EditRecord:
    round: int
    bucket: int
    head: int
    tail: int
    before: str
    after: str


@dataclass
class EditTrace:
    doc_id: str = ""
    records: list[EditRecord] = field(default_factory=list)

    def edited_pairs(self) -> list[Pair]:
        return [(r.head, r.tail) for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(json.dumps({"doc_id": self.doc_id, **r.__dict__}) + "\n" for r in self.records)


def edit_round(bucket: Sequence[Pair], snapshot: RelationGraph, model: EdgeClassifier, nodes: Tensor) -> dict[Pair, int]:
    """Classify every pair of ``bucket`` against one frozen snapshot of the graph."""
    if not bucket:
        return {}
    heads, tails = as_arrays(bucket)
    logits = model.pair_logits(nodes, snapshot, heads, tails, train=False)
    decided = logits.data.argmax(axis=1)
    return {pair: int(c) for pair, c in zip(bucket, decided)}


def edit_graph(
    doc: Document,
    initial_graph: RelationGraph,
    model: EdgeClassifier,
    schedule: EditSchedule,
) -> tuple[RelationGraph, EditTrace]:
    """Edit every ordered pair exactly once, bucket by bucket.

    Node encodings are computed once; the GCN is rerun on the current graph
    before each bucket, and a bucket's decisions are committed together.
    """
    if schedule.n_nodes != doc.n_entities or initial_graph.n_nodes != doc.n_entities:
        raise ValueError(
            f"{doc.doc_id}: schedule ({schedule.n_nodes}) / graph ({initial_graph.n_nodes}) "
            f"do not match {doc.n_entities} entities"
        )
    graph = initial_graph.copy()
    trace = EditTrace(doc.doc_id)
    if doc.n_entities < 2:
        return graph, trace
    nodes = model.encode_nodes(doc)
    for k, bucket in enumerate(schedule.buckets):
        decisions = edit_round(bucket, graph.copy(), model, nodes)
        label = schedule.bucket_label(k)
        for (i, j), c in decisions.items():
            trace.records.append(EditRecord(k + 1, label, i, j, EDGE_CLASSES[graph.classes[i, j]], EDGE_CLASSES[c]))
        for (i, j), c in decisions.items():
            graph.classes[i, j] = c
    return graph, trace


def classify_all_pairs(doc: Document, graph: RelationGraph, model: EdgeClassifier) -> RelationGraph:
    """Single pass over all pairs against ``graph`` (no iteration)."""
    out = graph.copy()
    pairs = [(i, j) for i in range(doc.n_entities) for j in range(doc.n_entities) if i != j]
    if pairs:
        for (i, j), c in edit_round(pairs, graph, model, model.encode_nodes(doc)).items():
            out.classes[i, j] = c
    return out


def write_trace(path, traces: Iterable[EditTrace]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in traces:
            fh.write(t.to_jsonl())


def doc_seed(seed: int, doc_id: str) -> int:
    """Per-document seed, stable across runs and processes."""
    return (seed * 1_000_003 + zlib.crc32(doc_id.encode("utf-8"))) % (2**32)


def initial_graph(
    doc: Document,
    init: str,
    seed: int = 0,
    dicts: DictionarySet | None = None,
    rule_config: RuleConfig = RuleConfig(),
) -> RelationGraph:
    """Starting graph: empty, rule output, or as many random edges as the rules produce."""
    if init == "empty":
        return RelationGraph(doc.n_entities)
    if init not in INIT_KINDS:
        raise ValueError(f"unknown initial graph kind {init!r}")
    ruled = rule_extract(doc, dicts, rule_config)
    if init == "rule":
        return ruled
    return init_random_graph(doc.n_entities, ruled.n_edges(), doc_seed(seed, doc.doc_id))


def schedule_for(doc: Document, d_max: int, order: str = "close", seed: int = 0) -> EditSchedule:
    if order == "close":
        return build_schedule(doc.n_entities, d_max)
    if order == "random":
        return matching_random_schedule(doc.n_entities, d_max, doc_seed(seed, doc.doc_id) ^ 0x5EED)
    raise ValueError(f"unknown editing order {order!r}")


def edit_corpus(
    docs: Sequence[Document],
    model: EdgeClassifier,
    init: str = "empty",
    order: str = "close",
    seed: int = 0,
    dicts: DictionarySet | None = None,
    rule_config: RuleConfig = RuleConfig(),
    d_max: int | None = None,
) -> tuple[dict[str, RelationGraph], list[EditTrace]]:
    d_max = model.config.d_max if d_max is None else d_max
    graphs, traces = {}, []
    for doc in docs:
        start = initial_graph(doc, init, seed, dicts, rule_config)
        graph, trace = edit_graph(doc, start, model, schedule_for(doc, d_max, order, seed))
        graphs[doc.doc_id] = graph
        traces.append(trace)
    return graphs, traces
