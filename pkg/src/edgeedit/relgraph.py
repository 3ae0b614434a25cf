"""Relation graphs over document entities and close-first edit schedules."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import Document, RelationInstance

NO_RELATION = "NoRelation"
RELATION_LABELS = (
    "Next_Operation",
    "Recipe_Precursor",
    "Recipe_Target",
    "Participant_Material",
    "Solvent_Material",
    "Atmospheric_Material",
    "Property_Of",
    "Condition_Of",
    "Number_Of",
    "Amount_Of",
    "Descriptor_Of",
    "Brand_Of",
    "Type_Of",
    "Apparatus_Of",
    "Apparatus_Attr_Of",
    "Coref_Of",
)
EDGE_CLASSES = (NO_RELATION,) + RELATION_LABELS
CLASS_INDEX = {c: i for i, c in enumerate(EDGE_CLASSES)}
N_CLASSES = len(EDGE_CLASSES)

Pair = tuple[int, int]


def entity_distance(i: int, j: int, n_nodes: int | None = None) -> int:
    """Appearance-order distance; entities are indexed in document order."""
    if i < 0 or j < 0 or (n_nodes is not None and (i >= n_nodes or j >= n_nodes)):
        raise IndexError(f"entity index out of range: ({i}, {j})")
    return abs(i - j)


class RelationGraph:
    """Dense edge-class assignment for every ordered pair of distinct nodes."""

    __slots__ = ("n_nodes", "classes")

    def __init__(self, n_nodes: int, classes: np.ndarray | None = None):
        self.n_nodes = n_nodes
        if classes is None:
            classes = np.zeros((n_nodes, n_nodes), dtype=np.int64)
        self.classes = classes

    @classmethod
    def from_relations(cls, n_nodes: int, relations: Iterable[RelationInstance]) -> RelationGraph:
        """Gold graph; when a pair carries several labels the first one wins."""
        g = cls(n_nodes)
        for r in relations:
            if g.classes[r.head, r.tail] == 0:
                g.set(r.head, r.tail, r.label)
        return g

    @classmethod
    def gold(cls, doc: Document) -> RelationGraph:
        return cls.from_relations(doc.n_entities, doc.relations)

    def _check(self, i: int, j: int) -> None:
        if i == j:
            raise ValueError(f"self-edge ({i}, {i}) is not part of a relation graph")
        if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
            raise IndexError(f"pair ({i}, {j}) outside graph of {self.n_nodes} nodes")

    def get(self, i: int, j: int) -> str:
        self._check(i, j)
        return EDGE_CLASSES[self.classes[i, j]]

    def class_id(self, i: int, j: int) -> int:
        self._check(i, j)
        return int(self.classes[i, j])

    def set(self, i: int, j: int, label: str | int) -> None:
        self._check(i, j)
        self.classes[i, j] = label if isinstance(label, (int, np.integer)) else CLASS_INDEX[label]

    def copy(self) -> RelationGraph:
        return RelationGraph(self.n_nodes, self.classes.copy())

    def edges(self) -> list[RelationInstance]:
        """Non-NoRelation edges, row-major."""
        heads, tails = np.nonzero(self.classes)
        return [RelationInstance(int(h), int(t), EDGE_CLASSES[self.classes[h, t]]) for h, t in zip(heads, tails)]

    def n_edges(self) -> int:
        return int(np.count_nonzero(self.classes))

    def __eq__(self, other) -> bool:
        return isinstance(other, RelationGraph) and self.n_nodes == other.n_nodes and np.array_equal(self.classes, other.classes)

    def __repr__(self) -> str:
        return f"RelationGraph(n_nodes={self.n_nodes}, edges={self.n_edges()})"

    def to_json(self, doc_id: str, doc: Document | None = None) -> dict:
        out: dict = {"doc_id": doc_id, "n_nodes": self.n_nodes}
        if doc is not None:
            out["entities"] = [
                {"index": i, "id": e.id, "label": e.label, "surface": e.surface} for i, e in enumerate(doc.entities)
            ]
        out["edges"] = [{"head": r.head, "tail": r.tail, "label": r.label} for r in self.edges()]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> tuple[str, RelationGraph]:
        n = obj.get("n_nodes")
        if n is None:
            n = len(obj["entities"]) if "entities" in obj else 1 + max((max(e["head"], e["tail"]) for e in obj["edges"]), default=-1)
        g = cls(int(n))
        for e in obj["edges"]:
            if e["label"] not in CLASS_INDEX:
                raise ValueError(f"unknown edge label {e['label']!r}")
            g.set(int(e["head"]), int(e["tail"]), e["label"])
        return obj["doc_id"], g


def dump_graph(doc_id: str, graph: RelationGraph, doc: Document | None = None) -> str:
    return json.dumps(graph.to_json(doc_id, doc), indent=1, sort_keys=False) + "\n"


def pairs_at_distance(n_nodes: int, d1: int, d2: float) -> list[Pair]:
    """Ordered pairs (i, j), i != j, with d1 <= |i - j| < d2, in row-major order."""
    out = []
    for i in range(n_nodes):
        for j in range(n_nodes):
            if i != j and d1 <= abs(i - j) < d2:
                out.append((i, j))
    return out


@dataclass(frozen=True)
class EditSchedule:
    buckets: tuple[tuple[Pair, ...], ...]
    d_max: int
    n_nodes: int
    labels: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.buckets)

    def __iter__(self):
        return iter(self.buckets)

    def bucket_label(self, k: int) -> int:
        """Distance (close-first) or 1-based round number (random order) for bucket k."""
        return self.labels[k] if self.labels else k + 1


def build_schedule(n_nodes: int, d_max: int) -> EditSchedule:
    """Close-first buckets: distance 1, 2, ... and one final bucket for distance >= d_max."""
    if d_max < 1:
        raise ValueError(f"d_max must be >= 1, got {d_max}")
    if n_nodes < 2:
        return EditSchedule((), d_max, n_nodes)
    rounds = min(d_max, n_nodes - 1)
    buckets = [tuple(pairs_at_distance(n_nodes, d, d + 1)) for d in range(1, rounds)]
    buckets.append(tuple(pairs_at_distance(n_nodes, rounds, math.inf)))
    return EditSchedule(tuple(buckets), d_max, n_nodes, tuple(range(1, rounds + 1)))


def random_schedule(n_nodes: int, n_buckets: int, seed: int) -> EditSchedule:
    """All ordered pairs shuffled and cut into ``n_buckets`` near-equal buckets."""
    if n_buckets < 1:
        raise ValueError(f"n_buckets must be >= 1, got {n_buckets}")
    pairs = pairs_at_distance(n_nodes, 1, math.inf)
    order = np.random.default_rng(seed).permutation(len(pairs))
    chunks = np.array_split(order, n_buckets)
    buckets = tuple(tuple(pairs[k] for k in chunk) for chunk in chunks)
    return EditSchedule(buckets, n_buckets, n_nodes)


def matching_random_schedule(n_nodes: int, d_max: int, seed: int) -> EditSchedule:
    """Random-order schedule with as many rounds as the close-first one would have."""
    if n_nodes < 2:
        return EditSchedule((), d_max, n_nodes)
    return random_schedule(n_nodes, min(d_max, n_nodes - 1), seed)


def init_random_graph(n_nodes: int, n_edges: int, seed: int) -> RelationGraph:
    """``n_edges`` distinct random pairs with uniformly random relation classes."""
    all_pairs = pairs_at_distance(n_nodes, 1, math.inf)
    if n_edges > len(all_pairs) or n_edges < 0:
        raise ValueError(f"cannot place {n_edges} edges among {len(all_pairs)} ordered pairs")
    rng = np.random.default_rng(seed)
    g = RelationGraph(n_nodes)
    chosen = rng.choice(len(all_pairs), size=n_edges, replace=False)
    labels = rng.integers(1, N_CLASSES, size=n_edges)
    for k, c in zip(chosen, labels):
        i, j = all_pairs[k]
        g.classes[i, j] = c
    return g


def schedule_pairs(schedule: EditSchedule) -> list[Pair]:
    return [p for bucket in schedule for p in bucket]


def as_arrays(pairs: Sequence[Pair]) -> tuple[np.ndarray, np.ndarray]:
    if not pairs:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    a = np.asarray(pairs, dtype=np.int64)
    return a[:, 0], a[:, 1]
