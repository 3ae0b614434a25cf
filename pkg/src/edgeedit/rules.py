"""Deterministic rule-based relation extractor.

Three families: Operation chaining, Operation/Material linking driven by
three material dictionaries, and nearest-entity rules for the attribute
relations. "Nearest" is the smallest appearance-order distance; ties go to
the preceding entity.
"""
from __future__ import annotations

import re
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Collection, Iterable

from .corpus import Document
from .relgraph import RelationGraph

DICT_NAMES = ("solvent", "atmospheric", "participant")

MATERIALS = ("Material", "Nonrecipe-Material")
APPARATUS = ("Synthesis-Apparatus", "Characterization-Apparatus")


def normalize_surface(surface: str) -> str:
    return " ".join(surface.casefold().split())


@dataclass(frozen=True)
class DictionarySet:
    solvent: frozenset[str] = frozenset()
    atmospheric: frozenset[str] = frozenset()
    participant: frozenset[str] = frozenset()

    @classmethod
    def from_entries(cls, **entries: Iterable[str]) -> DictionarySet:
        return cls(**{k: frozenset(normalize_surface(s) for s in v if s.strip()) for k, v in entries.items()})

    @classmethod
    def load(cls, directory: str | Path) -> DictionarySet:
        directory = Path(directory)
        return cls.from_entries(**{name: read_dictionary(directory / f"{name}.dict") for name in DICT_NAMES})

    @classmethod
    def shipped(cls) -> DictionarySet:
        return _shipped()

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in DICT_NAMES:
            entries = sorted(getattr(self, name))
            (directory / f"{name}.dict").write_text("".join(f"{e}\n" for e in entries), encoding="utf-8")


@lru_cache(maxsize=1)
def _shipped() -> DictionarySet:
    root = resources.files("edgeedit") / "dicts"
    return DictionarySet.from_entries(
        **{name: _dict_lines((root / f"{name}.dict").read_text(encoding="utf-8")) for name in DICT_NAMES}
    )


def _dict_lines(content: str) -> list[str]:
    lines = (line.strip() for line in content.splitlines())
    return [line for line in lines if line and not line.startswith("#")]


def read_dictionary(path: str | Path) -> list[str]:
    """One surface form per line; lines starting with '#' are comments."""
    return _dict_lines(Path(path).read_text(encoding="utf-8"))


def match_dictionary(surface: str, entries: Collection[str]) -> bool:
    return normalize_surface(surface) in entries


@dataclass(frozen=True)
class RuleConfig:
    # labels listed here are emitted tail -> head instead of the documented direction
    flip: frozenset[str] = frozenset()
    number_units: tuple[str, ...] = ("Property-Unit", "Condition-Unit", "Apparatus-Unit")


@dataclass
class _Context:
    doc: Document
    labels: list[str]
    sent_lo: list[int] = field(default_factory=list)
    sent_hi: list[int] = field(default_factory=list)

    @classmethod
    def build(cls, doc: Document) -> _Context:
        ctx = cls(doc, [e.label for e in doc.entities])
        starts = [s for s, _ in doc.sentences]
        sent = [max(bisect_right(starts, e.start) - 1, 0) for e in doc.entities]
        # entities are in document order, so each sentence owns a contiguous index range
        lo: dict[int, int] = {}
        hi: dict[int, int] = {}
        for i, s in enumerate(sent):
            lo.setdefault(s, i)
            hi[s] = i + 1
        ctx.sent_lo = [lo[s] for s in sent]
        ctx.sent_hi = [hi[s] for s in sent]
        return ctx

    def nearest(self, i: int, targets: Collection[str], *, in_sentence: bool = True, direction: str = "any") -> int | None:
        """Closest entity with a label in ``targets``; ``direction`` is any/before/after/prefer_before."""
        lo, hi = (self.sent_lo[i], self.sent_hi[i]) if in_sentence else (0, len(self.labels))
        before = next((k for k in range(i - 1, lo - 1, -1) if self.labels[k] in targets), None)
        after = next((k for k in range(i + 1, hi) if self.labels[k] in targets), None)
        if direction == "before":
            return before
        if direction == "after":
            return after
        if direction == "prefer_before":
            return before if before is not None else after
        if before is None:
            return after
        if after is None:
            return before
        return before if i - before <= after - i else after


def link_next_operation(ctx: _Context) -> list[tuple[int, int, str]]:
    ops = [i for i, lab in enumerate(ctx.labels) if lab == "Operation"]
    return [(a, b, "Next_Operation") for a, b in zip(ops, ops[1:])]


def link_operation_material(ctx: _Context, dicts: DictionarySet) -> list[tuple[int, int, str]]:
    edges = []
    for i, lab in enumerate(ctx.labels):
        if lab != "Material":
            continue
        surface = ctx.doc.entities[i].surface
        for name, label in (("solvent", "Solvent_Material"), ("atmospheric", "Atmospheric_Material"), ("participant", "Participant_Material")):
            if match_dictionary(surface, getattr(dicts, name)):
                op = ctx.nearest(i, ("Operation",))
                if op is not None:
                    edges.append((op, i, label))
                break
        else:
            op = ctx.nearest(i, ("Operation",), in_sentence=False)
            if op is not None:
                edges.append((i, op, "Recipe_Precursor"))
    return edges


# head label -> (relation, tail labels, search kwargs)
_ATTRIBUTE_RULES: dict[str, tuple[str, tuple[str, ...], dict]] = {
    "Property-Unit": ("Property_Of", ("Material",), {}),
    "Property-Misc": ("Property_Of", MATERIALS, {}),
    "Condition-Unit": ("Condition_Of", ("Operation",), {}),
    "Condition-Misc": ("Condition_Of", ("Operation",), {}),
    "Amount-Unit": ("Amount_Of", MATERIALS, {}),
    "Amount-Misc": ("Amount_Of", MATERIALS, {}),
    "Material-Descriptor": ("Descriptor_Of", MATERIALS, {}),
    "Apparatus-Descriptor": ("Descriptor_Of", ("Synthesis-Apparatus",), {}),
    "Property-Type": ("Type_Of", ("Property-Unit",), {}),
    "Apparatus-Property-Type": ("Type_Of", ("Apparatus-Unit",), {}),
    "Condition-Type": ("Type_Of", ("Condition-Unit",), {"direction": "before"}),
    "Brand": ("Brand_Of", MATERIALS + APPARATUS, {}),
}


def link_attribute_relations(ctx: _Context, config: RuleConfig = RuleConfig()) -> list[tuple[int, int, str]]:
    edges = []
    for i, lab in enumerate(ctx.labels):
        if lab == "Number":
            target = ctx.nearest(i, config.number_units, direction="after")
            if target is not None:
                edges.append((i, target, "Number_Of"))
        elif lab in APPARATUS:
            op = ctx.nearest(i, ("Operation",), direction="prefer_before")
            if op is not None:
                edges.append((i, op, "Apparatus_Of"))
        elif lab == "Apparatus-Unit":
            target = ctx.nearest(i, APPARATUS, in_sentence=False)
            if target is not None:
                edges.append((i, target, "Apparatus_Attr_Of"))
        if lab in _ATTRIBUTE_RULES:
            relation, tails, kwargs = _ATTRIBUTE_RULES[lab]
            target = ctx.nearest(i, tails, **kwargs)
            if target is not None:
                edges.append((i, target, relation))
    return edges


def rule_extract(doc: Document, dicts: DictionarySet | None = None, config: RuleConfig = RuleConfig()) -> RelationGraph:
    """Relation graph produced by the rule families; never emits Recipe_Target or Coref_Of."""
    dicts = DictionarySet.shipped() if dicts is None else dicts
    graph = RelationGraph(doc.n_entities)
    if doc.n_entities < 2:
        return graph
    ctx = _Context.build(doc)
    edges = link_next_operation(ctx) + link_operation_material(ctx, dicts) + link_attribute_relations(ctx, config)
    for head, tail, label in edges:
        if label in config.flip:
            head, tail = tail, head
        graph.set(head, tail, label)
    return graph


def build_dictionaries(docs: Iterable[Document]) -> DictionarySet:
    """Collect Material surfaces attached by the three dictionary-driven labels in gold data."""
    found: dict[str, set[str]] = {name: set() for name in DICT_NAMES}
    by_label = {"Solvent_Material": "solvent", "Atmospheric_Material": "atmospheric", "Participant_Material": "participant"}
    for doc in docs:
        for r in doc.relations:
            name = by_label.get(r.label)
            if name is None:
                continue
            for idx in (r.head, r.tail):
                e = doc.entities[idx]
                if e.label == "Material":
                    found[name].add(normalize_surface(e.surface))
    return DictionarySet.from_entries(**found)


def parse_flip(values: Iterable[str]) -> frozenset[str]:
    return frozenset(v for part in values for v in re.split(r"[,\s]+", part) if v)
