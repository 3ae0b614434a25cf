"""brat standoff documents, sentence segmentation and corpus statistics."""
from __future__ import annotations

import logging
import re
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")

DEFAULT_ABBREVIATIONS = frozenset(
    {"approx", "ca", "cf", "e.g", "i.e", "al", "fig", "figs", "eq", "eqs", "ref", "refs",
     "vs", "no", "nos", "wt", "vol", "resp", "dr", "prof", "co", "ltd", "inc", "corp"}
)


class ParseError(ValueError):
    """Malformed standoff input; the message names the offending line."""


@dataclass(frozen=True)
class EntityMention:
    id: str
    label: str
    fragments: tuple[tuple[int, int], ...]
    surface: str

    @property
    def start(self) -> int:
        return self.fragments[0][0]

    @property
    def end(self) -> int:
        return self.fragments[0][1]


@dataclass(frozen=True)
class RelationInstance:
    head: int
    tail: int
    label: str


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    entities: tuple[EntityMention, ...]
    relations: tuple[RelationInstance, ...]
    sentences: tuple[tuple[int, int], ...]
    skipped_lines: int = field(default=0, compare=False)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    def entity_index(self, ann_id: str) -> int:
        for i, e in enumerate(self.entities):
            if e.id == ann_id:
                return i
        raise KeyError(ann_id)

    def sentence_of(self, entity: int) -> int:
        """Index of the sentence holding the entity's first character."""
        starts = [s for s, _ in self.sentences]
        return max(bisect_right(starts, self.entities[entity].start) - 1, 0)


def _ann_id_key(ann_id: str) -> tuple[str, int, str]:
    m = re.fullmatch(r"([A-Za-z]*)(\d+)", ann_id)
    if m:
        return (m.group(1), int(m.group(2)), "")
    return ("", -1, ann_id)


def entity_sort_key(e: EntityMention):
    return (e.start, e.end, _ann_id_key(e.id))


_FRAGMENT = re.compile(r"^(\d+) (\d+)$")


def parse_brat(text_content: str, ann_content: str, doc_id: str = "", abbreviations=DEFAULT_ABBREVIATIONS) -> Document:
    """Build a Document from a text and its ``.ann`` standoff annotations.

    Unknown record types (events, attributes, notes, equivalences) are skipped
    and counted in ``skipped_lines``.
    """
    raw_entities: list[EntityMention] = []
    raw_relations: list[tuple[int, str, str, str]] = []
    skipped = 0
    n = len(text_content)
    for lineno, line in enumerate(ann_content.splitlines(), start=1):
        if not line.strip():
            continue
        kind = line[0]
        if kind == "T":
            cols = line.split("\t")
            if len(cols) < 2:
                raise ParseError(f"{doc_id}: line {lineno}: entity line needs tab-separated fields")
            ann_id, fields = cols[0], cols[1]
            label, _, offsets = fields.partition(" ")
            if not label or not offsets:
                raise ParseError(f"{doc_id}: line {lineno}: missing label or offsets in {fields!r}")
            fragments = []
            for frag in offsets.split(";"):
                m = _FRAGMENT.match(frag.strip())
                if not m:
                    raise ParseError(f"{doc_id}: line {lineno}: malformed offsets {frag!r}")
                start, end = int(m.group(1)), int(m.group(2))
                if not 0 <= start < end <= n:
                    raise ParseError(f"{doc_id}: line {lineno}: offsets {start}-{end} outside text of length {n}")
                fragments.append((start, end))
            fragments.sort()
            for (_, e1), (s2, _) in zip(fragments, fragments[1:]):
                if s2 < e1:
                    raise ParseError(f"{doc_id}: line {lineno}: overlapping fragments")
            surface = " ".join(text_content[s:e] for s, e in fragments)
            if len(cols) > 2 and cols[2] != surface:
                logger.debug("%s: line %d: surface %r differs from text %r", doc_id, lineno, cols[2], surface)
            raw_entities.append(EntityMention(ann_id, label, tuple(fragments), surface))
        elif kind == "R":
            cols = line.split("\t")
            parts = cols[1].split() if len(cols) > 1 else []
            args = dict(p.split(":", 1) for p in parts[1:] if ":" in p)
            if not parts or "Arg1" not in args or "Arg2" not in args:
                raise ParseError(f"{doc_id}: line {lineno}: relation needs a label, Arg1 and Arg2")
            raw_relations.append((lineno, parts[0], args["Arg1"], args["Arg2"]))
        else:
            skipped += 1

    entities = sorted(raw_entities, key=entity_sort_key)
    index = {}
    for i, e in enumerate(entities):
        if e.id in index:
            raise ParseError(f"{doc_id}: duplicate entity id {e.id}")
        index[e.id] = i
    relations = []
    for lineno, label, a1, a2 in raw_relations:
        if a1 not in index or a2 not in index:
            missing = a1 if a1 not in index else a2
            raise ParseError(f"{doc_id}: line {lineno}: dangling argument {missing}")
        if a1 == a2:
            raise ParseError(f"{doc_id}: line {lineno}: relation from {a1} to itself")
        relations.append(RelationInstance(index[a1], index[a2], label))
    if skipped:
        logger.warning("%s: skipped %d unsupported annotation lines", doc_id, skipped)
    return Document(
        doc_id=doc_id,
        text=text_content,
        entities=tuple(entities),
        relations=tuple(relations),
        sentences=tuple(segment_sentences(text_content, abbreviations)),
        skipped_lines=skipped,
    )


def to_brat(doc: Document) -> str:
    """Serialize entities and relations back to standoff lines."""
    lines = []
    for e in doc.entities:
        offsets = ";".join(f"{s} {t}" for s, t in e.fragments)
        lines.append(f"{e.id}\t{e.label} {offsets}\t{e.surface}")
    for k, r in enumerate(doc.relations, start=1):
        lines.append(f"R{k}\t{r.label} Arg1:{doc.entities[r.head].id} Arg2:{doc.entities[r.tail].id}")
    return "\n".join(lines) + ("\n" if lines else "")


_TERMINATOR = re.compile(r"[.?!]+(?=\s+[A-Z0-9])")


def segment_sentences(text: str, abbreviations: Iterable[str] = DEFAULT_ABBREVIATIONS) -> list[tuple[int, int]]:
    """Split after '.', '?' or '!' when followed by whitespace and an uppercase letter or digit.

    A period closing a listed abbreviation does not end a sentence. Spans are
    half-open; gaps between spans contain only whitespace.
    """
    abbrev = {a.lower().rstrip(".") for a in abbreviations}
    spans = []
    start = 0
    for m in _TERMINATOR.finditer(text):
        if m.group() == ".":
            word = re.search(r"(\S+)$", text[start : m.start()])
            token = word.group(1).lower().lstrip("([{\"'") if word else ""
            if token in abbrev:
                continue
        end = m.end()
        spans.append((start, end))
        start = end
        while start < len(text) and text[start].isspace():
            start += 1
    spans.append((start, len(text)))
    return spans


def read_document(directory: str | Path, doc_id: str, abbreviations=DEFAULT_ABBREVIATIONS) -> Document:
    directory = Path(directory)
    text = (directory / f"{doc_id}.txt").read_text(encoding="utf-8")
    ann_path = directory / f"{doc_id}.ann"
    ann = ann_path.read_text(encoding="utf-8") if ann_path.exists() else ""
    return parse_brat(text, ann, doc_id=doc_id, abbreviations=abbreviations)


def read_manifest(path: str | Path) -> dict[str, list[str]]:
    """Parse a split manifest with ``[train]``, ``[dev]`` and ``[test]`` sections."""
    splits: dict[str, list[str]] = {s: [] for s in SPLITS}
    current = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        m = re.fullmatch(r"\[(\w+)\]", line)
        if m:
            current = m.group(1).lower()
            if current not in splits:
                raise ParseError(f"{path}: line {lineno}: unknown split [{current}]")
            continue
        if current is None:
            raise ParseError(f"{path}: line {lineno}: doc id before any [split] header")
        splits[current].append(line)
    return splits


def write_manifest(path: str | Path, splits: dict[str, Sequence[str]]) -> None:
    out = []
    for name in SPLITS:
        out.append(f"[{name}]")
        out.extend(splits.get(name, ()))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_corpus(corpus_dir: str | Path, manifest: str | Path, splits: Sequence[str] = SPLITS) -> dict[str, list[Document]]:
    ids = read_manifest(manifest)
    return {s: [read_document(corpus_dir, d) for d in ids[s]] for s in splits}


@dataclass
class CorpusStats:
    entities: dict[str, Counter]
    relations: dict[str, Counter]

    def entity_count(self, label: str, split: str) -> int:
        return self.entities.get(split, Counter())[label]

    def relation_count(self, label: str, split: str) -> int:
        return self.relations.get(split, Counter())[label]

    def format(self) -> str:
        splits = list(self.entities) or list(SPLITS)

        def block(title, table):
            labels = sorted({l for c in table.values() for l in c}, key=lambda l: (-sum(c[l] for c in table.values()), l))
            width = max([len(title)] + [len(l) for l in labels])
            rows = [f"{title:<{width}}  " + "  ".join(f"{s:>7}" for s in splits)]
            for l in labels:
                rows.append(f"{l:<{width}}  " + "  ".join(f"{table[s][l]:>7,}" for s in splits))
            return "\n".join(rows)

        return block("Entity class", self.entities) + "\n\n" + block("Relation class", self.relations)


def corpus_stats(corpus: dict[str, Sequence[Document]]) -> CorpusStats:
    ents = {s: Counter(e.label for d in docs for e in d.entities) for s, docs in corpus.items()}
    rels = {s: Counter(r.label for d in docs for r in d.relations) for s, docs in corpus.items()}
    return CorpusStats(ents, rels)
