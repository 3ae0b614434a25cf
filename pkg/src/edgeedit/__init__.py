"""Relation graphs over gold entities: rule extraction and iterative edge editing."""

from .corpus import Document, EntityMention, RelationInstance, parse_brat, segment_sentences
from .relgraph import EDGE_CLASSES, NO_RELATION, RELATION_LABELS, RelationGraph, build_schedule

__version__ = "0.1.0"

__all__ = [
    "Document",
    "EntityMention",
    "RelationInstance",
    "parse_brat",
    "segment_sentences",
    "RelationGraph",
    "build_schedule",
    "EDGE_CLASSES",
    "NO_RELATION",
    "RELATION_LABELS",
]
