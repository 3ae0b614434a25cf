"""Edge classifier: node encoding, relational GCN, edge encoding and classification."""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numeric as nm
from .corpus import Document
from .relgraph import EDGE_CLASSES, N_CLASSES, RELATION_LABELS, RelationGraph
from .numeric import ParamStore, Tensor

UNK = "<unk>"
ENCODER_KINDS = ("learned", "precomputed")

_TOKEN = re.compile(r"\w+|[^\w\s]")


@dataclass
class ModelConfig:
    encoder_kind: str = "learned"
    token_dim: int = 64
    label_dim: int = 16
    hidden_dim: int = 85
    gcn_layers: int = 3
    fc_out_layers: int = 4
    fc_head_tail_layers: int = 1
    dropout_rate: float = 0.46
    old_class_dim: int = 3
    dist_embed_max: int = 3
    dist_embed_dim: int = 1
    bidirectional_gcn: bool = True
    bilinear: str = "vector"
    d_max: int = 4
    learning_rate: float = 0.001
    epochs: int = 100
    min_token_freq: int = 2

    def __post_init__(self):
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"encoder_kind must be one of {ENCODER_KINDS}, got {self.encoder_kind!r}")
        if self.bilinear not in ("vector", "scalar"):
            raise ValueError(f"bilinear must be 'vector' or 'scalar', got {self.bilinear!r}")
        for name in ("token_dim", "label_dim", "hidden_dim", "fc_out_layers", "fc_head_tail_layers",
                     "old_class_dim", "dist_embed_max", "dist_embed_dim", "d_max", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.gcn_layers < 0:
            raise ValueError("gcn_layers must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def bilinear_dim(self) -> int:
        return self.hidden_dim if self.bilinear == "vector" else 1

    @property
    def edge_dim(self) -> int:
        return self.bilinear_dim + self.dist_embed_dim + self.old_class_dim

    @classmethod
    def from_dict(cls, values: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


def tokenize(text: str) -> list[tuple[str, int, int]]:
    """Word and punctuation tokens with character offsets, lower-cased."""
    return [(m.group().lower(), m.start(), m.end()) for m in _TOKEN.finditer(text)]


def build_vocab(docs: Iterable[Document], min_freq: int = 2) -> list[str]:
    counts = Counter(tok for d in docs for tok, _, _ in tokenize(d.text))
    return [UNK] + sorted(t for t, c in counts.items() if c >= min_freq)


class MissingVectorError(KeyError):
    pass


@dataclass
class NodeVectors:
    """Externally computed entity vectors, keyed by (doc_id, entity_index)."""

    dim: int
    vectors: dict[tuple[str, int], np.ndarray]

    def lookup(self, doc_id: str, index: int) -> np.ndarray:
        try:
            return self.vectors[(doc_id, index)]
        except KeyError:
            raise MissingVectorError(f"no precomputed vector for document {doc_id!r}, entity {index}") from None


def read_node_vectors(path: str | Path) -> NodeVectors:
    """JSON-lines sidecar: a ``{"dim": D}`` header, then one record per entity."""
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty sidecar")
    header = json.loads(lines[0])
    if "dim" not in header:
        raise ValueError(f"{path}: first line must be a {{\"dim\": D}} header")
    dim = int(header["dim"])
    vectors = {}
    for lineno, line in enumerate(lines[1:], start=2):
        rec = json.loads(line)
        vec = np.asarray(rec["vector"], dtype=nm.DTYPE)
        if vec.shape != (dim,):
            raise ValueError(f"{path}: line {lineno}: vector width {vec.size} != declared dim {dim}")
        vectors[(str(rec["doc_id"]), int(rec["entity_index"]))] = vec
    return NodeVectors(dim, vectors)


def write_node_vectors(path: str | Path, dim: int, records: Iterable[tuple[str, int, Sequence[float]]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"dim": dim}) + "\n")
        for doc_id, index, vector in records:
            if len(vector) != dim:
                raise ValueError(f"vector for {doc_id}/{index} has width {len(vector)}, expected {dim}")
            fh.write(json.dumps({"doc_id": doc_id, "entity_index": index, "vector": [float(v) for v in vector]}) + "\n")


@dataclass
class _DocFeatures:
    token_ids: np.ndarray
    groups: list[list[int]]
    label_ids: np.ndarray


class EdgeClassifier:
    """Parameters plus vocabularies; forward passes are pure functions of their inputs."""

    def __init__(
        self,
        config: ModelConfig,
        vocab: Sequence[str],
        entity_labels: Sequence[str],
        params: ParamStore | None = None,
        seed: int = 0,
        node_vectors: NodeVectors | None = None,
    ):
        self.config = config
        self.vocab = list(vocab)
        self.entity_labels = list(entity_labels)
        self._tok_index = {t: i for i, t in enumerate(self.vocab)}
        self._lab_index = {t: i for i, t in enumerate(self.entity_labels)}
        self.node_vectors = node_vectors
        if config.encoder_kind == "precomputed" and node_vectors is None:
            raise ValueError("encoder_kind 'precomputed' needs node vectors")
        self._features: dict[tuple[str, str], _DocFeatures] = {}
        self.params = params if params is not None else self._init_params(np.random.default_rng(seed))

    @classmethod
    def build(cls, train_docs: Sequence[Document], config: ModelConfig, seed: int = 0, node_vectors: NodeVectors | None = None) -> EdgeClassifier:
        vocab = build_vocab(train_docs, config.min_token_freq) if config.encoder_kind == "learned" else [UNK]
        labels = [UNK] + sorted({e.label for d in train_docs for e in d.entities})
        return cls(config, vocab, labels, seed=seed, node_vectors=node_vectors)

    # -- parameters ---------------------------------------------------------

    @property
    def pooled_dim(self) -> int:
        if self.config.encoder_kind == "precomputed":
            return self.node_vectors.dim
        return self.config.token_dim

    @property
    def node_dim(self) -> int:
        return self.pooled_dim + self.config.label_dim

    def relation_keys(self) -> list[str]:
        keys = list(RELATION_LABELS)
        if self.config.bidirectional_gcn:
            keys += [f"{r}~inv" for r in RELATION_LABELS]
        return keys

    def _init_params(self, rng: np.random.Generator) -> ParamStore:
        c = self.config
        store = ParamStore()

        def dense(name, fan_in, fan_out):
            store.add(f"{name}.W", nm.glorot(rng, (fan_in, fan_out), fan_in, fan_out))
            store.add(f"{name}.b", np.zeros(fan_out))

        if c.encoder_kind == "learned":
            store.add("tok_emb", rng.normal(0.0, 0.02, (len(self.vocab), c.token_dim)))
        store.add("lab_emb", rng.normal(0.0, 0.02, (len(self.entity_labels), c.label_dim)))
        width = self.node_dim
        for layer in range(c.gcn_layers):
            store.add(f"gcn.{layer}.self", nm.glorot(rng, (width, c.hidden_dim), width, c.hidden_dim))
            for key in self.relation_keys():
                store.add(f"gcn.{layer}.{key}", nm.glorot(rng, (width, c.hidden_dim), width, c.hidden_dim))
            width = c.hidden_dim
        for side in ("fc_head", "fc_tail"):
            w = width
            for k in range(c.fc_head_tail_layers):
                dense(f"{side}.{k}", w, c.hidden_dim)
                w = c.hidden_dim
        h, k = c.hidden_dim, c.bilinear_dim
        store.add("bilinear.W", nm.glorot(rng, (k, h, h), h * h, k))
        store.add("dist_emb", rng.normal(0.0, 0.02, (c.dist_embed_max, c.dist_embed_dim)))
        store.add("old_emb", rng.normal(0.0, 0.02, (N_CLASSES, c.old_class_dim)))
        w = c.edge_dim
        for k in range(c.fc_out_layers):
            out = N_CLASSES if k == c.fc_out_layers - 1 else c.hidden_dim
            dense(f"fc_out.{k}", w, out)
            w = out
        return store

    # -- features -----------------------------------------------------------

    def features(self, doc: Document) -> _DocFeatures:
        key = (doc.doc_id, doc.text)
        feats = self._features.get(key)
        if feats is None:
            feats = self._features[key] = self._compute_features(doc)
        return feats

    def _compute_features(self, doc: Document) -> _DocFeatures:
        label_ids = np.array([self._lab_index.get(e.label, 0) for e in doc.entities], dtype=np.int64)
        if self.config.encoder_kind == "precomputed":
            return _DocFeatures(np.zeros(0, dtype=np.int64), [], label_ids)
        tokens = tokenize(doc.text)
        starts = np.array([s for _, s, _ in tokens], dtype=np.int64)
        ends = np.array([e for _, _, e in tokens], dtype=np.int64)
        used: dict[int, int] = {}
        groups = []
        for idx, ent in enumerate(doc.entities):
            positions = []
            for fs, fe in ent.fragments:
                hit = np.nonzero((starts < fe) & (ends > fs))[0]
                positions.extend(int(p) for p in hit)
            if not positions:
                raise ValueError(f"{doc.doc_id}: entity {idx} ({ent.id}) covers no tokens")
            groups.append([used.setdefault(p, len(used)) for p in positions])
        order = sorted(used, key=used.get)
        token_ids = np.array([self._tok_index.get(tokens[p][0], 0) for p in order], dtype=np.int64)
        return _DocFeatures(token_ids, groups, label_ids)

    # -- forward ------------------------------------------------------------

    def encode_nodes(self, doc: Document) -> Tensor:
        """Max-pooled token vectors of each entity, concatenated with its label embedding."""
        feats = self.features(doc)
        if self.config.encoder_kind == "precomputed":
            pooled = nm.constant(np.stack([self.node_vectors.lookup(doc.doc_id, i) for i in range(doc.n_entities)]))
        else:
            tokens = nm.embedding(self.params["tok_emb"], feats.token_ids)
            pooled = nm.max_pool(tokens, feats.groups)
        return nm.concat([pooled, nm.embedding(self.params["lab_emb"], feats.label_ids)], axis=1)

    def adjacency(self, graph: RelationGraph) -> list[tuple[str, np.ndarray]]:
        """Per-class in-degree-normalised adjacency; row i aggregates messages into node i."""
        out = []
        n = graph.n_nodes
        for cls_id in range(1, N_CLASSES):
            heads, tails = np.nonzero(graph.classes == cls_id)
            if heads.size == 0:
                continue
            label = EDGE_CLASSES[cls_id]
            directions = [(label, tails, heads)]
            if self.config.bidirectional_gcn:
                directions.append((f"{label}~inv", heads, tails))
            for key, receivers, senders in directions:
                a = np.zeros((n, n))
                np.add.at(a, (receivers, senders), 1.0)
                a /= np.maximum(a.sum(axis=1, keepdims=True), 1.0)
                out.append((key, a))
        return out

    def gcn_forward(self, nodes: Tensor, graph: RelationGraph) -> Tensor:
        if graph.n_nodes != nodes.shape[0]:
            raise ValueError(f"graph has {graph.n_nodes} nodes, representations have {nodes.shape[0]}")
        if self.config.gcn_layers == 0:
            return nodes
        adj = self.adjacency(graph)
        h = nodes
        for layer in range(self.config.gcn_layers):
            terms = [nm.matmul(h, self.params[f"gcn.{layer}.self"])]
            for key, a in adj:
                terms.append(nm.matmul(nm.constant(a), nm.matmul(h, self.params[f"gcn.{layer}.{key}"])))
            h = nm.relu(nm.sum_tensors(terms))
        return h

    def _fc(self, prefix: str, x: Tensor, n_layers: int) -> Tensor:
        for k in range(n_layers):
            x = nm.affine(x, self.params[f"{prefix}.{k}.W"], self.params[f"{prefix}.{k}.b"])
            if k < n_layers - 1:
                x = nm.relu(x)
        return x

    def distance_ids(self, heads: np.ndarray, tails: np.ndarray) -> np.ndarray:
        dist = np.abs(heads - tails)
        if np.any(dist == 0):
            raise ValueError("edge encoding needs distinct head and tail")
        return np.minimum(dist, self.config.dist_embed_max) - 1

    def encode_edge(self, node_g: Tensor, graph: RelationGraph, heads, tails) -> Tensor:
        """[FC_H(h_i)^T W FC_T(h_j); distance embedding; previous-class embedding] for each pair."""
        heads = np.asarray(heads, dtype=np.int64)
        tails = np.asarray(tails, dtype=np.int64)
        n = node_g.shape[0]
        if heads.size and (heads.min() < 0 or tails.min() < 0 or heads.max() >= n or tails.max() >= n):
            raise IndexError("edge endpoint outside the graph")
        c = self.config
        h_rep = self._fc("fc_head", node_g, c.fc_head_tail_layers)
        t_rep = self._fc("fc_tail", node_g, c.fc_head_tail_layers)
        scores = nm.gather_pairs(nm.bilinear(h_rep, self.params["bilinear.W"], t_rep), heads, tails)
        dist = nm.embedding(self.params["dist_emb"], self.distance_ids(heads, tails))
        old = nm.embedding(self.params["old_emb"], graph.classes[heads, tails])
        return nm.concat([scores, dist, old], axis=1)

    def classify_logits(self, edge_rep: Tensor, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        x = nm.dropout(edge_rep, self.config.dropout_rate, train, rng)
        return self._fc("fc_out", x, self.config.fc_out_layers)

    def classify_edge(self, edge_rep: Tensor, train: bool = False, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Class probabilities and arg-max class ids for each row of ``edge_rep``."""
        probs = nm.softmax(self.classify_logits(edge_rep, train, rng)).data
        return probs, probs.argmax(axis=1)

    def pair_logits(self, nodes: Tensor, graph: RelationGraph, heads, tails, train: bool = False, rng=None) -> Tensor:
        """GCN on ``graph``, then logits for the given pairs."""
        node_g = self.gcn_forward(nodes, graph)
        return self.classify_logits(self.encode_edge(node_g, graph, heads, tails), train, rng)

    # -- persistence ----------------------------------------------------------

    def meta(self) -> dict:
        return {
            "config": asdict(self.config),
            "vocab": self.vocab,
            "entity_labels": self.entity_labels,
            "edge_classes": list(EDGE_CLASSES),
        }

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = self.meta()
        if extra:
            meta.update(extra)
        nm.save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path: str | Path, node_vectors: NodeVectors | None = None) -> tuple[EdgeClassifier, dict]:
        store, meta = nm.load_checkpoint(path)
        if meta.get("edge_classes") != list(EDGE_CLASSES):
            raise ValueError(f"{path}: checkpoint edge classes do not match this build")
        config = ModelConfig.from_dict(meta["config"])
        return cls(config, meta["vocab"], meta["entity_labels"], params=store, node_vectors=node_vectors), meta
