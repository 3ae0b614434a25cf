"""Log-likelihood training of the edge classifier with teacher-forced edit views."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numeric as nm
from .corpus import Document
from .editor import edit_corpus, initial_graph, schedule_for
from .metrics import MetricsReport, score_corpus
from .model import EdgeClassifier, ModelConfig, NodeVectors
from .numeric import Tensor
from .relgraph import EditSchedule, RelationGraph, as_arrays
from .rules import DictionarySet, RuleConfig

logger = logging.getLogger(__name__)

EXPOSURES = ("gold", "self")


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.001
    seed: int = 0
    init: str = "empty"
    exposure: str = "gold"
    order: str = "close"
    shuffle: bool = True
    eval_every: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.exposure not in EXPOSURES:
            raise ValueError(f"exposure must be one of {EXPOSURES}, got {self.exposure!r}")


@dataclass
class View:
    graph: RelationGraph
    heads: np.ndarray
    tails: np.ndarray
    targets: np.ndarray


def build_training_views(doc: Document, initial: RelationGraph, schedule: EditSchedule) -> list[View]:
    """One view per bucket: gold classes on earlier buckets, initial classes elsewhere."""
    gold = RelationGraph.gold(doc)
    current = initial.copy()
    views = []
    for bucket in schedule.buckets:
        if not bucket:
            continue
        heads, tails = as_arrays(bucket)
        views.append(View(current.copy(), heads, tails, gold.classes[heads, tails].copy()))
        current.classes[heads, tails] = gold.classes[heads, tails]
    return views


def views_loss(model: EdgeClassifier, doc: Document, views: Sequence[View], train: bool, rng=None) -> Tensor:
    """Summed NLL of the gold classes over every view's pairs."""
    nodes = model.encode_nodes(doc)
    losses = []
    for v in views:
        logits = model.pair_logits(nodes, v.graph, v.heads, v.tails, train=train, rng=rng)
        losses.append(nm.nll_loss(nm.log_softmax(logits), v.targets, reduction="sum"))
    return nm.sum_tensors(losses)


def self_exposure_loss(model: EdgeClassifier, doc: Document, initial: RelationGraph, schedule: EditSchedule, rng) -> Tensor:
    """Earlier buckets carry the model's own (gradient-free) predictions instead of gold."""
    gold = RelationGraph.gold(doc)
    nodes = model.encode_nodes(doc)
    frozen = nm.constant(nodes.data)
    current = initial.copy()
    losses = []
    for bucket in schedule.buckets:
        if not bucket:
            continue
        heads, tails = as_arrays(bucket)
        logits = model.pair_logits(nodes, current, heads, tails, train=True, rng=rng)
        losses.append(nm.nll_loss(nm.log_softmax(logits), gold.classes[heads, tails], reduction="sum"))
        predicted = model.pair_logits(frozen, current, heads, tails).data.argmax(axis=1)
        current = current.copy()
        current.classes[heads, tails] = predicted
    return nm.sum_tensors(losses)


@dataclass
class EpochLog:
    epoch: int
    train_nll: float
    dev_micro_f: float
    dev_nll: float
    seconds: float


@dataclass
class TrainResult:
    model: EdgeClassifier
    history: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_f: float = float("nan")


def evaluate(
    model: EdgeClassifier,
    docs: Sequence[Document],
    init: str,
    order: str = "close",
    seed: int = 0,
    dicts: DictionarySet | None = None,
    rule_config: RuleConfig = RuleConfig(),
) -> MetricsReport:
    graphs, _ = edit_corpus(docs, model, init, order, seed, dicts, rule_config)
    return score_corpus({d.doc_id: d.relations for d in docs}, graphs)


def write_log(path: str | Path, history: Sequence[EpochLog]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_nll", "dev_micro_f", "seconds"])
        for h in history:
            w.writerow([h.epoch, f"{h.train_nll:.6f}", f"{h.dev_micro_f:.6f}", f"{h.seconds:.3f}"])


def _snapshot(model: EdgeClassifier) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in model.params.items()}


def train(
    train_docs: Sequence[Document],
    dev_docs: Sequence[Document],
    model_config: ModelConfig,
    config: TrainConfig,
    dicts: DictionarySet | None = None,
    rule_config: RuleConfig = RuleConfig(),
    node_vectors: NodeVectors | None = None,
    out_dir: str | Path | None = None,
    on_epoch: Callable[[int, EdgeClassifier, EpochLog], bool] | None = None,
) -> TrainResult:
    """Adam on per-document mean NLL, one document per step; keeps the best-dev parameters.

    ``on_epoch`` may return True to stop early.
    """
    docs = [d for d in train_docs if d.n_entities >= 2]
    if not docs:
        raise ValueError("training split has no document with at least two entities")
    model = EdgeClassifier.build(docs, model_config, seed=config.seed, node_vectors=node_vectors)
    rng = np.random.default_rng(config.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def prepare(doc):
        start = initial_graph(doc, config.init, config.seed, dicts, rule_config)
        return start, schedule_for(doc, model_config.d_max, config.order, config.seed)

    prepared = [prepare(d) for d in docs]
    gold_views = [build_training_views(d, s, sch) for d, (s, sch) in zip(docs, prepared)] if config.exposure == "gold" else None
    dev = [d for d in dev_docs if d.n_entities >= 2]
    dev_views = [build_training_views(d, *prepare(d)) for d in dev]

    result = TrainResult(model)
    best_key = None
    best_params = None
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(docs)) if config.shuffle else np.arange(len(docs))
        total_nll, total_pairs = 0.0, 0
        for k in order:
            doc = docs[k]
            if gold_views is not None:
                loss = views_loss(model, doc, gold_views[k], train=True, rng=rng)
            else:
                loss = self_exposure_loss(model, doc, prepared[k][0], prepared[k][1], rng)
            n_pairs = doc.n_entities * (doc.n_entities - 1)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value} at epoch {epoch}, document {doc.doc_id}")
            model.params.zero_grad()
            nm.scale(loss, 1.0 / n_pairs).backward()
            nm.adam_step(model.params, config.learning_rate)
            total_nll += value
            total_pairs += n_pairs
        train_nll = total_nll / max(total_pairs, 1)

        dev_f, dev_nll = float("nan"), float("nan")
        if dev and (epoch % config.eval_every == 0 or epoch == config.epochs):
            dev_f = evaluate(model, dev, config.init, config.order, config.seed, dicts, rule_config).micro_f
            dev_nll = sum(views_loss(model, d, v, train=False).item() for d, v in zip(dev, dev_views)) / sum(
                d.n_entities * (d.n_entities - 1) for d in dev
            )
        log = EpochLog(epoch, train_nll, dev_f, dev_nll, time.perf_counter() - t0)
        result.history.append(log)
        logger.info("epoch %d train_nll %.4f dev_f %.4f", epoch, train_nll, dev_f)

        if not math.isnan(dev_f):
            key = (dev_f, -dev_nll)
            if best_key is None or key > best_key:
                best_key, best_params = key, _snapshot(model)
                result.best_epoch, result.best_dev_f = epoch, dev_f
                if out is not None:
                    model.save(out / "best.npz", {"epoch": epoch, "train": config.__dict__})
        if out is not None:
            write_log(out / "train_log.csv", result.history)
            if config.checkpoint_every and epoch % config.checkpoint_every == 0:
                model.save(out / f"epoch{epoch:03d}.npz", {"epoch": epoch, "train": config.__dict__})
        if on_epoch is not None and on_epoch(epoch, model, log):
            break

    if out is not None:
        model.save(out / "last.npz", {"epoch": result.history[-1].epoch, "train": config.__dict__})
    if best_params is not None:
        for name, values in best_params.items():
            model.params[name].data = values
    else:
        result.best_epoch = result.history[-1].epoch
        if out is not None:
            model.save(out / "best.npz", {"epoch": result.best_epoch, "train": config.__dict__})
    return result
