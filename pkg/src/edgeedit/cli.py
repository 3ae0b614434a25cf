"""Command-line entry point: ``edgeedit <command> [flags]``."""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

from .corpus import SPLITS, Document, ParseError, corpus_stats, load_corpus
from .editor import INIT_KINDS, ORDER_KINDS, EditTrace, edit_graph, initial_graph, schedule_for, write_trace
from .metrics import MetricsReport, report_csv, report_table, score_corpus
from .model import EdgeClassifier, MissingVectorError, ModelConfig, NodeVectors, read_node_vectors
from .relgraph import RelationGraph, dump_graph
from .rules import DictionarySet, RuleConfig, build_dictionaries, parse_flip, rule_extract
from .training import EXPOSURES, NumericError, TrainConfig, train

logger = logging.getLogger("edgeedit")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

MODEL_KEYS = {f.name for f in fields(ModelConfig)}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    corpus: str | None = None
    manifest: str | None = None
    dicts: str | None = None
    init: str = "empty"
    order: str = "close"
    seed: int = 0
    jobs: int = 1
    out: str | None = None
    exposure: str = "gold"
    vectors: str | None = None
    flip_direction: list[str] = field(default_factory=list)
    model: ModelConfig = field(default_factory=ModelConfig)

    def rule_config(self) -> RuleConfig:
        return RuleConfig(flip=parse_flip(self.flip_direction))

    def dictionaries(self) -> DictionarySet:
        return DictionarySet.load(self.dicts) if self.dicts else DictionarySet.shipped()

    def node_vectors(self) -> NodeVectors | None:
        return read_node_vectors(self.vectors) if self.vectors else None

    def out_dir(self) -> Path:
        if not self.out:
            raise UsageError("--out is required for this command")
        path = Path(self.out)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def load(self, splits: Sequence[str]) -> dict[str, list[Document]]:
        if not self.corpus or not self.manifest:
            raise UsageError("--corpus and --manifest are required")
        if not Path(self.manifest).is_file():
            raise DataError(f"manifest not found: {self.manifest}")
        return load_corpus(self.corpus, self.manifest, splits)


def _coerce(raw: str, like):
    if isinstance(like, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"not a boolean: {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def read_config_file(path: str) -> dict[str, str]:
    """Flat key/value pairs from an INI file; section names are ignored."""
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise UsageError(f"config file not found: {path}")
    values = dict(parser.defaults())
    for section in parser.sections():
        values.update(parser.items(section))
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    run = RunConfig()
    model_values = asdict(run.model)
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    run_keys = {f.name for f in fields(RunConfig)} - {"model", "flip_direction"}
    try:
        for key, raw in file_values.items():
            key = key.replace("-", "_")
            if key in MODEL_KEYS:
                model_values[key] = _coerce(raw, model_values[key])
            elif key in run_keys:
                default = getattr(run, key)
                setattr(run, key, _coerce(raw, default) if default is not None else raw)
            elif key == "flip_direction":
                run.flip_direction = [raw]
            else:
                raise UsageError(f"{args.config}: unknown key {key!r}")
    except ValueError as exc:
        raise UsageError(f"{args.config}: {exc}") from None

    flag_to_model = {"dmax": "d_max", "gcn_layers": "gcn_layers", "epochs": "epochs", "lr": "learning_rate", "encoder": "encoder_kind"}
    for flag, key in flag_to_model.items():
        value = getattr(args, flag, None)
        if value is not None:
            model_values[key] = value
    for key in run_keys:
        value = getattr(args, key, None)
        if value is not None:
            setattr(run, key, value)
    if getattr(args, "flip_direction", None):
        run.flip_direction = list(args.flip_direction)
    try:
        run.model = ModelConfig(**model_values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if run.init not in INIT_KINDS:
        raise UsageError(f"init must be one of {INIT_KINDS}")
    if run.order not in ORDER_KINDS:
        raise UsageError(f"order must be one of {ORDER_KINDS}")
    if run.exposure not in EXPOSURES:
        raise UsageError(f"exposure must be one of {EXPOSURES}")
    if run.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return run


# -- parallel map -----------------------------------------------------------

_WORKER: dict = {}


def _parallel_map(fn: Callable, items: Sequence, jobs: int, initializer=None, initargs=()) -> list:
    """Order-preserving map; runs inline when ``jobs == 1``."""
    if jobs == 1 or len(items) < 2:
        if initializer is not None:
            initializer(*initargs)
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs, initializer=initializer, initargs=initargs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _init_rules(dicts: DictionarySet, rule_config: RuleConfig) -> None:
    _WORKER["dicts"], _WORKER["rule_config"] = dicts, rule_config


def _rule_one(doc: Document) -> RelationGraph:
    return rule_extract(doc, _WORKER["dicts"], _WORKER["rule_config"])


def _init_editor(checkpoint: str, vectors: str | None, run: RunConfig) -> None:
    nv = read_node_vectors(vectors) if vectors else None
    model, _ = EdgeClassifier.load(checkpoint, node_vectors=nv)
    _WORKER.update(model=model, run=run, dicts=run.dictionaries(), rule_config=run.rule_config())


def _edit_one(doc: Document) -> tuple[RelationGraph, EditTrace]:
    run: RunConfig = _WORKER["run"]
    model: EdgeClassifier = _WORKER["model"]
    start = initial_graph(doc, run.init, run.seed, _WORKER["dicts"], _WORKER["rule_config"])
    return edit_graph(doc, start, model, schedule_for(doc, run.model.d_max, run.order, run.seed))


# -- outputs ----------------------------------------------------------------


def write_graphs(directory: Path, docs: Sequence[Document], graphs: Sequence[RelationGraph]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for doc, graph in zip(docs, graphs):
        (directory / f"{doc.doc_id}.json").write_text(dump_graph(doc.doc_id, graph, doc), encoding="utf-8")


def read_graphs(directory: Path) -> dict[str, RelationGraph]:
    out = {}
    for path in sorted(directory.glob("*.json")):
        try:
            doc_id, graph = RelationGraph.from_json(json.loads(path.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise DataError(f"{path}: {exc}") from None
        out[doc_id] = graph
    return out


def write_metrics(directory: Path | None, report: MetricsReport) -> None:
    table = report_table(report)
    sys.stdout.write(table)
    if directory is not None:
        (directory / "metrics.txt").write_text(table, encoding="utf-8")
        (directory / "metrics.csv").write_text(report_csv(report), encoding="utf-8")


def _gold(docs: Sequence[Document]):
    return {d.doc_id: d.relations for d in docs}


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def graph_to_dot(obj: dict) -> str:
    """DOT rendering of one graph JSON object; nodes in index order, edges row-major."""
    doc_id, graph = RelationGraph.from_json(obj)
    entities = {int(e["index"]): e for e in obj.get("entities", [])}
    lines = [f"digraph {_quote(doc_id)} {{", "  node [shape=box];"]
    for i in range(graph.n_nodes):
        e = entities.get(i)
        label = f"{e['surface']}\n({e['label']})" if e else f"#{i}"
        lines.append(f"  n{i} [label={_quote(label)}];")
    for r in graph.edges():
        lines.append(f"  n{r.head} -> n{r.tail} [label={_quote(r.label)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


# -- commands ---------------------------------------------------------------


def cmd_stats(args, run: RunConfig) -> int:
    splits = [args.split] if args.split else list(SPLITS)
    table = corpus_stats(run.load(splits)).format() + "\n"
    sys.stdout.write(table)
    if run.out:
        (run.out_dir() / "stats.txt").write_text(table, encoding="utf-8")
    return 0


def cmd_rule_extract(args, run: RunConfig) -> int:
    docs = run.load([args.split])[args.split]
    graphs = _parallel_map(_rule_one, docs, run.jobs, _init_rules, (run.dictionaries(), run.rule_config()))
    out = run.out_dir() if run.out else None
    if out is not None:
        write_graphs(out / "graphs", docs, graphs)
    write_metrics(out, score_corpus(_gold(docs), {d.doc_id: g for d, g in zip(docs, graphs)}))
    return 0


def cmd_train(args, run: RunConfig) -> int:
    corpus = run.load(["train", "dev"])
    out = run.out_dir()
    tconf = TrainConfig(
        epochs=run.model.epochs,
        learning_rate=run.model.learning_rate,
        seed=run.seed,
        init=run.init,
        exposure=run.exposure,
        order=run.order,
        checkpoint_every=args.checkpoint_every,
    )
    (out / "run_config.json").write_text(
        json.dumps({"model": asdict(run.model), "train": asdict(tconf)}, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    result = train(
        corpus["train"], corpus["dev"], run.model, tconf, run.dictionaries(), run.rule_config(), run.node_vectors(), out
    )
    print(f"best epoch {result.best_epoch}, dev micro-F {result.best_dev_f:.4f}; checkpoint {out / 'best.npz'}")
    return 0


def cmd_edit(args, run: RunConfig) -> int:
    docs = run.load([args.split])[args.split]
    checkpoint = args.checkpoint or (str(Path(run.out) / "best.npz") if run.out else None)
    if not checkpoint or not Path(checkpoint).is_file():
        raise DataError(f"checkpoint not found: {checkpoint}")
    if args.dmax is None:
        _, meta = EdgeClassifier.load(checkpoint)
        run.model.d_max = int(meta["config"]["d_max"])
    results = _parallel_map(_edit_one, docs, run.jobs, _init_editor, (checkpoint, run.vectors, run))
    graphs = [g for g, _ in results]
    out = run.out_dir() if run.out else None
    if out is not None:
        write_graphs(out / "graphs", docs, graphs)
        write_trace(out / "trace.jsonl", [t for _, t in results])
    write_metrics(out, score_corpus(_gold(docs), {d.doc_id: g for d, g in zip(docs, graphs)}))
    return 0


def cmd_eval(args, run: RunConfig) -> int:
    docs = run.load([args.split])[args.split]
    predicted = read_graphs(Path(args.graphs))
    missing = sorted({d.doc_id for d in docs} - set(predicted))
    if missing:
        raise DataError(f"no predicted graph for {len(missing)} document(s), e.g. {missing[0]}")
    write_metrics(run.out_dir() if run.out else None, score_corpus(_gold(docs), {d.doc_id: predicted[d.doc_id] for d in docs}))
    return 0


def cmd_export_dot(args, run: RunConfig) -> int:
    paths = [Path(p) for p in args.graphs]
    expanded = []
    for p in paths:
        expanded.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    out = run.out_dir() if run.out else None
    for path in expanded:
        try:
            dot = graph_to_dot(json.loads(path.read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise DataError(f"{path}: {exc}") from None
        if out is None:
            sys.stdout.write(dot)
        else:
            (out / f"{path.stem}.dot").write_text(dot, encoding="utf-8")
    return 0


def cmd_build_dicts(args, run: RunConfig) -> int:
    docs = run.load(["train"])["train"]
    dicts = build_dictionaries(docs)
    out = run.out_dir()
    dicts.save(out)
    print(f"solvent {len(dicts.solvent)}, atmospheric {len(dicts.atmospheric)}, participant {len(dicts.participant)} -> {out}")
    return 0


# -- argument parsing -------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file of key = value settings; flags override it")
    common.add_argument("--corpus", help="directory holding <doc_id>.txt / <doc_id>.ann")
    common.add_argument("--manifest", help="split manifest with [train]/[dev]/[test] sections")
    common.add_argument("--dicts", help="directory with solvent.dict, atmospheric.dict, participant.dict")
    common.add_argument("--init", choices=INIT_KINDS)
    common.add_argument("--order", choices=ORDER_KINDS)
    common.add_argument("--dmax", type=int)
    common.add_argument("--gcn-layers", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out")
    common.add_argument("--encoder", choices=("learned", "precomputed"))
    common.add_argument("--vectors", help="JSON-lines node vector sidecar for --encoder precomputed")
    common.add_argument("--exposure", choices=EXPOSURES)
    common.add_argument("--flip-direction", action="append", metavar="LABEL", help="emit LABEL edges reversed in rule output")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="edgeedit", description="Relation graph extraction by iterative edge editing.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", parents=[common], help="entity and relation counts per split")
    p.add_argument("--split", choices=SPLITS)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("rule-extract", parents=[common], help="rule baseline graphs and scores")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.set_defaults(func=cmd_rule_extract)

    p = sub.add_parser("train", parents=[common], help="train the edge classifier")
    p.add_argument("--checkpoint-every", type=int, default=0, metavar="N")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("edit", parents=[common], help="edit initial graphs with a trained checkpoint")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--checkpoint", help="defaults to <out>/best.npz")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("eval", parents=[common], help="score a directory of graph JSON files")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--graphs", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-dot", parents=[common], help="graph JSON to Graphviz DOT")
    p.add_argument("graphs", nargs="+", help="graph JSON files or directories")
    p.set_defaults(func=cmd_export_dot)

    p = sub.add_parser("build-dicts", parents=[common], help="rebuild dictionaries from training gold edges")
    p.set_defaults(func=cmd_build_dicts)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run = resolve_config(args)
        return args.func(args, run)
    except UsageError as exc:
        print(f"edgeedit: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ParseError, MissingVectorError, FileNotFoundError) as exc:
        print(f"edgeedit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"edgeedit: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
