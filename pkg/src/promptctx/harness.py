"""Config-driven experiment pipeline: load, slice, subsample, build vocab,
train, generate, score, report.

One global seed fans out to the stage seeds by labeled derivation (eval,
subsample, init, shuffle, decode), so any stage can be varied on its own.
The held-out evaluation slice is drawn before the training budget is
applied and its record ids are stored in the row manifest.

The grid report is a six-column CSV (Method, Inference Data, Data Size,
BLEU-2, METEOR, CIDEr) with table-scaled scores. Wall-clock time, file
hashes, and other run metadata go to per-row manifests instead of the
report so that re-running a grid reproduces the report byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from .assembler import (
    CONTEXT_POSITIONS,
    PromptPlan,
    assemble_prefix,
    assemble_training,
    build_vocab,
)
from .context import (
    DEFAULT_SENTENCE_PREDICATES,
    DEFAULT_TRIPLES_PER_RECORD,
    DEFAULT_WORD_PREDICATES,
    CaptionSidecar,
    FESidecar,
    ProviderResources,
    SynonymLexicon,
    build_context_chain,
    load_captions,
    load_expressions,
    load_synonyms,
)
from .dataset import RELATIONS, EventRecord, SubsampleSpec, load_records, subsample
from .decoding import DecodeConfig, generate
from .knowledge import KnowledgeGraph, load_graph
from .metrics import MetricReport, evaluate
from .model import ModelConfig
from .rng import derive_seed, sample_indices
from .training import TrainConfig, save_checkpoint, train, training_log_lines
from .types import ProviderKind

REPORT_COLUMNS = ("Method", "Inference Data", "Data Size", "BLEU-2", "METEOR", "CIDEr")
GENERATIONS_COLUMNS = ("record_id", "relation", "sample_index", "text")
METRIC_KEYS = ("bleu2", "meteor", "cider")


def parse_chain(text: str) -> tuple[ProviderKind, ...]:
    """Chain labels like "CW + C + FE" or "none" to provider kinds."""
    cleaned = text.strip()
    if not cleaned or cleaned.lower() == "none":
        return ()
    return tuple(ProviderKind.from_label(part.strip()) for part in cleaned.split("+"))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment row needs; all paths read at run start."""

    records: str
    out_dir: str
    name: str = "row"
    captions: str | None = None
    expressions: str | None = None
    synonyms: str | None = None
    graph: str | None = None
    train_chain: tuple[ProviderKind, ...] = ()
    infer_chain: tuple[ProviderKind, ...] = ()
    word_predicates: tuple[str, ...] = DEFAULT_WORD_PREDICATES
    sentence_predicates: tuple[str, ...] = DEFAULT_SENTENCE_PREDICATES
    triples_per_record: int = DEFAULT_TRIPLES_PER_RECORD
    subsample_mode: str | None = None  # None = full pool; else "count"|"fraction"
    subsample_value: float = 1.0
    eval_size: int = 100
    epochs: int = 5
    layers: int = 2
    heads: int = 2
    embed_dim: int = 64
    max_len: int = 128
    visual_dim: int = 16
    min_count: int = 1
    context_position: str = "after_place"
    optimizer: str = "sgd"
    learning_rate: float = 0.5
    batch_size: int = 8
    momentum: float = 0.0
    top_p: float = 0.9
    num_samples: int = 5
    max_new_tokens: int = 16
    aggregate: str = "mean"
    smoothing_epsilon: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.eval_size < 1:
            raise ValueError("eval_size must be positive")
        if self.subsample_mode not in (None, "count", "fraction"):
            raise ValueError(f"unknown subsample_mode {self.subsample_mode!r}")
        if self.context_position not in CONTEXT_POSITIONS:
            raise ValueError(f"unknown context_position {self.context_position!r}")
        for chain in (self.train_chain, self.infer_chain):
            if len(set(chain)) != len(chain):
                raise ValueError("chain kinds must be distinct")

    @property
    def plan(self) -> PromptPlan:
        return PromptPlan(train_chain=self.train_chain, infer_chain=self.infer_chain)

    def config_hash(self) -> str:
        payload = {k: (v.name if isinstance(v, ProviderKind) else v) for k, v in asdict(self).items()}
        payload["train_chain"] = [k.name for k in self.train_chain]
        payload["infer_chain"] = [k.name for k in self.infer_chain]
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


@dataclass
class ReportRow:
    """One report line: prompt labels, training budget, table-scale scores."""

    train_label: str
    infer_label: str
    data_count: int
    pool_size: int
    bleu2: float
    meteor: float
    cider: float
    wall_seconds: float

    @property
    def data_size_cell(self) -> str:
        if self.data_count == self.pool_size:
            return f"{self.data_count:,} (100%)"
        pct = round(100.0 * self.data_count / self.pool_size)
        return f"{self.data_count:,} (~{pct}%)"

    def cells(self) -> tuple[str, ...]:
        return (
            self.train_label,
            self.infer_label,
            self.data_size_cell,
            f"{self.bleu2 * 100.0:.2f}",
            f"{self.meteor * 100.0:.2f}",
            f"{self.cider * 10.0:.2f}",
        )


class StageError(RuntimeError):
    """Pipeline failure carrying the stage name and surviving artifacts."""

    def __init__(self, stage: str, cause: Exception, artifacts: dict[str, str]):
        self.stage = stage
        self.cause = cause
        self.artifacts = dict(artifacts)
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass
class ExperimentResult:
    row: ReportRow
    report: MetricReport
    row_dir: Path
    generations: dict[tuple[str, str], list[str]]
    eval_ids: list[str]
    manifest: dict


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def load_resources(
    captions: str | None = None,
    expressions: str | None = None,
    synonyms: str | None = None,
    graph: str | None = None,
    word_predicates: tuple[str, ...] = DEFAULT_WORD_PREDICATES,
    sentence_predicates: tuple[str, ...] = DEFAULT_SENTENCE_PREDICATES,
    triples_per_record: int = DEFAULT_TRIPLES_PER_RECORD,
) -> ProviderResources:
    """Provider resources from sidecar paths; omitted paths load as empty."""
    return ProviderResources(
        graph=load_graph(graph) if graph else KnowledgeGraph(()),
        captions=load_captions(captions) if captions else CaptionSidecar(),
        expressions=load_expressions(expressions) if expressions else FESidecar(),
        lexicon=load_synonyms(synonyms) if synonyms else SynonymLexicon(),
        word_predicates=word_predicates,
        sentence_predicates=sentence_predicates,
        triples_per_record=triples_per_record,
    )


def _load_resources(config: ExperimentConfig) -> ProviderResources:
    return load_resources(
        captions=config.captions,
        expressions=config.expressions,
        synonyms=config.synonyms,
        graph=config.graph,
        word_predicates=config.word_predicates,
        sentence_predicates=config.sentence_predicates,
        triples_per_record=config.triples_per_record,
    )


def split_eval_slice(
    records: list[EventRecord], eval_size: int, seed: int
) -> tuple[list[EventRecord], list[EventRecord]]:
    """Held-out evaluation records (seeded) and the remaining pool."""
    if eval_size >= len(records):
        raise ValueError(f"eval_size {eval_size} must be below record count {len(records)}")
    chosen = set(sample_indices(len(records), eval_size, derive_seed(seed, "eval")))
    eval_records = [records[i] for i in sorted(chosen)]
    pool = [r for i, r in enumerate(records) if i not in chosen]
    return eval_records, pool


def build_training_material(
    records: list[EventRecord],
    chain: tuple[ProviderKind, ...],
    resources: ProviderResources,
    min_count: int = 1,
    max_len: int | None = None,
    context_position: str = "after_place",
):
    """Vocabulary and training sequences for a record set and context chain.

    The vocabulary covers event/place/context texts and every reference,
    tokens in first-occurrence order. One sequence is assembled per
    (record, relation, reference).
    """
    contexts = [build_context_chain(record, chain, resources) for record in records]
    corpus: list[str] = []
    for record, context in zip(records, contexts):
        corpus.append(record.event_text)
        corpus.append(record.place_text)
        if context:
            corpus.append(context.text)
        for relation in RELATIONS:
            corpus.extend(record.inferences[relation])
    tokenizer = build_vocab(corpus, min_count)
    sequences = []
    for record, context in zip(records, contexts):
        for relation in RELATIONS:
            for reference in record.inferences[relation]:
                sequences.append(
                    assemble_training(
                        record,
                        context,
                        relation,
                        reference,
                        tokenizer,
                        max_len=max_len,
                        context_position=context_position,
                    )
                )
    return tokenizer, sequences


def generations_csv_lines(generations: dict[tuple[str, str], list[str]]) -> str:
    lines = ["record_id,relation,sample_index,text"]
    for (record_id, relation), texts in sorted(generations.items()):
        for sample_index, text in enumerate(texts):
            escaped = text.replace('"', '""')
            lines.append(f'{record_id},{relation},{sample_index},"{escaped}"')
    return "\n".join(lines) + "\n"


def read_generations_csv(path) -> dict[tuple[str, str], list[str]]:
    """Inverse of generations_csv_lines; sample_index must count 0.. per key."""
    generations: dict[tuple[str, str], list[str]] = {}
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != list(GENERATIONS_COLUMNS):
            raise ValueError(f"{path}: expected header {','.join(GENERATIONS_COLUMNS)}")
        for row in reader:
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}: expected 4 columns, got {len(row)}")
            record_id, relation, index_text, text = row
            key = (record_id, relation)
            samples = generations.setdefault(key, [])
            if int(index_text) != len(samples):
                raise ValueError(f"{path}: sample_index out of order for {key}")
            samples.append(text)
    return generations


def config_from_mapping(mapping: dict) -> ExperimentConfig:
    """ExperimentConfig from plain JSON values; chains may be label strings
    ("CW + C", "none") or lists of abbreviations."""
    values = dict(mapping)
    unknown = set(values) - set(ExperimentConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    for key in ("train_chain", "infer_chain"):
        if key in values:
            raw = values[key]
            if isinstance(raw, str):
                values[key] = parse_chain(raw)
            else:
                values[key] = tuple(ProviderKind.from_label(str(part)) for part in raw)
    for key in ("word_predicates", "sentence_predicates"):
        if key in values:
            values[key] = tuple(values[key])
    return ExperimentConfig(**values)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Execute the full pipeline for one config; deterministic end to end.

    Artifacts land under out_dir/name: vocab.tsv, checkpoint.bin,
    training_log.csv, generations.csv, scores.json, manifest.json. Any
    stage failure raises StageError naming the stage; artifacts written by
    completed stages stay on disk.
    """
    t_start = time.perf_counter()
    row_dir = Path(config.out_dir) / config.name
    row_dir.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, str] = {}
    stage = "load"
    try:
        records = load_records(config.records)
        resources = _load_resources(config)

        stage = "eval-slice"
        eval_records, pool = split_eval_slice(records, config.eval_size, config.seed)

        stage = "subsample"
        if config.subsample_mode is None:
            train_records = list(pool)
        else:
            spec = SubsampleSpec(
                mode=config.subsample_mode,
                value=config.subsample_value,
                seed=derive_seed(config.seed, "subsample"),
            )
            train_records = subsample(pool, spec)

        stage = "assemble"
        tokenizer, sequences = build_training_material(
            train_records,
            config.train_chain,
            resources,
            min_count=config.min_count,
            max_len=config.max_len,
            context_position=config.context_position,
        )
        if not sequences:
            raise ValueError("no training sequences assembled")
        tokenizer.save(row_dir / "vocab.tsv")
        artifacts["vocab"] = str(row_dir / "vocab.tsv")

        stage = "train"
        model_config = ModelConfig(
            vocab_size=len(tokenizer),
            layers=config.layers,
            heads=config.heads,
            embed_dim=config.embed_dim,
            max_len=config.max_len,
            visual_dim=config.visual_dim,
            seed=derive_seed(config.seed, "init"),
        )
        train_config = TrainConfig(
            optimizer=config.optimizer,
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            momentum=config.momentum,
            shuffle_seed=derive_seed(config.seed, "shuffle"),
        )
        result = train(model_config, sequences, epochs=config.epochs, train_config=train_config)
        save_checkpoint(row_dir / "checkpoint.bin", result.params, tokenizer.vocab_hash())
        artifacts["checkpoint"] = str(row_dir / "checkpoint.bin")
        (row_dir / "training_log.csv").write_text(
            training_log_lines(result.epoch_losses), encoding="utf-8"
        )
        artifacts["training_log"] = str(row_dir / "training_log.csv")

        stage = "generate"
        decode_config = DecodeConfig(
            top_p=config.top_p,
            num_samples=config.num_samples,
            max_new_tokens=config.max_new_tokens,
            seed=derive_seed(config.seed, "decode"),
        )
        generations: dict[tuple[str, str], list[str]] = {}
        for record in eval_records:
            for relation in RELATIONS:
                prefix = assemble_prefix(
                    record,
                    config.plan,
                    relation,
                    resources,
                    tokenizer,
                    max_len=config.max_len,
                    context_position=config.context_position,
                )
                generations[(record.record_id, relation)] = generate(
                    result.params, prefix, tokenizer, decode_config
                )
        (row_dir / "generations.csv").write_text(
            generations_csv_lines(generations), encoding="utf-8"
        )
        artifacts["generations"] = str(row_dir / "generations.csv")

        stage = "score"
        report = evaluate(
            eval_records,
            generations,
            tokenizer,
            lexicon=resources.lexicon if config.synonyms else None,
            aggregate=config.aggregate,
            smoothing_epsilon=config.smoothing_epsilon,
        )
        scores = {
            "bleu2": report.bleu2,
            "meteor": report.meteor,
            "cider": report.cider,
            "table": {
                "bleu2": report.table_bleu2,
                "meteor": report.table_meteor,
                "cider": report.table_cider,
            },
            "pairs_scored": report.pairs_scored,
            "pairs_skipped": report.pairs_skipped,
        }
        (row_dir / "scores.json").write_text(
            json.dumps(scores, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        artifacts["scores"] = str(row_dir / "scores.json")

        stage = "report"
        wall = time.perf_counter() - t_start
        row = ReportRow(
            train_label=config.plan.train_label,
            infer_label=config.plan.infer_label,
            data_count=len(train_records),
            pool_size=len(pool),
            bleu2=report.bleu2,
            meteor=report.meteor,
            cider=report.cider,
            wall_seconds=wall,
        )
        manifest = {
            "name": config.name,
            "config_hash": config.config_hash(),
            "vocab_hash": tokenizer.vocab_hash(),
            "checkpoint_hash": _sha256_file(row_dir / "checkpoint.bin"),
            "wall_seconds": wall,
            "eval_record_ids": [r.record_id for r in eval_records],
            "train_record_ids": [r.record_id for r in train_records],
            "sequences": len(sequences),
            "vocab_size": len(tokenizer),
            "row_cells": list(row.cells()),
        }
        (row_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        artifacts["manifest"] = str(row_dir / "manifest.json")
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc, artifacts) from exc
    return ExperimentResult(
        row=row,
        report=report,
        row_dir=row_dir,
        generations=generations,
        eval_ids=[r.record_id for r in eval_records],
        manifest=manifest,
    )


@dataclass
class GridResult:
    report_path: Path
    plot_data_paths: dict[str, Path]
    figure_paths: dict[str, Path]
    rows: list[ReportRow | None]
    failures: dict[int, str]


def report_csv_lines(rows: list[tuple[str, ...]]) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for cells in rows:
        lines.append(",".join(f'"{c}"' if "," in c else c for c in cells))
    return "\n".join(lines) + "\n"


def run_grid(configs: list[ExperimentConfig], output) -> GridResult:
    """Run every config in input order; isolate failures as failed rows.

    Writes report.csv, per-metric plot-data CSVs, per-metric figures, and
    grid_manifest.json under output.
    """
    if not configs:
        raise ValueError("configs must be nonempty")
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[ReportRow | None] = []
    cell_rows: list[tuple[str, ...]] = []
    failures: dict[int, str] = {}
    manifests: list[dict | None] = []
    for index, config in enumerate(configs):
        try:
            result = run_experiment(config)
            rows.append(result.row)
            cell_rows.append(result.row.cells())
            manifests.append(result.manifest)
        except StageError as error:
            failures[index] = f"{error.stage}: {error.cause}"
            rows.append(None)
            plan = config.plan
            cell_rows.append((plan.train_label, plan.infer_label, "", "", "", ""))
            manifests.append(
                {
                    "name": config.name,
                    "config_hash": config.config_hash(),
                    "failed_stage": error.stage,
                    "error": str(error.cause),
                    "artifacts": error.artifacts,
                }
            )

    report_path = out / "report.csv"
    report_path.write_text(report_csv_lines(cell_rows), encoding="utf-8")

    plot_data_paths: dict[str, Path] = {}
    series: dict[str, list[tuple[str, str, int, float]]] = {k: [] for k in METRIC_KEYS}
    for row in rows:
        if row is None:
            continue
        series["bleu2"].append((row.train_label, row.infer_label, row.data_count, row.bleu2 * 100))
        series["meteor"].append((row.train_label, row.infer_label, row.data_count, row.meteor * 100))
        series["cider"].append((row.train_label, row.infer_label, row.data_count, row.cider * 10))
    for metric in METRIC_KEYS:
        lines = ["method,inference_data,data_size,value"]
        for train_label, infer_label, count, value in sorted(series[metric]):
            lines.append(f"{train_label},{infer_label},{count},{value:.4f}")
        path = out / f"plot_{metric}.csv"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        plot_data_paths[metric] = path

    from .plots import render_metric_figures

    figure_paths = render_metric_figures(series, out)

    grid_manifest = {
        "rows": manifests,
        "failures": {str(k): v for k, v in failures.items()},
        "report": str(report_path),
    }
    (out / "grid_manifest.json").write_text(
        json.dumps(grid_manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return GridResult(
        report_path=report_path,
        plot_data_paths=plot_data_paths,
        figure_paths=figure_paths,
        rows=rows,
        failures=failures,
    )
