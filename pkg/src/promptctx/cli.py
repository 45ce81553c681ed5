"""Command-line entry point.

Subcommands cover the record tooling (validate, augment, subsample,
fixtures), the model stages (train, generate, score), and the orchestrated
pipeline (experiment, grid). Every flag has a config-file equivalent: pass
--config with a JSON object whose keys are the flag names with dashes
replaced by underscores; explicit flags win over config values.

Stage seeds are derived from --seed with the same labels the experiment
pipeline uses (eval, subsample, init, shuffle, decode), so standalone
stage commands reproduce the corresponding pipeline stage bit for bit
when fed the same inputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .assembler import OverLengthError, PromptPlan, Tokenizer, assemble_prefix
from .context import (
    DEFAULT_SENTENCE_PREDICATES,
    DEFAULT_TRIPLES_PER_RECORD,
    DEFAULT_WORD_PREDICATES,
    SidecarError,
    build_context_chain,
    load_captions,
    load_expressions,
    load_synonyms,
)
from .dataset import (
    RELATIONS,
    RecordError,
    SubsampleSpec,
    load_records,
    record_from_line,
    record_to_line,
    save_records,
    subsample,
)
from .decoding import DecodeConfig, generate
from .fixtures import generate_fixture, write_fixture
from .harness import (
    StageError,
    build_training_material,
    config_from_mapping,
    generations_csv_lines,
    load_resources,
    parse_chain,
    read_generations_csv,
    run_experiment,
    run_grid,
)
from .knowledge import load_graph
from .metrics import evaluate
from .model import ModelConfig
from .rng import derive_seed
from .training import TrainConfig, load_checkpoint, save_checkpoint, train, training_log_lines

_EXPERIMENT_KEYS = (
    "records",
    "captions",
    "expressions",
    "synonyms",
    "graph",
    "name",
    "train_chain",
    "infer_chain",
    "triples_per_record",
    "subsample_mode",
    "subsample_value",
    "eval_size",
    "epochs",
    "layers",
    "heads",
    "embed_dim",
    "max_len",
    "visual_dim",
    "min_count",
    "context_position",
    "optimizer",
    "learning_rate",
    "batch_size",
    "momentum",
    "top_p",
    "num_samples",
    "max_new_tokens",
    "aggregate",
    "smoothing_epsilon",
)


def _load_config_file(path) -> dict:
    with open(path, encoding="utf-8") as handle:
        doc = json.load(handle)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return doc


def _resolve(args, cfg: dict, key: str, default=None):
    value = getattr(args, key, None)
    if value is None:
        value = cfg.get(key, default)
    return value


def _chain_arg(args, cfg, key: str):
    raw = _resolve(args, cfg, key, "none")
    if isinstance(raw, str):
        return parse_chain(raw)
    return parse_chain(" + ".join(str(part) for part in raw))


def _predicates(args, cfg, key: str, default: tuple[str, ...]) -> tuple[str, ...]:
    raw = _resolve(args, cfg, key)
    if raw is None:
        return default
    if isinstance(raw, str):
        return tuple(p.strip() for p in raw.split(",") if p.strip())
    return tuple(raw)


def _sidecar_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--captions", help="caption sidecar (JSON: image_id -> caption)")
    parser.add_argument("--expressions", help="emotion sidecar (CSV: image_id,person_id,emotion)")
    parser.add_argument("--synonyms", help="synonym lexicon (JSON: phrase -> [synonyms])")
    parser.add_argument("--graph", help="knowledge graph (CSV: subject,predicate,object,weight)")
    parser.add_argument("--triples-per-record", type=int, help="per-provider triple budget")
    parser.add_argument("--word-predicates", help="comma-separated predicates for concept words")
    parser.add_argument(
        "--sentence-predicates", help="comma-separated predicates for concept sentences"
    )


def _resources(args, cfg):
    return load_resources(
        captions=_resolve(args, cfg, "captions"),
        expressions=_resolve(args, cfg, "expressions"),
        synonyms=_resolve(args, cfg, "synonyms"),
        graph=_resolve(args, cfg, "graph"),
        word_predicates=_predicates(args, cfg, "word_predicates", DEFAULT_WORD_PREDICATES),
        sentence_predicates=_predicates(
            args, cfg, "sentence_predicates", DEFAULT_SENTENCE_PREDICATES
        ),
        triples_per_record=int(
            _resolve(args, cfg, "triples_per_record", DEFAULT_TRIPLES_PER_RECORD)
        ),
    )


def _cmd_validate(args, cfg) -> int:
    path = _resolve(args, cfg, "records")
    records = load_records(path)
    noncanonical: list[int] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if record_to_line(record_from_line(stripped, line_no)) != stripped:
                noncanonical.append(line_no)
    print(f"records: {len(records)}")
    captions_path = _resolve(args, cfg, "captions")
    if captions_path:
        print(f"captions: {len(load_captions(captions_path).captions)}")
    expressions_path = _resolve(args, cfg, "expressions")
    if expressions_path:
        print(f"expressions: {len(load_expressions(expressions_path).labels)}")
    synonyms_path = _resolve(args, cfg, "synonyms")
    if synonyms_path:
        print(f"synonyms: {len(load_synonyms(synonyms_path).entries)}")
    graph_path = _resolve(args, cfg, "graph")
    if graph_path:
        print(f"graph triples: {len(load_graph(graph_path).triples)}")
    if noncanonical:
        shown = ", ".join(str(n) for n in noncanonical[:5])
        more = "" if len(noncanonical) <= 5 else f" (+{len(noncanonical) - 5} more)"
        print(f"non-canonical lines: {shown}{more}", file=sys.stderr)
        return 1
    print("canonical: yes")
    return 0


def _cmd_augment(args, cfg) -> int:
    records = load_records(_resolve(args, cfg, "records"))
    chain = _chain_arg(args, cfg, "chain")
    resources = _resources(args, cfg)
    out = _resolve(args, cfg, "out")
    if out is None:
        raise ValueError("--out is required")
    with open(out, "w", encoding="utf-8") as handle:
        for record in records:
            context = build_context_chain(record, chain, resources)
            doc = {"record_id": record.record_id, "context": context.text}
            handle.write(json.dumps(doc, ensure_ascii=False) + "\n")
    print(f"wrote {len(records)} contexts to {out}")
    return 0


def _cmd_subsample(args, cfg) -> int:
    records = load_records(_resolve(args, cfg, "records"))
    seed = int(_resolve(args, cfg, "seed", 0))
    spec = SubsampleSpec(
        mode=_resolve(args, cfg, "mode", "fraction"),
        value=float(_resolve(args, cfg, "value", 1.0)),
        seed=derive_seed(seed, "subsample"),
    )
    chosen = subsample(records, spec)
    out = _resolve(args, cfg, "out")
    if out is None:
        raise ValueError("--out is required")
    save_records(chosen, out)
    print(f"wrote {len(chosen)} of {len(records)} records to {out}")
    return 0


def _cmd_train(args, cfg) -> int:
    records = load_records(_resolve(args, cfg, "records"))
    chain = _chain_arg(args, cfg, "chain")
    resources = _resources(args, cfg)
    seed = int(_resolve(args, cfg, "seed", 0))
    out_dir = Path(_resolve(args, cfg, "out", "train-out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    max_len = int(_resolve(args, cfg, "max_len", 128))
    tokenizer, sequences = build_training_material(
        records,
        chain,
        resources,
        min_count=int(_resolve(args, cfg, "min_count", 1)),
        max_len=max_len,
        context_position=_resolve(args, cfg, "context_position", "after_place"),
    )
    model_config = ModelConfig(
        vocab_size=len(tokenizer),
        layers=int(_resolve(args, cfg, "layers", 2)),
        heads=int(_resolve(args, cfg, "heads", 2)),
        embed_dim=int(_resolve(args, cfg, "embed_dim", 64)),
        max_len=max_len,
        visual_dim=int(_resolve(args, cfg, "visual_dim", 16)),
        seed=derive_seed(seed, "init"),
    )
    train_config = TrainConfig(
        optimizer=_resolve(args, cfg, "optimizer", "sgd"),
        learning_rate=float(_resolve(args, cfg, "learning_rate", 0.5)),
        batch_size=int(_resolve(args, cfg, "batch_size", 8)),
        momentum=float(_resolve(args, cfg, "momentum", 0.0)),
        shuffle_seed=derive_seed(seed, "shuffle"),
    )
    result = train(
        model_config, sequences, epochs=int(_resolve(args, cfg, "epochs", 5)), train_config=train_config
    )
    tokenizer.save(out_dir / "vocab.tsv")
    save_checkpoint(out_dir / "checkpoint.bin", result.params, tokenizer.vocab_hash())
    (out_dir / "training_log.csv").write_text(
        training_log_lines(result.epoch_losses), encoding="utf-8"
    )
    if result.epoch_losses:
        print(f"final epoch mean total loss: {result.epoch_losses[-1].total:.6f}")
    print(f"wrote vocab.tsv, checkpoint.bin, training_log.csv to {out_dir}")
    return 0


def _cmd_generate(args, cfg) -> int:
    records = load_records(_resolve(args, cfg, "records"))
    checkpoint_path = _resolve(args, cfg, "checkpoint")
    vocab_path = _resolve(args, cfg, "vocab")
    if checkpoint_path is None or vocab_path is None:
        raise ValueError("--checkpoint and --vocab are required")
    params, stored_hash = load_checkpoint(checkpoint_path)
    tokenizer = Tokenizer.load(vocab_path)
    if stored_hash and stored_hash != tokenizer.vocab_hash():
        raise ValueError(
            f"vocabulary hash mismatch: checkpoint {stored_hash[:12]}..., "
            f"vocab file {tokenizer.vocab_hash()[:12]}..."
        )
    resources = _resources(args, cfg)
    plan = PromptPlan(infer_chain=_chain_arg(args, cfg, "chain"))
    seed = int(_resolve(args, cfg, "seed", 0))
    decode_config = DecodeConfig(
        top_p=float(_resolve(args, cfg, "top_p", 0.9)),
        num_samples=int(_resolve(args, cfg, "num_samples", 5)),
        max_new_tokens=int(_resolve(args, cfg, "max_new_tokens", 16)),
        seed=derive_seed(seed, "decode"),
    )
    generations: dict[tuple[str, str], list[str]] = {}
    for record in records:
        for relation in RELATIONS:
            prefix = assemble_prefix(
                record,
                plan,
                relation,
                resources,
                tokenizer,
                max_len=params.config.max_len,
                context_position=_resolve(args, cfg, "context_position", "after_place"),
            )
            generations[(record.record_id, relation)] = generate(
                params, prefix, tokenizer, decode_config
            )
    out = _resolve(args, cfg, "out")
    if out is None:
        raise ValueError("--out is required")
    Path(out).write_text(generations_csv_lines(generations), encoding="utf-8")
    print(f"wrote {len(generations)} generation groups to {out}")
    return 0


def _cmd_score(args, cfg) -> int:
    records = load_records(_resolve(args, cfg, "records"))
    generations_path = _resolve(args, cfg, "generations")
    if generations_path is None:
        raise ValueError("--generations is required")
    generations = read_generations_csv(generations_path)
    synonyms_path = _resolve(args, cfg, "synonyms")
    lexicon = load_synonyms(synonyms_path) if synonyms_path else None
    report = evaluate(
        records,
        generations,
        lexicon=lexicon,
        aggregate=_resolve(args, cfg, "aggregate", "mean"),
        smoothing_epsilon=float(_resolve(args, cfg, "smoothing_epsilon", 0.0)),
    )
    print(f"bleu2: {report.bleu2:.6f} (table {report.table_bleu2:.2f})")
    print(f"meteor: {report.meteor:.6f} (table {report.table_meteor:.2f})")
    print(f"cider: {report.cider:.6f} (table {report.table_cider:.2f})")
    print(f"pairs scored: {report.pairs_scored}, skipped: {report.pairs_skipped}")
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    out = _resolve(args, cfg, "out")
    if out:
        doc = {
            "bleu2": report.bleu2,
            "meteor": report.meteor,
            "cider": report.cider,
            "pairs_scored": report.pairs_scored,
            "pairs_skipped": report.pairs_skipped,
        }
        Path(out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def _experiment_mapping(args, cfg) -> dict:
    mapping = {}
    for key in _EXPERIMENT_KEYS:
        value = _resolve(args, cfg, key)
        if value is not None:
            mapping[key] = value
    for key in ("word_predicates", "sentence_predicates"):
        value = _resolve(args, cfg, key)
        if value is not None:
            mapping[key] = _predicates(args, cfg, key, ())
    out = _resolve(args, cfg, "out")
    if out is not None:
        mapping["out_dir"] = out
    elif "out_dir" in cfg:
        mapping["out_dir"] = cfg["out_dir"]
    seed = getattr(args, "seed", None)
    if seed is not None:
        mapping["seed"] = int(seed)
    elif "seed" in cfg:
        mapping["seed"] = int(cfg["seed"])
    return mapping


def _cmd_experiment(args, cfg) -> int:
    mapping = _experiment_mapping(args, cfg)
    if "records" not in mapping:
        raise ValueError("records path is required (flag or config)")
    if "out_dir" not in mapping:
        raise ValueError("--out is required (or out_dir in config)")
    config = config_from_mapping(mapping)
    result = run_experiment(config)
    cells = result.row.cells()
    print(" | ".join(cells))
    print(f"wall seconds: {result.row.wall_seconds:.1f}")
    print(f"artifacts: {result.row_dir}")
    return 0


def _cmd_grid(args, cfg) -> int:
    rows = cfg.get("rows")
    if not rows:
        raise ValueError("grid config must contain a nonempty 'rows' array")
    common = dict(cfg.get("common", {}))
    out = _resolve(args, cfg, "out") or cfg.get("out_dir")
    if out is None:
        raise ValueError("--out is required (or out_dir in config)")
    seed = getattr(args, "seed", None)
    configs = []
    for i, row in enumerate(rows):
        mapping = dict(common)
        mapping.update(row)
        mapping.setdefault("name", f"row-{i:02d}")
        mapping["out_dir"] = str(Path(out) / "rows")
        if seed is not None:
            mapping["seed"] = int(seed)
        configs.append(config_from_mapping(mapping))
    result = run_grid(configs, out)
    print(f"report: {result.report_path}")
    for metric, path in sorted(result.figure_paths.items()):
        print(f"figure ({metric}): {path}")
    if result.failures:
        for index, reason in sorted(result.failures.items()):
            print(f"row {index} failed: {reason}", file=sys.stderr)
        return 1
    return 0


def _cmd_fixtures(args, cfg) -> int:
    out = _resolve(args, cfg, "out")
    if out is None:
        raise ValueError("--out is required")
    bundle = generate_fixture(
        n_records=int(_resolve(args, cfg, "n_records", 2000)),
        seed=int(_resolve(args, cfg, "seed", 0)),
    )
    paths = write_fixture(bundle, out)
    for name in sorted(paths):
        print(paths[name])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptctx",
        description="Contextual-prompt data tooling, tiny LM training, and experiment grids.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, handler, records_arg: bool = True):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        if records_arg:
            p.add_argument("records", nargs="?", help="record file (JSON Lines)")
        p.add_argument("--seed", type=int, help="global seed (stage seeds derive from it)")
        p.add_argument("--out", help="output file or directory")
        p.add_argument("--config", help="JSON config file; flags override its keys")
        return p

    p = add("validate", "check a record file and optional sidecars", _cmd_validate)
    _sidecar_flags(p)

    p = add("augment", "write the generated context for every record", _cmd_augment)
    p.add_argument("--chain", help='provider chain, e.g. "CW + C + FE" or "none"')
    _sidecar_flags(p)

    p = add("subsample", "seeded uniform draw of records", _cmd_subsample)
    p.add_argument("--mode", choices=("count", "fraction"), help="budget kind")
    p.add_argument("--value", type=float, help="count (integer) or fraction in (0, 1]")

    p = add("train", "build vocabulary and train the tiny LM", _cmd_train)
    p.add_argument("--chain", help="training context chain")
    _sidecar_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--visual-dim", type=int)
    p.add_argument("--min-count", type=int)
    p.add_argument("--context-position", choices=("after_place", "before_event"))
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--momentum", type=float)

    p = add("generate", "decode five samples per record and relation", _cmd_generate)
    p.add_argument("--checkpoint", help="checkpoint file from train")
    p.add_argument("--vocab", help="vocabulary dump from train")
    p.add_argument("--chain", help="inference context chain")
    _sidecar_flags(p)
    p.add_argument("--top-p", type=float)
    p.add_argument("--num-samples", type=int)
    p.add_argument("--max-new-tokens", type=int)
    p.add_argument("--context-position", choices=("after_place", "before_event"))

    p = add("score", "score a generations file against record references", _cmd_score)
    p.add_argument("--generations", help="generations CSV from generate")
    p.add_argument("--synonyms", help="synonym lexicon for the METEOR synonym stage")
    p.add_argument("--aggregate", choices=("mean", "max"))
    p.add_argument("--smoothing-epsilon", type=float)

    p = add("experiment", "run one full pipeline row", _cmd_experiment)
    p.add_argument("--name", help="row name (artifact subdirectory)")
    p.add_argument("--train-chain", help="training context chain")
    p.add_argument("--infer-chain", help="inference context chain")
    _sidecar_flags(p)
    p.add_argument("--subsample-mode", choices=("count", "fraction"))
    p.add_argument("--subsample-value", type=float)
    p.add_argument("--eval-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--visual-dim", type=int)
    p.add_argument("--min-count", type=int)
    p.add_argument("--context-position", choices=("after_place", "before_event"))
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--top-p", type=float)
    p.add_argument("--num-samples", type=int)
    p.add_argument("--max-new-tokens", type=int)
    p.add_argument("--aggregate", choices=("mean", "max"))
    p.add_argument("--smoothing-epsilon", type=float)

    add("grid", "run a grid of experiment rows and write the report", _cmd_grid, records_arg=False)

    p = add("fixtures", "emit the synthetic hidden-bit corpus", _cmd_fixtures, records_arg=False)
    p.add_argument("--n-records", type=int)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = _load_config_file(args.config) if args.config else {}
    try:
        return args.handler(args, cfg)
    except (RecordError, SidecarError, OverLengthError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.artifacts:
            print(f"completed artifacts: {sorted(exc.artifacts.values())}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
