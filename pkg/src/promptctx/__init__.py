"""Contextual prompt augmentation toolkit.

Builds automatically generated context (knowledge-graph concepts, captions,
facial expressions, synonyms) into prompt sequences for event inference,
trains a small causal language model on them with a per-span loss split,
decodes with nucleus sampling, and scores generations with BLEU-2, METEOR,
and CIDEr across annotation budgets.
"""

from .assembler import (
    PromptPlan,
    PromptSequence,
    SpanLabel,
    Tokenizer,
    assemble_prefix,
    assemble_training,
    build_vocab,
)
from .context import (
    CaptionSidecar,
    FESidecar,
    ProviderResources,
    SynonymLexicon,
    build_context_chain,
    load_captions,
    load_expressions,
    load_synonyms,
)
from .dataset import EventRecord, PersonTag, SubsampleSpec, load_records, save_records, subsample
from .decoding import DecodeConfig, generate
from .fixtures import generate_fixture, write_fixture
from .harness import (
    ExperimentConfig,
    ReportRow,
    StageError,
    load_resources,
    run_experiment,
    run_grid,
)
from .knowledge import KnowledgeGraph, Triple, load_graph, match_concepts
from .metrics import MetricReport, ScoredPair, bleu2, cider, evaluate, meteor
from .model import LossBreakdown, ModelConfig, Parameters, forward, gradient_check, init_model, loss
from .training import TrainConfig, load_checkpoint, save_checkpoint, train
from .types import ContextText, ProviderKind

__version__ = "0.1.0"

__all__ = [
    "CaptionSidecar",
    "ContextText",
    "DecodeConfig",
    "EventRecord",
    "ExperimentConfig",
    "FESidecar",
    "KnowledgeGraph",
    "LossBreakdown",
    "MetricReport",
    "ModelConfig",
    "Parameters",
    "PersonTag",
    "PromptPlan",
    "PromptSequence",
    "ProviderKind",
    "ProviderResources",
    "ReportRow",
    "ScoredPair",
    "SpanLabel",
    "StageError",
    "SubsampleSpec",
    "SynonymLexicon",
    "Tokenizer",
    "TrainConfig",
    "Triple",
    "assemble_prefix",
    "assemble_training",
    "bleu2",
    "build_context_chain",
    "build_vocab",
    "cider",
    "evaluate",
    "forward",
    "generate",
    "generate_fixture",
    "gradient_check",
    "init_model",
    "load_captions",
    "load_checkpoint",
    "load_expressions",
    "load_graph",
    "load_records",
    "load_resources",
    "load_synonyms",
    "loss",
    "match_concepts",
    "meteor",
    "run_experiment",
    "run_grid",
    "save_checkpoint",
    "save_records",
    "subsample",
    "train",
    "write_fixture",
    "__version__",
]
