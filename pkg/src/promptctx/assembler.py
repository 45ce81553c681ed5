"""Word-level tokenization and prompt sequence assembly.

A sequence is laid out as

    [<bos>] [event tokens] [place tokens] [context tokens] [<relation>] [inference tokens] [<eos>]

with one span label per token. Position 0 always carries the <bos> token
and the Visual label: it is where the (optional, zero when absent)
projected visual feature vector enters the model. The Context block is
omitted when the context text is empty; the Inference block (reference
tokens plus <eos>) exists only in training sequences. Generation prefixes
stop at the relation marker.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .context import ProviderResources, build_context_chain
from .dataset import RELATIONS, EventRecord
from .types import ContextText, ProviderKind

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
RELATION_MARKERS = {rel: f"<{rel}>" for rel in RELATIONS}
SPECIAL_TOKENS = (PAD, UNK, BOS, EOS) + tuple(RELATION_MARKERS[rel] for rel in RELATIONS)

# Word runs (with internal hyphens/apostrophes) or single punctuation marks.
_TOKEN_RE = re.compile(r"[a-z0-9]+(?:['-][a-z0-9]+)*|[^\sa-z0-9]")


class SpanLabel(Enum):
    VISUAL = "Visual"
    EVENT = "Event"
    PLACE = "Place"
    CONTEXT = "Context"
    RELATION_PROMPT = "RelationPrompt"
    INFERENCE = "Inference"


_SPAN_ORDER = (
    SpanLabel.VISUAL,
    SpanLabel.EVENT,
    SpanLabel.PLACE,
    SpanLabel.CONTEXT,
    SpanLabel.RELATION_PROMPT,
    SpanLabel.INFERENCE,
)

# Context defaults to sitting after the place block; the alternative
# placement ahead of the event block is kept behind context_position.
_CONTEXT_FIRST_ORDER = (
    SpanLabel.VISUAL,
    SpanLabel.CONTEXT,
    SpanLabel.EVENT,
    SpanLabel.PLACE,
    SpanLabel.RELATION_PROMPT,
    SpanLabel.INFERENCE,
)

CONTEXT_POSITIONS = ("after_place", "before_event")

# Spans whose tokens are scored by the loss; the visual slot and the
# relation marker are conditioning only.
SCORED_LABELS = (SpanLabel.EVENT, SpanLabel.PLACE, SpanLabel.CONTEXT, SpanLabel.INFERENCE)


def tokenize(text: str) -> list[str]:
    """Lowercased word and punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


def normalize(text: str) -> str:
    return " ".join(tokenize(text))


class OverLengthError(ValueError):
    """Assembled sequence longer than the model window, with span lengths."""

    def __init__(self, total: int, max_len: int, span_lengths: dict[str, int]):
        self.total = total
        self.max_len = max_len
        self.span_lengths = span_lengths
        detail = ", ".join(f"{name}={n}" for name, n in span_lengths.items())
        super().__init__(f"sequence of {total} tokens exceeds max_len {max_len} ({detail})")


class Tokenizer:
    """Word-level vocabulary with dense ids; specials first, then corpus
    tokens in first-occurrence order."""

    def __init__(self, tokens_with_counts: list[tuple[str, int]]):
        self.id_to_token: list[str] = list(SPECIAL_TOKENS)
        self.counts: dict[str, int] = {t: 0 for t in SPECIAL_TOKENS}
        for token, count in tokens_with_counts:
            if token in self.counts:
                raise ValueError(f"duplicate token {token!r}")
            self.id_to_token.append(token)
            self.counts[token] = count
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        self.pad_id = self.token_to_id[PAD]
        self.unk_id = self.token_to_id[UNK]
        self.bos_id = self.token_to_id[BOS]
        self.eos_id = self.token_to_id[EOS]
        self.relation_ids = {rel: self.token_to_id[RELATION_MARKERS[rel]] for rel in RELATIONS}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, text: str) -> list[int]:
        return [self.token_to_id.get(t, self.unk_id) for t in tokenize(text)]

    def decode(self, ids: list[int]) -> str:
        return " ".join(self.id_to_token[i] for i in ids)

    def dump(self) -> str:
        """Tab-separated (token, id, corpus count) rows, one per vocabulary entry."""
        lines = [
            f"{token}\t{i}\t{self.counts[token]}" for i, token in enumerate(self.id_to_token)
        ]
        return "\n".join(lines) + "\n"

    def vocab_hash(self) -> str:
        return hashlib.sha256(self.dump().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.dump())

    @classmethod
    def load(cls, path) -> "Tokenizer":
        entries: list[tuple[str, int]] = []
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                line = line.rstrip("\n")
                if not line:
                    continue
                token, _id, count = line.split("\t")
                if token not in SPECIAL_TOKENS:
                    entries.append((token, int(count)))
        return cls(entries)


def build_vocab(corpus: list[str], min_count: int = 1) -> Tokenizer:
    """Vocabulary over the corpus: tokens seen at least min_count times, in
    first-occurrence order. Rarer tokens encode as <unk>."""
    if not corpus:
        raise ValueError("corpus must be nonempty")
    counts: dict[str, int] = {}
    order: list[str] = []
    for line in corpus:
        for token in tokenize(line):
            if token not in counts:
                counts[token] = 0
                order.append(token)
            counts[token] += 1
    kept = [(t, counts[t]) for t in order if counts[t] >= min_count]
    return Tokenizer(kept)


@dataclass(frozen=True, eq=False)
class PromptSequence:
    """Token ids with one span label per token, plus the relation and the
    optional visual feature vector (None is equivalent to all-zeros)."""

    tokens: tuple[int, ...]
    spans: tuple[SpanLabel, ...]
    relation: str
    visual: np.ndarray | None = None

    def __post_init__(self):
        if len(self.tokens) != len(self.spans):
            raise ValueError("tokens and spans must have equal length")
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")
        blocks = [label for i, label in enumerate(self.spans) if i == 0 or self.spans[i - 1] != label]
        if len(set(blocks)) != len(blocks):
            raise ValueError("span blocks must be contiguous")
        ok = False
        for layout in (_SPAN_ORDER, _CONTEXT_FIRST_ORDER):
            order = [layout.index(label) for label in blocks]
            if order == sorted(order):
                ok = True
                break
        if not ok:
            raise ValueError(f"span blocks out of order: {[b.value for b in blocks]}")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def has_inference(self) -> bool:
        return SpanLabel.INFERENCE in self.spans

    def span_length(self, label: SpanLabel) -> int:
        return sum(1 for s in self.spans if s is label)


@dataclass(frozen=True)
class PromptPlan:
    """Provider chains for training sequences and generation prefixes.

    An empty infer_chain means context is used in training only.
    """

    train_chain: tuple[ProviderKind, ...] = ()
    infer_chain: tuple[ProviderKind, ...] = ()

    def __post_init__(self):
        for chain in (self.train_chain, self.infer_chain):
            if len(set(chain)) != len(chain):
                raise ValueError("chain kinds must be distinct")

    @staticmethod
    def _label(chain: tuple[ProviderKind, ...]) -> str:
        return " + ".join(kind.value for kind in chain) if chain else "None"

    @property
    def train_label(self) -> str:
        return self._label(self.train_chain)

    @property
    def infer_label(self) -> str:
        return self._label(self.infer_chain)


def _assemble(
    record: EventRecord,
    context: ContextText,
    relation: str,
    tokenizer: Tokenizer,
    reference: str | None,
    visual: np.ndarray | None,
    max_len: int | None,
    context_position: str,
) -> PromptSequence:
    if relation not in RELATIONS:
        raise ValueError(f"unknown relation {relation!r}")
    if context_position not in CONTEXT_POSITIONS:
        raise ValueError(f"unknown context_position {context_position!r}")
    tokens: list[int] = [tokenizer.bos_id]
    spans: list[SpanLabel] = [SpanLabel.VISUAL]

    def extend(ids: list[int], label: SpanLabel) -> None:
        tokens.extend(ids)
        spans.extend([label] * len(ids))

    if context and context_position == "before_event":
        extend(tokenizer.encode(context.text), SpanLabel.CONTEXT)
    extend(tokenizer.encode(record.event_text), SpanLabel.EVENT)
    extend(tokenizer.encode(record.place_text), SpanLabel.PLACE)
    if context and context_position == "after_place":
        extend(tokenizer.encode(context.text), SpanLabel.CONTEXT)
    extend([tokenizer.relation_ids[relation]], SpanLabel.RELATION_PROMPT)
    if reference is not None:
        if not reference:
            raise ValueError("reference must be nonempty")
        extend(tokenizer.encode(reference) + [tokenizer.eos_id], SpanLabel.INFERENCE)
    if max_len is not None and len(tokens) > max_len:
        lengths = {
            label.value: sum(1 for s in spans if s is label)
            for label in _SPAN_ORDER
            if label in spans
        }
        raise OverLengthError(len(tokens), max_len, lengths)
    return PromptSequence(
        tokens=tuple(tokens), spans=tuple(spans), relation=relation, visual=visual
    )


def assemble_training(
    record: EventRecord,
    context: ContextText,
    relation: str,
    reference: str,
    tokenizer: Tokenizer,
    visual: np.ndarray | None = None,
    max_len: int | None = None,
    context_position: str = "after_place",
) -> PromptSequence:
    """Training sequence for one (record, relation, reference) example."""
    return _assemble(
        record, context, relation, tokenizer, reference, visual, max_len, context_position
    )


def assemble_prefix(
    record: EventRecord,
    plan: PromptPlan,
    relation: str,
    resources: ProviderResources,
    tokenizer: Tokenizer,
    visual: np.ndarray | None = None,
    max_len: int | None = None,
    context_position: str = "after_place",
) -> PromptSequence:
    """Generation prefix: same layout as training, without the Inference block.

    Context comes from plan.infer_chain; an empty chain omits the Context
    block entirely.
    """
    context = build_context_chain(record, plan.infer_chain, resources)
    return _assemble(
        record, context, relation, tokenizer, None, visual, max_len, context_position
    )
