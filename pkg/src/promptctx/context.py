"""Context providers: captions, facial expressions, concept words/sentences,
place concept words, synonyms, and the ordered chains that combine them.

Every provider is a pure function of (record, resources) that returns a
ContextText, empty when the resources carry nothing for the record. A chain
invokes providers in order and joins the nonempty fragments with single
spaces, so permuting a chain permutes the same fragments.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

from .dataset import EventRecord, persons_in_text
from .knowledge import STOPWORDS, KnowledgeGraph, match_concepts, render, select_triples
from .types import EMPTY_CONTEXT, ContextText, ProviderKind

EMOTION_CLASSES = ("angry", "disgust", "fear", "happy", "neutral", "sad", "surprise")

DEFAULT_WORD_PREDICATES = ("PartOf", "HasProperty")
DEFAULT_SENTENCE_PREDICATES = ("HasProperty",)
DEFAULT_TRIPLES_PER_RECORD = 5


class SidecarError(ValueError):
    """A sidecar file entry that cannot be loaded."""


@dataclass(frozen=True)
class CaptionSidecar:
    """image_id -> generated caption."""

    captions: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for image_id, caption in self.captions.items():
            if not caption:
                raise SidecarError(f"empty caption for image {image_id!r}")

    def get(self, image_id: str) -> str | None:
        return self.captions.get(image_id)


@dataclass(frozen=True)
class FESidecar:
    """(image_id, person tag id) -> one of the seven emotion labels."""

    labels: dict[tuple[str, int], str] = field(default_factory=dict)

    def __post_init__(self):
        for key, label in self.labels.items():
            if label not in EMOTION_CLASSES:
                raise SidecarError(f"unknown emotion {label!r} for {key}")

    def get(self, image_id: str, person_id: int) -> str | None:
        return self.labels.get((image_id, person_id))


@dataclass(frozen=True)
class SynonymLexicon:
    """phrase -> ordered synonym phrases; a phrase never lists itself."""

    entries: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for phrase, synonyms in self.entries.items():
            if phrase in synonyms:
                raise SidecarError(f"phrase {phrase!r} lists itself as a synonym")

    def top(self, phrase: str) -> str | None:
        synonyms = self.entries.get(phrase, ())
        return synonyms[0] if synonyms else None


@dataclass(frozen=True)
class ProviderResources:
    """Everything the providers may consult, bundled for chain calls."""

    graph: KnowledgeGraph = field(default_factory=lambda: KnowledgeGraph(()))
    captions: CaptionSidecar = field(default_factory=CaptionSidecar)
    expressions: FESidecar = field(default_factory=FESidecar)
    lexicon: SynonymLexicon = field(default_factory=SynonymLexicon)
    word_predicates: tuple[str, ...] = DEFAULT_WORD_PREDICATES
    sentence_predicates: tuple[str, ...] = DEFAULT_SENTENCE_PREDICATES
    triples_per_record: int = DEFAULT_TRIPLES_PER_RECORD
    extra_exclusions: frozenset[str] = frozenset()

    def exclusions_for(self, record: EventRecord) -> frozenset[str]:
        tags = {f"person-{tag.id}" for tag in record.persons}
        return STOPWORDS | tags | self.extra_exclusions


def caption_context(record: EventRecord, sidecar: CaptionSidecar) -> ContextText:
    """The record's caption, normalized to end with '.'; empty when uncovered."""
    caption = sidecar.get(record.image_id)
    if caption is None:
        return EMPTY_CONTEXT
    text = caption.strip()
    if not text.endswith("."):
        text += "."
    provenance = ({"provider": ProviderKind.CAPTIONS.value, "image_id": record.image_id},)
    return ContextText(text=text, kind=ProviderKind.CAPTIONS, provenance=provenance)


def facial_expression_context(record: EventRecord, sidecar: FESidecar) -> ContextText:
    """One 'Person-N looks {emotion}.' sentence per person mentioned in the
    event text (first-occurrence order), skipping uncovered persons."""
    sentences: list[str] = []
    labels: list[tuple[int, str]] = []
    for tag in persons_in_text(record.event_text):
        emotion = sidecar.get(record.image_id, tag.id)
        if emotion is not None:
            sentences.append(f"{tag.surface()} looks {emotion}.")
            labels.append((tag.id, emotion))
    if not sentences:
        return EMPTY_CONTEXT
    provenance = ({"provider": ProviderKind.FACIAL_EXPRESSIONS.value, "labels": tuple(labels)},)
    return ContextText(
        text=" ".join(sentences), kind=ProviderKind.FACIAL_EXPRESSIONS, provenance=provenance
    )


def _phrases_of(words_context: ContextText) -> list[str]:
    for note in words_context.provenance:
        if "phrases" in note:
            return list(note["phrases"])
    return []


def synonym_context(concept_words: ContextText, lexicon: SynonymLexicon) -> ContextText:
    """Augment a concept-words context with the top synonym of each phrase.

    Synonyms already present in the word list are not added; the result is
    re-rendered in Words form with the same kind.
    """
    if concept_words.kind not in (ProviderKind.CONCEPT_WORDS, ProviderKind.PLACE_CONCEPT_WORDS):
        raise ValueError("synonym_context expects a concept-words context")
    base = _phrases_of(concept_words)
    if not base:
        return concept_words
    combined = list(base)
    added: list[str] = []
    for phrase in base:
        synonym = lexicon.top(phrase)
        if synonym is not None and synonym not in combined:
            combined.append(synonym)
            added.append(synonym)
    if not added:
        return concept_words
    provenance = concept_words.provenance + (
        {"provider": ProviderKind.SYNONYMS.value, "added": tuple(added), "phrases": tuple(combined)},
    )
    return ContextText(
        text=", ".join(combined) + ". ", kind=concept_words.kind, provenance=provenance
    )


def _concept_words(record: EventRecord, res: ProviderResources, *, source_text: str, kind: ProviderKind) -> ContextText:
    matches = match_concepts(source_text, res.graph, res.exclusions_for(record))
    triples = select_triples(matches, res.word_predicates, res.triples_per_record) if matches else []
    return render(triples, kind)


def _concept_sentences(record: EventRecord, res: ProviderResources) -> ContextText:
    matches = match_concepts(record.event_text, res.graph, res.exclusions_for(record))
    triples = select_triples(matches, res.sentence_predicates, res.triples_per_record) if matches else []
    return render(triples, ProviderKind.CONCEPT_SENTENCES)


def _synonyms_fragment(record: EventRecord, res: ProviderResources) -> ContextText:
    # Standalone chain fragment: only the synonyms that the event's concept
    # words unlock, so a chain's fragment set stays independent of order.
    base_words = _concept_words(
        record, res, source_text=record.event_text, kind=ProviderKind.CONCEPT_WORDS
    )
    base = _phrases_of(base_words)
    added: list[str] = []
    for phrase in base:
        synonym = res.lexicon.top(phrase)
        if synonym is not None and synonym not in base and synonym not in added:
            added.append(synonym)
    if not added:
        return EMPTY_CONTEXT
    provenance = ({"provider": ProviderKind.SYNONYMS.value, "added": tuple(added), "phrases": tuple(added)},)
    return ContextText(text=", ".join(added) + ". ", kind=ProviderKind.SYNONYMS, provenance=provenance)


def run_provider(kind: ProviderKind, record: EventRecord, res: ProviderResources) -> ContextText:
    if kind is ProviderKind.CONCEPT_WORDS:
        return _concept_words(record, res, source_text=record.event_text, kind=kind)
    if kind is ProviderKind.PLACE_CONCEPT_WORDS:
        return _concept_words(record, res, source_text=record.place_text, kind=kind)
    if kind is ProviderKind.CONCEPT_SENTENCES:
        return _concept_sentences(record, res)
    if kind is ProviderKind.CAPTIONS:
        return caption_context(record, res.captions)
    if kind is ProviderKind.FACIAL_EXPRESSIONS:
        return facial_expression_context(record, res.expressions)
    if kind is ProviderKind.SYNONYMS:
        return _synonyms_fragment(record, res)
    raise ValueError(f"unknown provider kind {kind}")


def build_context_chain(
    record: EventRecord,
    chain: list[ProviderKind] | tuple[ProviderKind, ...],
    res: ProviderResources,
) -> ContextText:
    """Run each provider in chain order and join the nonempty fragments."""
    if len(set(chain)) != len(chain):
        raise ValueError("chain kinds must be distinct")
    fragments = [run_provider(kind, record, res) for kind in chain]
    texts = [frag.text.strip() for frag in fragments if frag]
    if not texts:
        return EMPTY_CONTEXT
    provenance = tuple(note for frag in fragments for note in frag.provenance)
    return ContextText(text=" ".join(texts), kind=None, provenance=provenance)


def load_captions(path) -> CaptionSidecar:
    """JSON object file: image_id -> caption string."""
    with open(path, encoding="utf-8") as handle:
        doc = json.load(handle)
    if not isinstance(doc, dict) or not all(isinstance(v, str) for v in doc.values()):
        raise SidecarError(f"{path}: caption sidecar must map image_id to string")
    return CaptionSidecar(captions=dict(doc))


def load_expressions(path) -> FESidecar:
    """CSV rows: image_id, person_id, emotion. Header detected by 'image_id'."""
    labels: dict[tuple[str, int], str] = {}
    with open(path, encoding="utf-8", newline="") as handle:
        for line_no, row in enumerate(csv.reader(handle), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if line_no == 1 and row[0].strip().lower() == "image_id":
                continue
            if len(row) != 3:
                raise SidecarError(f"{path} line {line_no}: expected 3 columns, got {len(row)}")
            image_id, person_text, emotion = (cell.strip() for cell in row)
            try:
                person_id = int(person_text)
            except ValueError as exc:
                raise SidecarError(f"{path} line {line_no}: bad person id {person_text!r}") from exc
            if emotion not in EMOTION_CLASSES:
                raise SidecarError(f"{path} line {line_no}: unknown emotion {emotion!r}")
            labels[(image_id, person_id)] = emotion
    return FESidecar(labels=labels)


def load_synonyms(path) -> SynonymLexicon:
    """JSON object file: phrase -> array of synonym phrases, best first."""
    with open(path, encoding="utf-8") as handle:
        doc = json.load(handle)
    if not isinstance(doc, dict):
        raise SidecarError(f"{path}: synonym lexicon must be a JSON object")
    entries: dict[str, tuple[str, ...]] = {}
    for phrase, synonyms in doc.items():
        if not isinstance(synonyms, list) or not all(isinstance(s, str) for s in synonyms):
            raise SidecarError(f"{path}: synonyms of {phrase!r} must be an array of strings")
        entries[phrase] = tuple(synonyms)
    return SynonymLexicon(entries=entries)
