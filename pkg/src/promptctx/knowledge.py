"""Weighted commonsense triple graph: loading, concept matching, selection, rendering.

The graph is an edge list of (subject, predicate, object, weight) rows.
Subjects form the phrase dictionary scanned for in text; the objects of
selected triples become context words, or whole triples become context
sentences via a fixed per-predicate template table.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field

from .types import ContextText, ProviderKind

STANDARD_PREDICATES = frozenset(
    {"AtLocation", "CapableOf", "HasA", "HasProperty", "IsA", "PartOf"}
)

# Predicates where subject == object carries no information.
_IRREFLEXIVE = frozenset({"IsA", "PartOf"})

# One sentence per triple. Predicates outside the table fall back to
# "{subject} {predicate} {object}."
SENTENCE_TEMPLATES = {
    "HasProperty": "{s} is {o}.",
    "IsA": "{s} is a {o}.",
    "PartOf": "{s} is a part of {o}.",
    "HasA": "{s} has {o}.",
    "CapableOf": "{s} can {o}.",
    "AtLocation": "{s} can be found at {o}.",
}

# Default concept-match exclusions: 50 high-frequency function words.
# Person-tag surfaces are added per record by the context providers.
STOPWORDS = frozenset(
    """
    a an the and or but not no of in on at by for with from to up down
    out over under is are was were be been being am do does did have has
    had he she it they them his her its their this that these those you
    """.split()
)

# Word tokens are maximal runs of alphanumerics with internal hyphens or
# apostrophes, so "person-4" and "o'clock" are single words. Matching is
# defined on these runs: a phrase matches only where it starts and ends
# on run boundaries.
_WORD_RE = re.compile(r"[A-Za-z0-9]+(?:['-][A-Za-z0-9]+)*")


class GraphError(ValueError):
    """An edge-list row that cannot be loaded, with its line number."""


def normalize_phrase(phrase: str) -> str:
    return " ".join(phrase.lower().split())


@dataclass(frozen=True)
class Triple:
    """One weighted subject-predicate-object edge. Phrases are lowercase."""

    subject: str
    predicate: str
    object: str
    weight: float

    def __post_init__(self):
        if not self.subject or not self.object:
            raise ValueError("subject and object must be nonempty")
        if not self.predicate:
            raise ValueError("predicate must be nonempty")
        if self.weight < 0:
            raise ValueError(f"weight must be nonnegative, got {self.weight}")
        if self.predicate in _IRREFLEXIVE and self.subject == self.object:
            raise ValueError(
                f"{self.predicate} triple with subject == object ({self.subject!r})"
            )


@dataclass(frozen=True)
class ConceptMatch:
    """A dictionary phrase found in text, with the triples it unlocks."""

    surface: str
    start: int
    end: int
    triples: tuple[Triple, ...]

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError("match span must be nonempty")


class KnowledgeGraph:
    """Immutable triple store indexed by subject phrase."""

    def __init__(self, triples: list[Triple] | tuple[Triple, ...]):
        self.triples: tuple[Triple, ...] = tuple(triples)
        index: dict[str, list[Triple]] = {}
        for triple in self.triples:
            index.setdefault(triple.subject, []).append(triple)
        self._by_subject: dict[str, tuple[Triple, ...]] = {
            s: tuple(ts) for s, ts in index.items()
        }
        # first word -> phrases as word tuples, longest first, for the scanner
        self._phrases_by_first: dict[str, list[tuple[str, ...]]] = {}
        for subject in self._by_subject:
            words = tuple(subject.split())
            self._phrases_by_first.setdefault(words[0], []).append(words)
        for phrases in self._phrases_by_first.values():
            phrases.sort(key=lambda ws: (-len(ws), ws))

    def __len__(self) -> int:
        return len(self.triples)

    @property
    def subjects(self) -> set[str]:
        return set(self._by_subject)

    def triples_for(self, subject: str) -> tuple[Triple, ...]:
        return self._by_subject.get(subject, ())


def load_graph(path) -> KnowledgeGraph:
    """Load a comma-delimited edge list (subject, predicate, object, weight).

    A header row is skipped when its first cell is literally "subject".
    Unknown predicate names are kept verbatim; they only surface when a
    selection explicitly asks for them.
    """
    triples: list[Triple] = []
    with open(path, encoding="utf-8", newline="") as handle:
        for line_no, row in enumerate(csv.reader(handle), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if line_no == 1 and row[0].strip().lower() == "subject":
                continue
            if len(row) != 4:
                raise GraphError(f"line {line_no}: expected 4 columns, got {len(row)}")
            subject, predicate, obj, weight_text = (cell.strip() for cell in row)
            try:
                weight = float(weight_text)
            except ValueError as exc:
                raise GraphError(f"line {line_no}: weight {weight_text!r} is not a number") from exc
            try:
                triples.append(
                    Triple(
                        subject=normalize_phrase(subject),
                        predicate=predicate,
                        object=normalize_phrase(obj),
                        weight=weight,
                    )
                )
            except ValueError as exc:
                raise GraphError(f"line {line_no}: {exc}") from exc
    return KnowledgeGraph(triples)


def _word_runs(text: str) -> list[tuple[str, int, int]]:
    return [(m.group(0).lower(), m.start(), m.end()) for m in _WORD_RE.finditer(text)]


def match_concepts(
    text: str,
    graph: KnowledgeGraph,
    exclusions: frozenset[str] | set[str] = frozenset(),
) -> list[ConceptMatch]:
    """Scan text for subject phrases: case-insensitive, word-boundary,
    longest-match-wins, left to right, non-overlapping.

    Excluded phrases behave as if absent from the dictionary, so a shorter
    non-excluded phrase at the same position can still match. Phrases are
    matched on word runs; multi-word phrases require single spaces in text.
    """
    runs = _word_runs(text)
    words = [w for w, _, _ in runs]
    matches: list[ConceptMatch] = []
    i = 0
    while i < len(runs):
        found = None
        for phrase_words in graph._phrases_by_first.get(words[i], ()):
            n = len(phrase_words)
            if i + n <= len(runs) and tuple(words[i : i + n]) == phrase_words:
                phrase = " ".join(phrase_words)
                if phrase in exclusions:
                    continue
                # multi-word phrases must be separated by exactly one space
                if n > 1 and text[runs[i][1] : runs[i + n - 1][2]].lower() != phrase:
                    continue
                found = (phrase, n)
                break
        if found is None:
            i += 1
            continue
        phrase, n = found
        matches.append(
            ConceptMatch(
                surface=phrase,
                start=runs[i][1],
                end=runs[i + n - 1][2],
                triples=graph.triples_for(phrase),
            )
        )
        i += n
    return matches


def select_triples(
    matches: list[ConceptMatch],
    predicates: list[str] | tuple[str, ...],
    k: int,
) -> list[Triple]:
    """Top-k triples from the matched subjects, restricted to the given predicates.

    Ordered by weight descending; ties broken ascending by (subject,
    predicate, object) so the result is a total order independent of
    input permutation.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    wanted = set(predicates)
    pool = [t for m in matches for t in m.triples if t.predicate in wanted]
    pool.sort(key=lambda t: (-t.weight, t.subject, t.predicate, t.object))
    return pool[:k]


def render(triples: list[Triple], mode: ProviderKind) -> ContextText:
    """Render selected triples as context text.

    Words modes emit the deduplicated object phrases in selection order,
    comma-joined and terminated with ". ". Sentence mode emits one
    templated sentence per triple, space-joined.
    """
    if not triples:
        return ContextText(text="", kind=mode)
    provenance = ({"provider": mode.value, "triples": tuple(triples)},)
    if mode in (ProviderKind.CONCEPT_WORDS, ProviderKind.PLACE_CONCEPT_WORDS):
        phrases: list[str] = []
        for triple in triples:
            if triple.object not in phrases:
                phrases.append(triple.object)
        provenance = ({"provider": mode.value, "triples": tuple(triples), "phrases": tuple(phrases)},)
        return ContextText(text=", ".join(phrases) + ". ", kind=mode, provenance=provenance)
    if mode is ProviderKind.CONCEPT_SENTENCES:
        sentences = [
            SENTENCE_TEMPLATES.get(t.predicate, "{s} {p} {o}.").format(
                s=t.subject, p=t.predicate, o=t.object
            )
            for t in triples
        ]
        return ContextText(text=" ".join(sentences), kind=mode, provenance=provenance)
    raise ValueError(f"render mode must be a concept-words or sentences kind, got {mode}")
