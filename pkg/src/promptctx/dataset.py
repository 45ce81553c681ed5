"""Event records: loading, validation, canonical serialization, subsampling.

A record file is JSON Lines: one object per line with exactly the keys
``record_id``, ``image_id``, ``event``, ``place``, ``persons`` (array of
integers) and ``intent`` / ``before`` / ``after`` (arrays of strings).
The canonical line form (fixed key order, compact separators, UTF-8,
no ASCII escaping) is what ``record_to_line`` emits and what the
``validate`` CLI subcommand checks byte-for-byte.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .rng import sample_indices

RELATIONS = ("intent", "before", "after")

_RECORD_KEYS = ("record_id", "image_id", "event", "place", "persons", "intent", "before", "after")

# Canonical person surface form. Tags are rendered "Person-N" and matched
# case-insensitively at word boundaries (hyphen counts as a word character,
# so "person-41" never yields tag 4).
_PERSON_RE = re.compile(r"(?i)\bperson-(\d+)\b")


class RecordError(ValueError):
    """A record file line that cannot be loaded, with its line number."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class PersonTag:
    """Numerical tag of one person in the image; rendered as ``Person-N``."""

    id: int

    def __post_init__(self):
        if self.id < 1:
            raise ValueError(f"person tag must be >= 1, got {self.id}")

    def surface(self) -> str:
        return f"Person-{self.id}"


@dataclass(frozen=True)
class EventRecord:
    """One image-anchored event with its annotated inferences.

    ``inferences`` always carries all three relation keys; a relation
    with no annotations maps to an empty list.
    """

    record_id: str
    image_id: str
    event_text: str
    place_text: str
    persons: tuple[PersonTag, ...] = ()
    inferences: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.record_id:
            raise ValueError("record_id must be nonempty")
        if not self.event_text:
            raise ValueError(f"record {self.record_id}: event text must be nonempty")
        filled = {rel: list(self.inferences.get(rel, [])) for rel in RELATIONS}
        unknown = set(self.inferences) - set(RELATIONS)
        if unknown:
            raise ValueError(f"record {self.record_id}: unknown relations {sorted(unknown)}")
        for rel, refs in filled.items():
            for ref in refs:
                if not isinstance(ref, str) or not ref:
                    raise ValueError(f"record {self.record_id}: empty {rel} reference")
        object.__setattr__(self, "inferences", filled)
        known = {tag.id for tag in self.persons}
        mentioned = [tag.id for tag in persons_in_text(self.event_text)]
        missing = [t for t in mentioned if t not in known]
        if missing:
            raise ValueError(
                f"record {self.record_id}: event text mentions person tags "
                f"{missing} absent from persons field {sorted(known)}"
            )

    def references(self, relation: str) -> list[str]:
        return self.inferences[relation]


@dataclass(frozen=True)
class SubsampleSpec:
    """How many records to draw and with which seed.

    mode "count": value is an exact positive integer.
    mode "fraction": value in (0, 1]; size is round-half-up of value * N.
    """

    mode: str
    value: float
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("count", "fraction"):
            raise ValueError(f"mode must be 'count' or 'fraction', got {self.mode!r}")
        if self.mode == "count":
            if self.value != int(self.value) or self.value < 1:
                raise ValueError(f"count must be a positive integer, got {self.value}")
        elif not 0.0 < self.value <= 1.0:
            raise ValueError(f"fraction must lie in (0, 1], got {self.value}")

    def size(self, n: int) -> int:
        if self.mode == "count":
            k = int(self.value)
            if k > n:
                raise ValueError(f"count {k} exceeds corpus size {n}")
            return k
        # round half up, so 3.5 -> 4
        return min(n, int(self.value * n + 0.5))


def persons_in_text(text: str) -> list[PersonTag]:
    """Distinct person tags whose surface form occurs in text, first-occurrence order."""
    seen: list[PersonTag] = []
    ids: set[int] = set()
    for match in _PERSON_RE.finditer(text):
        tag_id = int(match.group(1))
        if tag_id >= 1 and tag_id not in ids:
            ids.add(tag_id)
            seen.append(PersonTag(tag_id))
    return seen


def record_to_line(record: EventRecord) -> str:
    """Canonical one-line serialization (fixed key order, compact, UTF-8)."""
    doc = {
        "record_id": record.record_id,
        "image_id": record.image_id,
        "event": record.event_text,
        "place": record.place_text,
        "persons": [tag.id for tag in record.persons],
        "intent": record.inferences["intent"],
        "before": record.inferences["before"],
        "after": record.inferences["after"],
    }
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False)


def record_from_line(line: str, line_no: int | None = None) -> EventRecord:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordError(f"not valid JSON ({exc.msg})", line_no) from exc
    if not isinstance(doc, dict):
        raise RecordError("line is not a JSON object", line_no)
    missing = [k for k in _RECORD_KEYS if k not in doc]
    if missing:
        raise RecordError(f"missing keys {missing}", line_no)
    extra = [k for k in doc if k not in _RECORD_KEYS]
    if extra:
        raise RecordError(f"unknown keys {extra}", line_no)
    persons = doc["persons"]
    if not isinstance(persons, list) or not all(isinstance(p, int) and not isinstance(p, bool) for p in persons):
        raise RecordError("persons must be an array of integers", line_no)
    for rel in RELATIONS:
        refs = doc[rel]
        if not isinstance(refs, list) or not all(isinstance(r, str) for r in refs):
            raise RecordError(f"{rel} must be an array of strings", line_no)
    try:
        return EventRecord(
            record_id=str(doc["record_id"]),
            image_id=str(doc["image_id"]),
            event_text=str(doc["event"]),
            place_text=str(doc["place"]),
            persons=tuple(PersonTag(p) for p in persons),
            inferences={rel: list(doc[rel]) for rel in RELATIONS},
        )
    except ValueError as exc:
        raise RecordError(str(exc), line_no) from exc


def load_records(path) -> list[EventRecord]:
    """Load a record file, enforcing per-record invariants and unique ids.

    Raises RecordError with the offending line number on the first
    malformed line or duplicated record_id.
    """
    records: list[EventRecord] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            record = record_from_line(line, line_no)
            if record.record_id in seen_ids:
                raise RecordError(f"duplicate record_id {record.record_id!r}", line_no)
            seen_ids.add(record.record_id)
            records.append(record)
    return records


def save_records(records: list[EventRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(record_to_line(record) + "\n")


def subsample(records: list[EventRecord], spec: SubsampleSpec) -> list[EventRecord]:
    """Uniform seeded draw of spec.size(len(records)) records, input order preserved.

    The draw is a partial Fisher-Yates over indices (see rng.sample_indices)
    so the same spec always selects the same subset on every platform.
    """
    k = spec.size(len(records))
    chosen = sample_indices(len(records), k, spec.seed)
    return [records[i] for i in chosen]
