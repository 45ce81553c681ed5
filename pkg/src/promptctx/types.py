"""Context text and provider kinds, shared by the knowledge and context modules."""

from __future__ import annotations

import enum
from dataclasses import dataclass


class ProviderKind(enum.Enum):
    """The six context providers. Values are the canonical report abbreviations."""

    CONCEPT_WORDS = "CW"
    CONCEPT_SENTENCES = "CS"
    PLACE_CONCEPT_WORDS = "PCW"
    SYNONYMS = "Syns"
    CAPTIONS = "C"
    FACIAL_EXPRESSIONS = "FE"

    @classmethod
    def from_label(cls, label: str) -> "ProviderKind":
        for kind in cls:
            if kind.value == label or kind.name == label.upper():
                return kind
        raise ValueError(f"unknown provider kind {label!r}")


@dataclass(frozen=True)
class ContextText:
    """One rendered context fragment plus where it came from.

    ``text`` is empty or sentence-terminated: it ends with "." optionally
    followed by a single trailing space. ``provenance`` is an ordered tuple
    of per-provider notes (dicts with a "provider" key plus provider-specific
    detail: source triples, emotion labels, caption image id, phrases).
    ``kind`` is None for the merged output of a provider chain.
    """

    text: str
    kind: ProviderKind | None = None
    provenance: tuple = ()

    def __post_init__(self):
        if self.text and not (self.text.endswith(".") or self.text.endswith(". ")):
            raise ValueError(f"context text must be sentence-terminated: {self.text!r}")

    def __bool__(self) -> bool:
        return bool(self.text)


EMPTY_CONTEXT = ContextText(text="")
