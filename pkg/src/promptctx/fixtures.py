"""Synthetic corpus generator for end-to-end evaluation of context use.

Each record hides one bit. The bit never appears in the event or place
text; the only trace of it is a signal word inside the record's caption
sidecar ("amber" vs "violet" lighting). The annotated inference for each
relation starts with a verb that is a deterministic function of the bit,
with the two candidate verbs equally likely a priori. A model generating
inferences without captions can therefore do no better than chance on
the verb, while a model that reads the caption can recover it exactly.

Every other reference token is a deterministic function of the visible
input: the noun is named in the event text, the adjective and tool are
fixed per-noun attributes, and the trailing phrase names the place. This
keeps the verb the only systematic difference between context-aware and
context-free generations, so corpus metrics stay comparable while
verb accuracy separates the two models sharply.

Emitted files: records.jsonl, captions.json, expressions.csv, graph.csv,
synonyms.json, and fixture_key.json (the hidden bits and expected verbs,
for scoring).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .context import EMOTION_CLASSES
from .dataset import RELATIONS, EventRecord, PersonTag, save_records
from .rng import SplitMix64, derive_seed

SIGNALS = ("amber", "violet")

TARGET_VERBS = {
    "intent": ("open", "seal"),
    "before": ("carry", "weigh"),
    "after": ("stack", "wrap"),
}

NOUNS = ("crate", "basket", "jar", "bundle", "ledger", "lantern", "parcel", "kettle")

NOUN_ADJECTIVE = {
    "crate": "heavy",
    "basket": "woven",
    "jar": "glazed",
    "bundle": "corded",
    "ledger": "leather",
    "lantern": "brass",
    "parcel": "stamped",
    "kettle": "copper",
}

NOUN_TOOL = {
    "crate": "crowbar",
    "basket": "handcart",
    "jar": "tongs",
    "bundle": "twine",
    "ledger": "stylus",
    "lantern": "taper",
    "parcel": "knife",
    "kettle": "trivet",
}

# Varied token lengths so the caption's position shifts between records.
ACTIONS = (
    "lifts",
    "inspects",
    "steadies",
    "reaches for",
    "leans over",
    "kneels beside",
    "turns toward",
)

PLACES = (
    "storeroom",
    "workshop",
    "cellar",
    "attic",
    "courtyard",
    "pantry",
    "gallery",
    "boathouse",
)

CAPTION_TEMPLATE = "a lamp casts {signal} light over the scene"
REFERENCE_TEMPLATE = "{verb} it and set the {adjective} {noun} with the {tool} by the {place}"

FIXTURE_FILES = (
    "records.jsonl",
    "captions.json",
    "expressions.csv",
    "graph.csv",
    "synonyms.json",
    "fixture_key.json",
)


@dataclass(frozen=True)
class FixtureBundle:
    records: list[EventRecord]
    captions: dict[str, str]
    expressions: list[tuple[str, int, str]]
    graph_rows: list[tuple[str, str, str, float]]
    synonyms: dict[str, list[str]]
    key: dict


def _graph_rows() -> list[tuple[str, str, str, float]]:
    rows: list[tuple[str, str, str, float]] = []
    for noun in NOUNS:
        rows.append((noun, "HasProperty", NOUN_ADJECTIVE[noun], 2.0))
        rows.append((noun, "PartOf", "the household stock", 1.5))
        rows.append((noun, "AtLocation", "the shelf", 1.0))
    for place in PLACES:
        rows.append((place, "HasProperty", "quiet", 1.2))
        rows.append((place, "PartOf", "the old building", 1.0))
    rows.append(("lamp", "CapableOf", "cast light", 1.0))
    rows.append(("woven basket", "HasProperty", "sturdy", 2.5))
    rows.append(("copper kettle", "HasProperty", "polished", 2.5))
    return rows


def _synonyms() -> dict[str, list[str]]:
    entries = {adj: [f"{adj}-looking"] for adj in NOUN_ADJECTIVE.values()}
    entries.update(
        {
            "heavy": ["weighty"],
            "woven": ["plaited"],
            "quiet": ["calm"],
            "open": ["unfasten"],
            "seal": ["fasten"],
        }
    )
    return {k: sorted(set(v)) for k, v in entries.items()}


def generate_fixture(n_records: int = 2000, seed: int = 0) -> FixtureBundle:
    """Deterministic corpus of n_records hidden-bit records."""
    if n_records < 1:
        raise ValueError("n_records must be positive")
    records: list[EventRecord] = []
    captions: dict[str, str] = {}
    expressions: list[tuple[str, int, str]] = []
    key_records: dict[str, dict] = {}
    for i in range(n_records):
        rng = SplitMix64(derive_seed(seed, f"record-{i}"))
        bit = rng.next_below(2)
        noun = NOUNS[rng.next_below(len(NOUNS))]
        action = ACTIONS[rng.next_below(len(ACTIONS))]
        place = PLACES[rng.next_below(len(PLACES))]
        emotion = EMOTION_CLASSES[rng.next_below(len(EMOTION_CLASSES))]

        record_id = f"rec-{i:04d}"
        image_id = f"img-{i:04d}"
        inferences = {
            rel: [
                REFERENCE_TEMPLATE.format(
                    verb=TARGET_VERBS[rel][bit],
                    adjective=NOUN_ADJECTIVE[noun],
                    noun=noun,
                    tool=NOUN_TOOL[noun],
                    place=place,
                )
            ]
            for rel in RELATIONS
        }
        records.append(
            EventRecord(
                record_id=record_id,
                image_id=image_id,
                event_text=f"Person-1 {action} the {noun}",
                place_text=f"in the {place}",
                persons=(PersonTag(1),),
                inferences=inferences,
            )
        )
        captions[image_id] = CAPTION_TEMPLATE.format(signal=SIGNALS[bit])
        expressions.append((image_id, 1, emotion))
        key_records[record_id] = {
            "bit": bit,
            "signal": SIGNALS[bit],
            "expected": {rel: TARGET_VERBS[rel][bit] for rel in RELATIONS},
        }
    key = {
        "seed": seed,
        "n_records": n_records,
        "signals": {str(i): s for i, s in enumerate(SIGNALS)},
        "verbs": {rel: list(v) for rel, v in TARGET_VERBS.items()},
        "records": key_records,
    }
    return FixtureBundle(
        records=records,
        captions=captions,
        expressions=expressions,
        graph_rows=_graph_rows(),
        synonyms=_synonyms(),
        key=key,
    )


def write_fixture(bundle: FixtureBundle, out_dir) -> dict[str, Path]:
    """Write all fixture files into out_dir; returns name -> path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in FIXTURE_FILES}

    save_records(bundle.records, paths["records.jsonl"])
    with open(paths["captions.json"], "w", encoding="utf-8") as handle:
        json.dump(bundle.captions, handle, indent=0, sort_keys=True, ensure_ascii=False)
        handle.write("\n")
    with open(paths["expressions.csv"], "w", encoding="utf-8") as handle:
        handle.write("image_id,person_id,emotion\n")
        for image_id, person_id, emotion in bundle.expressions:
            handle.write(f"{image_id},{person_id},{emotion}\n")
    with open(paths["graph.csv"], "w", encoding="utf-8") as handle:
        handle.write("subject,predicate,object,weight\n")
        for subject, predicate, obj, weight in bundle.graph_rows:
            handle.write(f"{subject},{predicate},{obj},{weight}\n")
    with open(paths["synonyms.json"], "w", encoding="utf-8") as handle:
        json.dump(bundle.synonyms, handle, indent=0, sort_keys=True, ensure_ascii=False)
        handle.write("\n")
    with open(paths["fixture_key.json"], "w", encoding="utf-8") as handle:
        json.dump(bundle.key, handle, indent=0, sort_keys=True, ensure_ascii=False)
        handle.write("\n")
    return paths
