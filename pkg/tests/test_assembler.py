"""Tokenizer and prompt-sequence assembly."""

import numpy as np
import pytest

from promptctx.assembler import (
    BOS,
    EOS,
    PAD,
    RELATION_MARKERS,
    SPECIAL_TOKENS,
    UNK,
    OverLengthError,
    PromptPlan,
    PromptSequence,
    SpanLabel,
    Tokenizer,
    assemble_prefix,
    assemble_training,
    build_vocab,
    tokenize,
)
from promptctx.context import CaptionSidecar, FESidecar, ProviderResources, SynonymLexicon
from promptctx.dataset import RELATIONS, EventRecord, PersonTag
from promptctx.knowledge import KnowledgeGraph
from promptctx.types import ContextText, ProviderKind


def make_record():
    return EventRecord(
        record_id="r1",
        image_id="img1",
        event_text="Person-1 lifts the box",
        place_text="in the yard",
        persons=(PersonTag(1),),
        inferences={"intent": ["move it out"]},
    )


def empty_resources(captions=None):
    return ProviderResources(
        graph=KnowledgeGraph([]),
        captions=captions or CaptionSidecar(),
        expressions=FESidecar(),
        lexicon=SynonymLexicon(),
    )


def test_tokenize_rules():
    assert tokenize("Person-1 lifts the box!") == ["person-1", "lifts", "the", "box", "!"]
    assert tokenize("it's a well-made crate.") == ["it's", "a", "well-made", "crate", "."]
    assert tokenize("") == []
    # punctuation splits into single-character tokens
    assert tokenize("a,b") == ["a", ",", "b"]


def test_special_token_ids():
    tok = build_vocab(["alpha beta"])
    assert tok.token_to_id[PAD] == 0
    assert tok.token_to_id[UNK] == 1
    assert tok.token_to_id[BOS] == 2
    assert tok.token_to_id[EOS] == 3
    for offset, rel in enumerate(RELATIONS):
        assert tok.token_to_id[RELATION_MARKERS[rel]] == 4 + offset
        assert tok.relation_ids[rel] == 4 + offset
    assert tok.token_to_id["alpha"] == len(SPECIAL_TOKENS)


def test_build_vocab_order_and_min_count():
    tok = build_vocab(["b a b", "c a"], min_count=2)
    kept = tok.id_to_token[len(SPECIAL_TOKENS):]
    # first-occurrence order among tokens meeting the threshold
    assert kept == ["b", "a"]
    assert tok.counts["b"] == 2 and tok.counts["a"] == 2
    assert tok.encode("c") == [tok.unk_id]
    with pytest.raises(ValueError):
        build_vocab([])


def test_encode_decode_round_trip():
    tok = build_vocab(["the cat sat on the mat"])
    ids = tok.encode("the cat sat")
    assert tok.decode(ids) == "the cat sat"
    assert tok.encode("the dog sat") == [tok.token_to_id["the"], tok.unk_id, tok.token_to_id["sat"]]


def test_dump_load_and_hash(tmp_path):
    tok = build_vocab(["gamma delta gamma"])
    path = tmp_path / "vocab.tsv"
    tok.save(path)
    loaded = Tokenizer.load(path)
    assert loaded.id_to_token == tok.id_to_token
    assert loaded.counts == tok.counts
    assert loaded.vocab_hash() == tok.vocab_hash()
    # hash covers counts, not just the token list
    other = Tokenizer([("gamma", 3), ("delta", 1)])
    assert other.vocab_hash() != tok.vocab_hash()


def test_prompt_sequence_layouts():
    v, e, p, c, r, inf = (
        SpanLabel.VISUAL,
        SpanLabel.EVENT,
        SpanLabel.PLACE,
        SpanLabel.CONTEXT,
        SpanLabel.RELATION_PROMPT,
        SpanLabel.INFERENCE,
    )
    PromptSequence(tokens=(2, 9, 9, 8, 7, 4, 5, 3), spans=(v, e, e, p, c, r, inf, inf), relation="intent")
    # context may instead lead, ahead of the event block
    PromptSequence(tokens=(2, 7, 9, 8, 4, 5, 3), spans=(v, c, e, p, r, inf, inf), relation="intent")
    # blocks may be omitted but never interleaved
    with pytest.raises(ValueError, match="contiguous"):
        PromptSequence(tokens=(2, 9, 8, 9), spans=(v, e, p, e), relation="intent")
    with pytest.raises(ValueError, match="out of order"):
        PromptSequence(tokens=(2, 8, 9), spans=(v, p, e), relation="intent")
    with pytest.raises(ValueError, match="equal length"):
        PromptSequence(tokens=(2, 9), spans=(v,), relation="intent")
    with pytest.raises(ValueError, match="unknown relation"):
        PromptSequence(tokens=(2,), spans=(v,), relation="cause")


def test_prompt_plan_labels():
    plan = PromptPlan(
        train_chain=(ProviderKind.CONCEPT_WORDS, ProviderKind.CAPTIONS),
        infer_chain=(),
    )
    assert plan.train_label == "CW + C"
    assert plan.infer_label == "None"
    with pytest.raises(ValueError, match="distinct"):
        PromptPlan(train_chain=(ProviderKind.CAPTIONS, ProviderKind.CAPTIONS))


def test_assemble_training_layout():
    record = make_record()
    corpus = [record.event_text, record.place_text, "dim light.", "move it out"]
    tok = build_vocab(corpus)
    seq = assemble_training(record, ContextText("dim light."), "intent", "move it out", tok)

    assert seq.tokens[0] == tok.bos_id
    assert seq.spans[0] is SpanLabel.VISUAL
    assert seq.tokens[-1] == tok.eos_id
    assert seq.spans[-1] is SpanLabel.INFERENCE
    marker_pos = seq.tokens.index(tok.relation_ids["intent"])
    assert seq.spans[marker_pos] is SpanLabel.RELATION_PROMPT
    assert seq.has_inference

    labels = [s for i, s in enumerate(seq.spans) if i == 0 or seq.spans[i - 1] != s]
    assert labels == [
        SpanLabel.VISUAL,
        SpanLabel.EVENT,
        SpanLabel.PLACE,
        SpanLabel.CONTEXT,
        SpanLabel.RELATION_PROMPT,
        SpanLabel.INFERENCE,
    ]
    assert seq.span_length(SpanLabel.EVENT) == 4
    assert seq.span_length(SpanLabel.PLACE) == 3
    assert seq.span_length(SpanLabel.CONTEXT) == 3
    assert seq.span_length(SpanLabel.INFERENCE) == 4

    # empty context drops the block entirely
    bare = assemble_training(record, ContextText(""), "intent", "move it out", tok)
    assert SpanLabel.CONTEXT not in bare.spans


def test_assemble_training_context_before_event():
    record = make_record()
    tok = build_vocab([record.event_text, record.place_text, "dim light.", "move it out"])
    seq = assemble_training(
        record, ContextText("dim light."), "intent", "move it out", tok,
        context_position="before_event",
    )
    labels = [s for i, s in enumerate(seq.spans) if i == 0 or seq.spans[i - 1] != s]
    assert labels[:3] == [SpanLabel.VISUAL, SpanLabel.CONTEXT, SpanLabel.EVENT]
    with pytest.raises(ValueError, match="context_position"):
        assemble_training(
            record, ContextText(""), "intent", "move it out", tok, context_position="sideways"
        )


def test_assemble_training_over_length():
    record = make_record()
    tok = build_vocab([record.event_text, record.place_text, "move it out"])
    with pytest.raises(OverLengthError) as err:
        assemble_training(record, ContextText(""), "intent", "move it out", tok, max_len=8)
    assert err.value.total == 13
    assert err.value.max_len == 8
    assert err.value.span_lengths["Event"] == 4
    with pytest.raises(ValueError, match="nonempty"):
        assemble_training(record, ContextText(""), "intent", "", tok)


def test_assemble_prefix():
    record = make_record()
    captions = CaptionSidecar({"img1": "a bright yard"})
    res = empty_resources(captions=captions)
    tok = build_vocab([record.event_text, record.place_text, "a bright yard .", "move it out"])

    plan = PromptPlan(infer_chain=(ProviderKind.CAPTIONS,))
    seq = assemble_prefix(record, plan, "before", res, tok)
    assert not seq.has_inference
    assert seq.tokens[-1] == tok.relation_ids["before"]
    assert SpanLabel.CONTEXT in seq.spans

    bare = assemble_prefix(record, PromptPlan(), "before", res, tok)
    assert SpanLabel.CONTEXT not in bare.spans
    assert bare.tokens[-1] == tok.relation_ids["before"]


def test_visual_vector_carried():
    record = make_record()
    tok = build_vocab([record.event_text, record.place_text, "move it out"])
    visual = np.ones(4)
    seq = assemble_training(record, ContextText(""), "intent", "move it out", tok, visual=visual)
    assert seq.visual is visual
