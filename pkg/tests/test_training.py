"""SGD training loop, training log, checkpoint serialization."""

import numpy as np
import pytest

from promptctx.assembler import PromptSequence, SpanLabel, build_vocab, assemble_training
from promptctx.dataset import EventRecord, PersonTag
from promptctx.model import LossBreakdown, ModelConfig, init_model
from promptctx.training import (
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
    training_log_lines,
)
from promptctx.types import ContextText

V, E, P, R, INF = (
    SpanLabel.VISUAL,
    SpanLabel.EVENT,
    SpanLabel.PLACE,
    SpanLabel.RELATION_PROMPT,
    SpanLabel.INFERENCE,
)


def tiny_config(vocab_size, **overrides):
    fields = dict(vocab_size=vocab_size, layers=1, heads=2, embed_dim=16, max_len=32, visual_dim=4, seed=0)
    fields.update(overrides)
    return ModelConfig(**fields)


def toy_sequences():
    """Small copyable corpus: each relation marker deterministically
    selects the next token."""
    records = [
        EventRecord(
            record_id=f"r{i}",
            image_id=f"img{i}",
            event_text=f"Person-1 moves item-{i % 3}",
            place_text="in the room",
            persons=(PersonTag(1),),
            inferences={"intent": [f"keep item-{i % 3} safe"]},
        )
        for i in range(12)
    ]
    corpus = [r.event_text for r in records]
    corpus += [r.place_text for r in records]
    corpus += [ref for r in records for ref in (r.inferences["intent"])]
    tokenizer = build_vocab(corpus)
    seqs = [
        assemble_training(r, ContextText(""), "intent", r.inferences["intent"][0], tokenizer)
        for r in records
    ]
    return tokenizer, seqs


def test_train_config_validation():
    with pytest.raises(ValueError, match="optimizer"):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError, match="learning_rate"):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError, match="batch_size"):
        TrainConfig(batch_size=0)


def test_epochs_zero_returns_initial_params():
    tokenizer, seqs = toy_sequences()
    config = tiny_config(len(tokenizer))
    result = train(config, seqs, epochs=0)
    assert result.epoch_losses == []
    assert result.params.checksum() == init_model(config).checksum()
    with pytest.raises(ValueError):
        train(config, [], epochs=1)
    with pytest.raises(ValueError):
        train(config, seqs, epochs=-1)


def test_training_reduces_loss():
    tokenizer, seqs = toy_sequences()
    config = tiny_config(len(tokenizer))
    tc = TrainConfig(learning_rate=0.5, batch_size=4, shuffle_seed=7)
    result = train(config, seqs, epochs=5, train_config=tc)
    totals = [b.total for b in result.epoch_losses]
    assert len(totals) == 5
    assert totals[-1] < totals[0]
    # mostly monotone on this toy problem
    drops = sum(1 for a, b in zip(totals, totals[1:]) if b <= a)
    assert drops >= 3


def test_training_is_deterministic_and_seed_sensitive():
    tokenizer, seqs = toy_sequences()
    config = tiny_config(len(tokenizer))
    tc = TrainConfig(batch_size=4, shuffle_seed=7)
    a = train(config, seqs, epochs=2, train_config=tc)
    b = train(config, seqs, epochs=2, train_config=tc)
    assert a.params.checksum() == b.params.checksum()
    assert [x.total for x in a.epoch_losses] == [x.total for x in b.epoch_losses]
    c = train(config, seqs, epochs=2, train_config=TrainConfig(batch_size=4, shuffle_seed=8))
    assert c.params.checksum() != a.params.checksum()


def test_momentum_changes_updates():
    tokenizer, seqs = toy_sequences()
    config = tiny_config(len(tokenizer))
    plain = train(config, seqs, epochs=2, train_config=TrainConfig(batch_size=4, learning_rate=0.1))
    heavy = train(
        config, seqs, epochs=2,
        train_config=TrainConfig(batch_size=4, learning_rate=0.1, momentum=0.9),
    )
    assert plain.params.checksum() != heavy.params.checksum()


def test_adam_optimizer_runs():
    tokenizer, seqs = toy_sequences()
    config = tiny_config(len(tokenizer))
    tc = TrainConfig(optimizer="adam", learning_rate=0.01, batch_size=4)
    result = train(config, seqs, epochs=3, train_config=tc)
    totals = [b.total for b in result.epoch_losses]
    assert totals[-1] < totals[0]


def test_training_log_lines_format():
    losses = [
        LossBreakdown(1.25, 0.5, 0.0, 2.0, 10),
        LossBreakdown(1.0, 0.25, 0.0, 1.5, 10),
    ]
    text = training_log_lines(losses)
    lines = text.splitlines()
    assert lines[0] == "epoch,event_nll,place_nll,context_nll,inference_nll,total"
    assert lines[1] == "1,1.250000,0.500000,0.000000,2.000000,3.750000"
    assert lines[2] == "2,1.000000,0.250000,0.000000,1.500000,2.750000"
    assert text.endswith("\n")


def test_checkpoint_round_trip(tmp_path):
    params = init_model(tiny_config(11))
    path = tmp_path / "ck.bin"
    save_checkpoint(path, params, vocab_hash="abc123")
    loaded, vocab_hash = load_checkpoint(path)
    assert vocab_hash == "abc123"
    assert loaded.config == params.config
    assert loaded.checksum() == params.checksum()
    for name in params.names:
        assert np.array_equal(loaded.arrays[name], params.arrays[name])


def test_checkpoint_rejects_corruption(tmp_path):
    params = init_model(tiny_config(11))
    path = tmp_path / "ck.bin"
    save_checkpoint(path, params)

    data = path.read_bytes()
    truncated = tmp_path / "trunc.bin"
    truncated.write_bytes(data[:-16])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(truncated)

    padded = tmp_path / "padded.bin"
    padded.write_bytes(data + b"\x00" * 8)
    with pytest.raises(ValueError, match="trailing"):
        load_checkpoint(padded)

    bad_header = tmp_path / "bad.bin"
    newline = data.index(b"\n")
    bad_header.write_bytes(b'{"format": "other"}' + data[newline:])
    with pytest.raises(ValueError, match="format"):
        load_checkpoint(bad_header)
