"""Nucleus (top-p) sampling from a trained model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembler import PromptSequence, Tokenizer
from .model import Parameters, forward
from .rng import SplitMix64


@dataclass(frozen=True)
class DecodeConfig:
    top_p: float = 0.9
    num_samples: int = 5
    max_new_tokens: int = 16
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")
        if self.num_samples < 1:
            raise ValueError("num_samples must be positive")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be positive")


def nucleus(probs: np.ndarray, top_p: float) -> tuple[np.ndarray, np.ndarray]:
    """Token ids of the nucleus and their renormalized probabilities.

    The nucleus is the smallest set of highest-probability tokens whose
    total mass reaches top_p; ties between equal probabilities resolve in
    ascending id order. top_p = 1.0 keeps the entire vocabulary.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if top_p >= 1.0:
        ids = np.arange(probs.size)
    else:
        order = np.argsort(-probs, kind="stable")
        cum = np.cumsum(probs[order])
        cut = int(np.searchsorted(cum, top_p, side="left")) + 1
        ids = np.sort(order[: min(cut, probs.size)])
    kept = probs[ids]
    return ids, kept / kept.sum()


def _draw(ids: np.ndarray, renorm: np.ndarray, rng: SplitMix64) -> int:
    u = rng.next_float()
    cum = np.cumsum(renorm)
    j = int(np.searchsorted(cum, u, side="right"))
    return int(ids[min(j, ids.size - 1)])


def generate(
    params: Parameters,
    prefix: PromptSequence,
    tokenizer: Tokenizer,
    config: DecodeConfig | None = None,
) -> list[str]:
    """num_samples decoded continuations of the prefix.

    Each continuation extends the prefix one token at a time, drawing from
    the renormalized nucleus with the seeded generator, and stops at <eos>
    or after max_new_tokens. Identical inputs and seed give identical
    outputs. Sampled <eos> is dropped from the decoded text.
    """
    if prefix.has_inference:
        raise ValueError("prefix must not contain an inference block")
    cfg = config or DecodeConfig()
    rng = SplitMix64(cfg.seed)
    outputs: list[str] = []
    for _ in range(cfg.num_samples):
        tokens = list(prefix.tokens)
        new: list[int] = []
        for _step in range(cfg.max_new_tokens):
            if len(tokens) >= params.config.max_len:
                break
            log_probs = forward(params, tokens, prefix.visual)
            probs = np.exp(log_probs[-1])
            ids, renorm = nucleus(probs, cfg.top_p)
            token = _draw(ids, renorm, rng)
            if token == tokenizer.eos_id:
                break
            tokens.append(token)
            new.append(token)
        outputs.append(tokenizer.decode(new))
    return outputs
