"""Training loop, optimizers, checkpoints, and the training log format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .assembler import PromptSequence
from .model import (
    LossBreakdown,
    ModelConfig,
    Parameters,
    _scored_positions,
    init_model,
    loss_and_grads,
)
from .rng import SplitMix64


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int):
        self.epoch = epoch
        self.step = step
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings. Plain SGD (momentum 0) is the default; momentum
    and Adam are available behind config."""

    optimizer: str = "sgd"
    learning_rate: float = 0.5
    batch_size: int = 32
    shuffle_seed: int = 0
    momentum: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class TrainResult:
    params: Parameters
    epoch_losses: list[LossBreakdown]  # mean per-sequence breakdown, by epoch


def train(
    config: ModelConfig,
    sequences: list[PromptSequence],
    epochs: int = 5,
    train_config: TrainConfig | None = None,
) -> TrainResult:
    """Initialize from config.seed and run full passes with seeded shuffling.

    Updates use per-token mean gradients; the recorded per-epoch losses
    are the mean over sequences of each per-sequence NLL sum, measured on
    the batches as they are consumed. epochs = 0 returns the freshly
    initialized parameters. Non-finite losses abort immediately.
    """
    if not sequences:
        raise ValueError("sequences must be nonempty")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    tc = train_config or TrainConfig()
    params = init_model(config)
    velocity = {n: np.zeros_like(a) for n, a in params.arrays.items()} if tc.optimizer == "sgd" else None
    m1 = {n: np.zeros_like(a) for n, a in params.arrays.items()} if tc.optimizer == "adam" else None
    m2 = {n: np.zeros_like(a) for n, a in params.arrays.items()} if tc.optimizer == "adam" else None
    adam_t = 0

    rng = SplitMix64(tc.shuffle_seed)
    order = list(range(len(sequences)))
    epoch_losses: list[LossBreakdown] = []
    for epoch in range(epochs):
        rng.shuffle(order)
        epoch_sum = LossBreakdown(0.0, 0.0, 0.0, 0.0, 0)
        for step, start in enumerate(range(0, len(order), tc.batch_size)):
            batch = [sequences[i] for i in order[start : start + tc.batch_size]]
            n_scored = max(1, sum(len(_scored_positions(s)) for s in batch))
            breakdown, grads = loss_and_grads(params, batch, scale=1.0 / n_scored)
            if not np.isfinite(breakdown.total):
                raise TrainingDiverged(epoch, step)
            epoch_sum = LossBreakdown.accumulate([epoch_sum, breakdown])
            if tc.optimizer == "sgd":
                for name in params.names:
                    velocity[name] = tc.momentum * velocity[name] + grads[name]
                    params.arrays[name] -= tc.learning_rate * velocity[name]
            else:
                adam_t += 1
                for name in params.names:
                    g = grads[name]
                    m1[name] = tc.adam_beta1 * m1[name] + (1 - tc.adam_beta1) * g
                    m2[name] = tc.adam_beta2 * m2[name] + (1 - tc.adam_beta2) * g * g
                    mhat = m1[name] / (1 - tc.adam_beta1**adam_t)
                    vhat = m2[name] / (1 - tc.adam_beta2**adam_t)
                    params.arrays[name] -= tc.learning_rate * mhat / (np.sqrt(vhat) + tc.adam_eps)
        epoch_losses.append(epoch_sum.scaled(1.0 / len(sequences)))
    return TrainResult(params=params, epoch_losses=epoch_losses)


def training_log_lines(epoch_losses: list[LossBreakdown]) -> str:
    """Comma-separated training log, one row per epoch."""
    lines = ["epoch,event_nll,place_nll,context_nll,inference_nll,total"]
    for i, row in enumerate(epoch_losses, start=1):
        lines.append(
            f"{i},{row.event:.6f},{row.place:.6f},{row.context:.6f},"
            f"{row.inference:.6f},{row.total:.6f}"
        )
    return "\n".join(lines) + "\n"


_CHECKPOINT_FORMAT = "tiny-causal-lm-v1"


def save_checkpoint(path, params: Parameters, vocab_hash: str = "") -> None:
    """One JSON header line, then raw little-endian float64 array bytes in
    header order."""
    header = {
        "format": _CHECKPOINT_FORMAT,
        "dtype": "<f8",
        "config": {
            "vocab_size": params.config.vocab_size,
            "layers": params.config.layers,
            "heads": params.config.heads,
            "embed_dim": params.config.embed_dim,
            "max_len": params.config.max_len,
            "visual_dim": params.config.visual_dim,
            "seed": params.config.seed,
        },
        "vocab_hash": vocab_hash,
        "arrays": [{"name": n, "shape": list(params.arrays[n].shape)} for n in params.names],
    }
    with open(path, "wb") as handle:
        handle.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name in params.names:
            handle.write(np.ascontiguousarray(params.arrays[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[Parameters, str]:
    with open(path, "rb") as handle:
        header = json.loads(handle.readline().decode("utf-8"))
        if header.get("format") != _CHECKPOINT_FORMAT:
            raise ValueError(f"unrecognized checkpoint format {header.get('format')!r}")
        config = ModelConfig(**header["config"])
        arrays: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = handle.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError("checkpoint truncated")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if handle.read(1):
            raise ValueError("trailing bytes after checkpoint arrays")
    params = Parameters(config, arrays)
    if set(arrays) != set(params.names):
        raise ValueError("checkpoint arrays do not match configuration")
    return params, header.get("vocab_hash", "")
