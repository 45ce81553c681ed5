"""Tiny causal transformer LM in plain numpy with handwritten gradients.

Pre-norm blocks, learned position embeddings, tanh GELU, no biases on the
projection matrices. Everything runs in float64 so finite-difference
gradient checks are meaningful. The visual feature vector, when present,
is projected and added to the embedding at position 0; a missing vector
behaves exactly like a zero vector.

The loss is a sum of negative log-likelihoods over scored positions,
split by span label into event, place, context and inference terms.
Position 0 and relation-marker positions condition but are never scored.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .assembler import PromptSequence, SpanLabel

_LN_EPS = 1e-5
_GELU_C = 0.7978845608028654  # sqrt(2/pi)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 2
    embed_dim: int = 64
    max_len: int = 128
    visual_dim: int = 16
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "layers", "heads", "embed_dim", "max_len", "visual_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")


@dataclass
class LossBreakdown:
    """Per-span NLL sums; total is their exact sum."""

    event: float
    place: float
    context: float
    inference: float
    tokens: int

    @property
    def total(self) -> float:
        return self.event + self.place + self.context + self.inference

    def scaled(self, factor: float) -> "LossBreakdown":
        return LossBreakdown(
            self.event * factor,
            self.place * factor,
            self.context * factor,
            self.inference * factor,
            self.tokens,
        )

    @staticmethod
    def accumulate(parts: list["LossBreakdown"]) -> "LossBreakdown":
        out = LossBreakdown(0.0, 0.0, 0.0, 0.0, 0)
        for part in parts:
            out.event += part.event
            out.place += part.place
            out.context += part.context
            out.inference += part.inference
            out.tokens += part.tokens
        return out


_TERM_FOR_LABEL = {
    SpanLabel.EVENT: "event",
    SpanLabel.PLACE: "place",
    SpanLabel.CONTEXT: "context",
    SpanLabel.INFERENCE: "inference",
}


def _array_names(config: ModelConfig) -> list[str]:
    names = ["wte", "wpe", "wvis"]
    for i in range(config.layers):
        names += [
            f"ln1_g.{i}", f"ln1_b.{i}",
            f"wq.{i}", f"wk.{i}", f"wv.{i}", f"wo.{i}",
            f"ln2_g.{i}", f"ln2_b.{i}",
            f"fc1.{i}", f"fc2.{i}",
        ]
    names += ["lnf_g", "lnf_b", "head"]
    return names


@dataclass
class Parameters:
    """Model weights keyed by name, in a fixed order."""

    config: ModelConfig
    arrays: dict[str, np.ndarray]

    @property
    def names(self) -> list[str]:
        return _array_names(self.config)

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in self.names:
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self.arrays[name], dtype="<f8").tobytes())
        return digest.hexdigest()

    def copy(self) -> "Parameters":
        return Parameters(self.config, {k: v.copy() for k, v in self.arrays.items()})


def init_model(config: ModelConfig) -> Parameters:
    """Seeded initialization; identical seeds give bit-identical weights."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    d, v = config.embed_dim, config.vocab_size
    std = 0.02
    resid_std = std / np.sqrt(2.0 * config.layers)

    def normal(shape, scale):
        return rng.normal(0.0, scale, size=shape).astype(np.float64)

    arrays: dict[str, np.ndarray] = {
        "wte": normal((v, d), std),
        "wpe": normal((config.max_len, d), std),
        "wvis": normal((config.visual_dim, d), std),
    }
    for i in range(config.layers):
        arrays[f"ln1_g.{i}"] = np.ones(d)
        arrays[f"ln1_b.{i}"] = np.zeros(d)
        arrays[f"wq.{i}"] = normal((d, d), std)
        arrays[f"wk.{i}"] = normal((d, d), std)
        arrays[f"wv.{i}"] = normal((d, d), std)
        arrays[f"wo.{i}"] = normal((d, d), resid_std)
        arrays[f"ln2_g.{i}"] = np.ones(d)
        arrays[f"ln2_b.{i}"] = np.zeros(d)
        arrays[f"fc1.{i}"] = normal((d, 4 * d), std)
        arrays[f"fc2.{i}"] = normal((4 * d, d), resid_std)
    arrays["lnf_g"] = np.ones(d)
    arrays["lnf_b"] = np.zeros(d)
    arrays["head"] = normal((d, v), std)
    return Parameters(config, arrays)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * rstd
    return xhat * g + b, (xhat, rstd)


def _layer_norm_back(dy: np.ndarray, g: np.ndarray, cache):
    xhat, rstd = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _pack(sequences: list[PromptSequence], pad_id: int, visual_dim: int):
    """Right-pads token id rows and stacks visual vectors (zeros when absent)."""
    batch = len(sequences)
    t_max = max(len(s) for s in sequences)
    tokens = np.full((batch, t_max), pad_id, dtype=np.int64)
    visual = np.zeros((batch, visual_dim))
    for i, seq in enumerate(sequences):
        tokens[i, : len(seq)] = seq.tokens
        if seq.visual is not None:
            vec = np.asarray(seq.visual, dtype=np.float64)
            if vec.shape != (visual_dim,):
                raise ValueError(f"visual vector must have shape ({visual_dim},), got {vec.shape}")
            if not np.all(np.isfinite(vec)):
                raise ValueError("visual vector must be finite")
            visual[i] = vec
    return tokens, visual


def _forward_batch(params: Parameters, tokens: np.ndarray, visual: np.ndarray):
    """Log-probs (batch, T, vocab) plus the cache needed for backward."""
    cfg = params.config
    a = params.arrays
    batch, t = tokens.shape
    if t > cfg.max_len:
        raise ValueError(f"sequence length {t} exceeds max_len {cfg.max_len}")
    heads, dh = cfg.heads, cfg.embed_dim // cfg.heads

    x = a["wte"][tokens] + a["wpe"][:t]
    x[:, 0, :] += visual @ a["wvis"]
    mask = np.triu(np.ones((t, t), dtype=bool), k=1)

    cache = {"tokens": tokens, "visual": visual, "t": t, "layers": []}
    for i in range(cfg.layers):
        x_in = x
        h, ln1 = _layer_norm(x, a[f"ln1_g.{i}"], a[f"ln1_b.{i}"])
        q = (h @ a[f"wq.{i}"]).reshape(batch, t, heads, dh).transpose(0, 2, 1, 3)
        k = (h @ a[f"wk.{i}"]).reshape(batch, t, heads, dh).transpose(0, 2, 1, 3)
        v = (h @ a[f"wv.{i}"]).reshape(batch, t, heads, dh).transpose(0, 2, 1, 3)
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
        scores = np.where(mask, -np.inf, scores)
        scores -= scores.max(axis=-1, keepdims=True)
        att = np.exp(scores)
        att /= att.sum(axis=-1, keepdims=True)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(batch, t, cfg.embed_dim)
        x = x_in + ctx @ a[f"wo.{i}"]

        x_mid = x
        h2, ln2 = _layer_norm(x, a[f"ln2_g.{i}"], a[f"ln2_b.{i}"])
        u = h2 @ a[f"fc1.{i}"]
        gelu = _gelu(u)
        x = x_mid + gelu @ a[f"fc2.{i}"]
        cache["layers"].append(
            {"x_in": x_in, "h": h, "ln1": ln1, "q": q, "k": k, "v": v, "att": att,
             "ctx": ctx, "x_mid": x_mid, "h2": h2, "ln2": ln2, "u": u, "gelu": gelu}
        )

    hf, lnf = _layer_norm(x, a["lnf_g"], a["lnf_b"])
    logits = hf @ a["head"]
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_z
    cache["hf"] = hf
    cache["lnf"] = lnf
    cache["log_probs"] = log_probs
    return log_probs, cache


def _backward_batch(params: Parameters, cache, dlog_probs: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of sum(dlog_probs * log_probs) for every parameter array."""
    cfg = params.config
    a = params.arrays
    batch, t = cache["tokens"].shape
    heads, dh = cfg.heads, cfg.embed_dim // cfg.heads
    grads = {name: np.zeros_like(a[name]) for name in params.names}

    # d/dlogits of sum(w * log_softmax(logits)) = w - softmax * sum(w)
    probs = np.exp(cache["log_probs"])
    dlogits = dlog_probs - probs * dlog_probs.sum(axis=-1, keepdims=True)
    grads["head"] = cache["hf"].reshape(-1, cfg.embed_dim).T @ dlogits.reshape(-1, cfg.vocab_size)
    dhf = dlogits @ a["head"].T
    dx, grads["lnf_g"], grads["lnf_b"] = _layer_norm_back(dhf, a["lnf_g"], cache["lnf"])

    for i in reversed(range(cfg.layers)):
        layer = cache["layers"][i]
        dgelu = dx @ a[f"fc2.{i}"].T
        grads[f"fc2.{i}"] = layer["gelu"].reshape(-1, 4 * cfg.embed_dim).T @ dx.reshape(-1, cfg.embed_dim)
        du = dgelu * _gelu_grad(layer["u"])
        grads[f"fc1.{i}"] = layer["h2"].reshape(-1, cfg.embed_dim).T @ du.reshape(-1, 4 * cfg.embed_dim)
        dh2 = du @ a[f"fc1.{i}"].T
        dx_mid, grads[f"ln2_g.{i}"], grads[f"ln2_b.{i}"] = _layer_norm_back(
            dh2, a[f"ln2_g.{i}"], layer["ln2"]
        )
        dx = dx + dx_mid

        dctx = (dx @ a[f"wo.{i}"].T).reshape(batch, t, heads, dh).transpose(0, 2, 1, 3)
        grads[f"wo.{i}"] = layer["ctx"].reshape(-1, cfg.embed_dim).T @ dx.reshape(-1, cfg.embed_dim)
        att, q, k, v = layer["att"], layer["q"], layer["k"], layer["v"]
        datt = dctx @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ dctx
        dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
        dscores /= np.sqrt(dh)
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q

        def merge(z):
            return z.transpose(0, 2, 1, 3).reshape(batch, t, cfg.embed_dim)

        h_flat = layer["h"].reshape(-1, cfg.embed_dim)
        grads[f"wq.{i}"] = h_flat.T @ merge(dq).reshape(-1, cfg.embed_dim)
        grads[f"wk.{i}"] = h_flat.T @ merge(dk).reshape(-1, cfg.embed_dim)
        grads[f"wv.{i}"] = h_flat.T @ merge(dv).reshape(-1, cfg.embed_dim)
        dh1 = merge(dq) @ a[f"wq.{i}"].T + merge(dk) @ a[f"wk.{i}"].T + merge(dv) @ a[f"wv.{i}"].T
        dx_in, grads[f"ln1_g.{i}"], grads[f"ln1_b.{i}"] = _layer_norm_back(
            dh1, a[f"ln1_g.{i}"], layer["ln1"]
        )
        dx = dx + dx_in

    grads["wpe"][: cache["t"]] = dx.sum(axis=0)
    np.add.at(grads["wte"], cache["tokens"].reshape(-1), dx.reshape(-1, cfg.embed_dim))
    grads["wvis"] = cache["visual"].T @ dx[:, 0, :]
    return grads


def forward(params: Parameters, tokens, visual=None) -> np.ndarray:
    """Next-token log-probabilities, shape (len(tokens), vocab_size).

    Row i depends only on tokens[0..i] and the visual vector; the rows
    exponentiate to distributions summing to one.
    """
    ids = np.asarray(tokens, dtype=np.int64).reshape(1, -1)
    if ids.shape[1] == 0:
        raise ValueError("tokens must be nonempty")
    if ids.min() < 0 or ids.max() >= params.config.vocab_size:
        raise ValueError("token id out of range")
    vis = np.zeros((1, params.config.visual_dim))
    if visual is not None:
        vec = np.asarray(visual, dtype=np.float64)
        if vec.shape != (params.config.visual_dim,):
            raise ValueError(
                f"visual vector must have shape ({params.config.visual_dim},), got {vec.shape}"
            )
        vis[0] = vec
    log_probs, _ = _forward_batch(params, ids, vis)
    return log_probs[0]


def _scored_positions(seq: PromptSequence):
    """(position, term name) for every loss-bearing token of the sequence.

    A token at position i is scored iff i >= 1 and its own span label is
    one of the four scored spans; its NLL comes from the model's
    prediction at position i-1.
    """
    out = []
    for i in range(1, len(seq)):
        term = _TERM_FOR_LABEL.get(seq.spans[i])
        if term is not None:
            out.append((i, term))
    return out


def loss_batch(params: Parameters, sequences: list[PromptSequence]):
    """Summed LossBreakdown over the batch plus the gradient cache inputs."""
    if not sequences:
        raise ValueError("batch must be nonempty")
    tokens, visual = _pack(sequences, 0, params.config.visual_dim)
    log_probs, cache = _forward_batch(params, tokens, visual)
    terms = {"event": 0.0, "place": 0.0, "context": 0.0, "inference": 0.0}
    count = 0
    positions = []
    for b, seq in enumerate(sequences):
        scored = _scored_positions(seq)
        positions.append(scored)
        for i, term in scored:
            terms[term] -= log_probs[b, i - 1, seq.tokens[i]]
            count += 1
    breakdown = LossBreakdown(
        terms["event"], terms["place"], terms["context"], terms["inference"], count
    )
    return breakdown, cache, positions


def loss(params: Parameters, seq: PromptSequence) -> LossBreakdown:
    """Four-term NLL sum for a single training sequence."""
    breakdown, _, _ = loss_batch(params, [seq])
    return breakdown


def loss_and_grads(params: Parameters, sequences: list[PromptSequence], scale: float = 1.0):
    """LossBreakdown (sums) and gradients of scale * total over the batch."""
    breakdown, cache, positions = loss_batch(params, sequences)
    dlog_probs = np.zeros_like(cache["log_probs"])
    for b, scored in enumerate(positions):
        for i, _term in scored:
            dlog_probs[b, i - 1, sequences[b].tokens[i]] -= scale
    grads = _backward_batch(params, cache, dlog_probs)
    return breakdown, grads


def gradient_check(
    params: Parameters,
    seq: PromptSequence,
    epsilon: float = 1e-4,
    fraction: float = 0.01,
    seed: int = 0,
    grad_scale: float = 1.0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks a seeded random subset (at least one entry per array) of the
    parameters. grad_scale multiplies the analytic gradient only; values
    other than 1.0 are for verifying that the check can fail.
    """
    _, grads = loss_and_grads(params, [seq])
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for name in params.names:
        array = params.arrays[name]
        n = array.size
        k = max(1, int(round(n * fraction)))
        flat_idx = rng.choice(n, size=min(k, n), replace=False)
        flat = array.reshape(-1)
        for j in sorted(int(i) for i in flat_idx):
            original = flat[j]
            flat[j] = original + epsilon
            plus = loss(params, seq).total
            flat[j] = original - epsilon
            minus = loss(params, seq).total
            flat[j] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            analytic = grads[name].reshape(-1)[j] * grad_scale
            denom = max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst
