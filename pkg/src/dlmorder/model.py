"""Attention-only transformer used throughout the package.

The network is the analysed one-layer model generalised to ``layers`` stacked
multi-head attention layers with no residual path, layer norm or MLP:

    h_i   = embed[x_i] + pos[i]
    z_i   = concat_h  sum_j A^h_ij  v^h_j,   A^h = softmax(q k^T / sqrt(d/H))
    logit = out_w z + out_b

Each layer's concatenated head output is the next layer's input. Attention is
bidirectional. The MASK token is the last vocabulary id.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInput, InvalidToken, SequenceTooLong, TrainingDiverged
from .masking import MaskSchedule, mask_positions
from .numerics import log_softmax_rows, softmax_rows

CHECKPOINT_FORMAT = "dlmorder-checkpoint"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("embed", "pos", "wq", "wk", "wv", "out_w", "out_b")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    dim: int
    layers: int = 1
    heads: int = 1
    max_len: int = 16

    def __post_init__(self):
        for name in ("vocab_size", "dim", "layers", "heads", "max_len"):
            if int(getattr(self, name)) < 1:
                raise InvalidInput(f"{name} must be positive")
        if self.vocab_size < 2:
            raise InvalidInput("vocab_size must include at least one real token and MASK")
        if self.dim % self.heads:
            raise InvalidInput(f"dim {self.dim} not divisible by heads {self.heads}")

    @property
    def mask_id(self) -> int:
        return self.vocab_size - 1

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def to_dict(self) -> dict:
        return {"vocab_size": self.vocab_size, "dim": self.dim, "layers": self.layers,
                "heads": self.heads, "max_len": self.max_len}


@dataclass
class ModelParams:
    """All learnable arrays. Projections are stored as (layers, heads, d, d/H)."""

    config: ModelConfig
    embed: np.ndarray
    pos: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, **{k: v.copy() for k, v in self.arrays().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def with_flat(self, vec: np.ndarray) -> "ModelParams":
        out, at = {}, 0
        for name, a in self.arrays().items():
            out[name] = np.asarray(vec[at:at + a.size], dtype=np.float64).reshape(a.shape).copy()
            at += a.size
        return ModelParams(self.config, **out)

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.config, **{k: np.zeros_like(v) for k, v in self.arrays().items()})


def init_params(config: ModelConfig, seed: int = 0, std: float = 0.02) -> ModelParams:
    rng = np.random.default_rng(seed)
    d, dh, L, H, V = config.dim, config.head_dim, config.layers, config.heads, config.vocab_size
    return ModelParams(
        config=config,
        embed=rng.normal(0.0, std, (V, d)),
        pos=rng.normal(0.0, std, (config.max_len, d)),
        wq=rng.normal(0.0, std, (L, H, d, dh)),
        wk=rng.normal(0.0, std, (L, H, d, dh)),
        wv=rng.normal(0.0, std, (L, H, d, dh)),
        out_w=rng.normal(0.0, std, (V, d)),
        out_b=np.zeros(V),
    )


@dataclass
class ForwardResult:
    """Outputs of one forward pass over a length-n sequence.

    ``attention`` has shape (layers, heads, n, n); ``values`` has shape
    (layers, heads, n, d/H); ``mask_values`` holds the first-layer value of a
    MASK token placed at every position, shape (heads, n, d/H).
    """

    logits: np.ndarray
    probs: np.ndarray
    attention: np.ndarray
    values: np.ndarray
    mask_values: np.ndarray


def _check_tokens(config: ModelConfig, tokens) -> np.ndarray:
    t = np.asarray(tokens)
    if t.ndim == 1:
        t = t[None, :]
    if t.size and (t.min() < 0 or t.max() >= config.vocab_size):
        raise InvalidToken(f"token ids must lie in [0, {config.vocab_size})")
    if t.shape[-1] > config.max_len:
        raise SequenceTooLong(f"length {t.shape[-1]} exceeds max_len {config.max_len}")
    if t.shape[-1] == 0:
        raise InvalidInput("empty token sequence")
    return t.astype(np.int64)


def _run(params: ModelParams, tokens: np.ndarray, override: np.ndarray | None):
    """Batched forward. Returns (logits, final hidden, per-layer caches)."""
    cfg = params.config
    n = tokens.shape[1]
    scale = 1.0 / math.sqrt(cfg.head_dim)
    h = params.embed[tokens] + params.pos[:n]
    caches = []
    for layer in range(cfg.layers):
        outs, heads = [], []
        for head in range(cfg.heads):
            q = h @ params.wq[layer, head]
            k = h @ params.wk[layer, head]
            v = h @ params.wv[layer, head]
            if override is None:
                a = softmax_rows(q @ k.transpose(0, 2, 1) * scale)
            else:
                a = np.broadcast_to(override[layer, head], (tokens.shape[0], n, n))
            outs.append(a @ v)
            heads.append((q, k, v, a))
        caches.append((h, heads))
        h = np.concatenate(outs, axis=-1)
    logits = h @ params.out_w.T + params.out_b
    return logits, h, caches


def forward(params: ModelParams, tokens: Sequence[int], attention_override: np.ndarray | None = None) -> ForwardResult:
    """Run the model on one sequence.

    When ``attention_override`` (layers, heads, n, n) is given it replaces the
    softmax attention weights of every layer; queries, keys and values are
    still computed from the tokens.
    """
    cfg = params.config
    t = _check_tokens(cfg, tokens)
    n = t.shape[1]
    if attention_override is not None:
        attention_override = np.asarray(attention_override, dtype=np.float64)
        if attention_override.shape != (cfg.layers, cfg.heads, n, n):
            raise InvalidInput(
                f"attention override shape {attention_override.shape} != {(cfg.layers, cfg.heads, n, n)}")
    logits, _, caches = _run(params, t, attention_override)
    attention = np.stack([np.stack([hc[3][0] for hc in heads]) for _, heads in caches])
    values = np.stack([np.stack([hc[2][0] for hc in heads]) for _, heads in caches])
    mask_h = params.embed[cfg.mask_id] + params.pos[:n]
    mask_values = np.stack([mask_h @ params.wv[0, head] for head in range(cfg.heads)])
    return ForwardResult(
        logits=logits[0],
        probs=softmax_rows(logits[0]),
        attention=np.array(attention),
        values=values,
        mask_values=mask_values,
    )


def aggregate_attention(attn: np.ndarray, layers: Sequence[int] | None = None,
                        heads: Sequence[int] | None = None) -> np.ndarray:
    """Mean of the selected (layer, head) attention matrices."""
    L, H = attn.shape[:2]
    layers = list(range(L)) if layers is None else list(layers)
    heads = list(range(H)) if heads is None else list(heads)
    if not layers or not heads:
        raise InvalidInput("layer and head selections must be nonempty")
    if any(not 0 <= l < L for l in layers) or any(not 0 <= h < H for h in heads):
        raise InvalidInput("layer/head selection out of range")
    return attn[np.ix_(layers, heads)].mean(axis=(0, 1))


def _masked_input(config: ModelConfig, tokens, mask_positions_):
    t = _check_tokens(config, tokens)[0]
    pos = np.asarray(sorted(set(int(p) for p in mask_positions_)), dtype=np.int64)
    if pos.size == 0:
        raise InvalidInput("mask position set is empty")
    if pos[0] < 0 or pos[-1] >= t.size:
        raise InvalidInput("mask position out of range")
    x = t.copy()
    x[pos] = config.mask_id
    return t, x, pos


def masked_loss(params: ModelParams, tokens, mask_positions_) -> float:
    """Mean negative log-probability of the true tokens at the masked positions."""
    target, x, pos = _masked_input(params.config, tokens, mask_positions_)
    logits, _, _ = _run(params, x[None, :], None)
    logp = log_softmax_rows(logits[0])
    return float(-logp[pos, target[pos]].mean())


def loss_and_grad(params: ModelParams, inputs: np.ndarray, targets: np.ndarray,
                  weights: np.ndarray) -> tuple[float, ModelParams]:
    """Weighted cross-entropy over a batch and its analytic gradient.

    ``inputs``/``targets``/``weights`` are (B, n); the loss is
    ``-sum(weights * log p(target | inputs))``.
    """
    cfg = params.config
    inputs = _check_tokens(cfg, inputs)
    logits, h_last, caches = _run(params, inputs, None)
    logp = log_softmax_rows(logits)
    B, n = inputs.shape
    tgt_logp = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = float(-(weights * tgt_logp).sum())

    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, targets[..., None],
                      np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= weights[..., None]

    grad = params.zeros_like()
    d = cfg.dim
    grad.out_w = dlogits.reshape(-1, cfg.vocab_size).T @ h_last.reshape(-1, d)
    grad.out_b = dlogits.sum(axis=(0, 1))
    dh = dlogits @ params.out_w
    scale = 1.0 / math.sqrt(cfg.head_dim)
    dh_size = cfg.head_dim
    for layer in reversed(range(cfg.layers)):
        h_in, heads = caches[layer]
        h_flat = h_in.reshape(-1, d)
        dh_in = np.zeros_like(h_in)
        for head, (q, k, v, a) in enumerate(heads):
            dz = dh[..., head * dh_size:(head + 1) * dh_size]
            da = dz @ v.transpose(0, 2, 1)
            dv = a.transpose(0, 2, 1) @ dz
            ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
            dq = ds @ k
            dk = ds.transpose(0, 2, 1) @ q
            grad.wq[layer, head] = h_flat.T @ dq.reshape(-1, dh_size)
            grad.wk[layer, head] = h_flat.T @ dk.reshape(-1, dh_size)
            grad.wv[layer, head] = h_flat.T @ dv.reshape(-1, dh_size)
            dh_in += (dq @ params.wq[layer, head].T + dk @ params.wk[layer, head].T
                      + dv @ params.wv[layer, head].T)
        dh = dh_in
    np.add.at(grad.embed, inputs.ravel(), dh.reshape(-1, d))
    grad.pos[:n] = dh.sum(axis=0)
    return loss, grad


def backward(params: ModelParams, tokens, mask_positions_) -> ModelParams:
    """Gradient of :func:`masked_loss` with respect to every parameter."""
    target, x, pos = _masked_input(params.config, tokens, mask_positions_)
    weights = np.zeros((1, target.size))
    weights[0, pos] = 1.0 / pos.size
    _, grad = loss_and_grad(params, x[None, :], target[None, :], weights)
    return grad


@dataclass
class TrainResult:
    params: ModelParams
    losses: list[float] = field(default_factory=list)


def train(params: ModelParams, corpus, steps: int, learning_rate: float,
          mask_fraction_sampler: MaskSchedule | Callable | None = None, seed: int = 0,
          batch_size: int = 32, momentum: float = 0.9, clip_norm: float | None = 1.0) -> TrainResult:
    """Minibatch gradient descent with heavy-ball momentum on the masked loss.

    Each step draws ``batch_size`` sequences, samples one mask fraction per
    sequence and masks ``ceil(fraction * n)`` positions. The reported loss is
    the batch mean of per-sequence masked losses, taken before the update.
    Gradients whose global L2 norm exceeds ``clip_norm`` are rescaled to it.
    """
    if steps < 0:
        raise InvalidInput("steps must be nonnegative")
    if learning_rate < 0:
        raise InvalidInput("learning_rate must be nonnegative")
    seqs = np.asarray(getattr(corpus, "sequences", corpus), dtype=np.int64)
    if seqs.ndim != 2 or seqs.shape[0] == 0:
        raise InvalidInput("corpus must hold at least one sequence")
    schedule = mask_fraction_sampler if mask_fraction_sampler is not None else MaskSchedule()
    sample_fraction = schedule.sample if isinstance(schedule, MaskSchedule) else schedule

    cfg = params.config
    rng = np.random.default_rng(seed)
    p = params.copy()
    velocity = p.zeros_like()
    losses = []
    B = min(batch_size, seqs.shape[0]) if batch_size > 0 else seqs.shape[0]
    n = seqs.shape[1]
    for step in range(steps):
        idx = rng.integers(0, seqs.shape[0], size=B)
        targets = seqs[idx]
        inputs = targets.copy()
        weights = np.zeros((B, n))
        for row in range(B):
            frac = sample_fraction(rng, step)
            pos = mask_positions(n, frac, rng)
            inputs[row, pos] = cfg.mask_id
            weights[row, pos] = 1.0 / (len(pos) * B)
        loss, grad = loss_and_grad(p, inputs, targets, weights)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} at step {step}")
        losses.append(loss)
        factor = 1.0
        if clip_norm is not None:
            gnorm = math.sqrt(sum(float((g * g).sum()) for g in grad.arrays().values()))
            if gnorm > clip_norm:
                factor = clip_norm / gnorm
        for name in PARAM_NAMES:
            vel = getattr(velocity, name)
            vel *= momentum
            vel += factor * getattr(grad, name)
            getattr(p, name)[...] -= learning_rate * vel
    return TrainResult(params=p, losses=losses)


def save_checkpoint(params: ModelParams, path) -> None:
    """Write a JSON checkpoint.

    Layout: ``{"format", "version", "config", "params"}`` where ``params``
    maps each array name to ``{"shape": [...], "data": [flat row-major floats]}``.
    Floats are written with ``repr`` precision so the round trip is exact.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(checkpoint_json(params))


def checkpoint_json(params: ModelParams) -> str:
    record = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "params": {name: {"shape": list(a.shape), "data": a.ravel().tolist()}
                   for name, a in params.arrays().items()},
    }
    return json.dumps(record, separators=(",", ":")) + "\n"


def load_checkpoint(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        record = json.load(fh)
    if record.get("format") != CHECKPOINT_FORMAT:
        raise InvalidInput(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if record.get("version") != CHECKPOINT_VERSION:
        raise InvalidInput(f"{path}: unsupported checkpoint version {record.get('version')}")
    config = ModelConfig(**record["config"])
    arrays = {}
    for name in PARAM_NAMES:
        entry = record["params"][name]
        arrays[name] = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
    params = ModelParams(config, **arrays)
    expected = init_params(config, 0).arrays()
    for name, a in arrays.items():
        if a.shape != expected[name].shape:
            raise InvalidInput(f"{path}: array {name} has shape {a.shape}, expected {expected[name].shape}")
    return params
