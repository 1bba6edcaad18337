"""Decoding-order strategies behind one interface.

Each sampler sees the masked positions of the current block, their predictive
distributions and their total-attention scores, and returns which positions
to commit this step. Ties always go to the lowest position index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidInput
from .numerics import entropy_rows

KINDS = (
    "attn_sequential",
    "attn_parallel",
    "confidence",
    "margin",
    "entropy",
    "confidence_threshold_parallel",
    "attn_topk",
    "attn_static_threshold",
    "random",
)
SEQUENTIAL_KINDS = ("attn_sequential", "confidence", "margin", "entropy", "random")
ATTENTION_KINDS = ("attn_sequential", "attn_parallel", "attn_topk", "attn_static_threshold")


@dataclass(frozen=True)
class StepInput:
    """Per-step view of the masked positions, sorted ascending.

    ``probs[r]`` and ``attn_scores[r]`` belong to ``positions[r]``.
    """

    positions: tuple[int, ...]
    probs: np.ndarray
    attn_scores: np.ndarray

    def __post_init__(self):
        pos = tuple(int(p) for p in self.positions)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "probs", np.atleast_2d(np.asarray(self.probs, dtype=np.float64)))
        object.__setattr__(self, "attn_scores", np.asarray(self.attn_scores, dtype=np.float64).reshape(-1))
        if not pos:
            raise InvalidInput("no masked positions")
        if list(pos) != sorted(set(pos)):
            raise InvalidInput("positions must be strictly increasing")
        if self.probs.shape[0] != len(pos) or self.attn_scores.shape[0] != len(pos):
            raise InvalidInput("probs and attn_scores must be keyed by exactly the masked positions")

    @property
    def confidence(self) -> np.ndarray:
        return self.probs.max(axis=1)


class Selection(NamedTuple):
    positions: tuple[int, ...]
    gamma: float | None = None


def _pick(inp: StepInput, rows) -> tuple[int, ...]:
    return tuple(inp.positions[r] for r in sorted(int(r) for r in rows))


def attn_sequential(inp: StepInput) -> int:
    return inp.positions[int(np.argmax(inp.attn_scores))]


def dynamic_threshold(inp: StepInput, tau: float) -> float:
    """Largest attention score among low-confidence positions; -inf if there are none."""
    low = inp.confidence < tau
    return float(inp.attn_scores[low].max()) if low.any() else -math.inf


def attn_parallel(inp: StepInput, tau: float) -> tuple[int, ...]:
    """Commit every confident position whose score beats all unconfident ones.

    Confident means max probability >= tau. When no confident position clears
    the dynamic threshold, the step degrades to :func:`attn_sequential`.
    """
    return attn_parallel_selection(inp, tau).positions


def attn_parallel_selection(inp: StepInput, tau: float) -> Selection:
    if not 0.0 < tau:
        raise InvalidInput("tau must be positive")
    gamma = dynamic_threshold(inp, tau)
    chosen = np.flatnonzero((inp.confidence >= tau) & (inp.attn_scores > gamma))
    if chosen.size == 0:
        return Selection((attn_sequential(inp),), gamma)
    return Selection(_pick(inp, chosen), gamma)


def confidence_select(inp: StepInput) -> int:
    return inp.positions[int(np.argmax(inp.confidence))]


def entropy_select(inp: StepInput) -> int:
    return inp.positions[int(np.argmin(entropy_rows(inp.probs)))]


def margin_select(inp: StepInput) -> int:
    if inp.probs.shape[1] < 2:
        raise InvalidInput("margin needs at least two vocabulary entries")
    top2 = np.partition(inp.probs, -2, axis=1)[:, -2:]
    return inp.positions[int(np.argmax(top2[:, 1] - top2[:, 0]))]


def confidence_threshold_parallel(inp: StepInput, tau: float) -> tuple[int, ...]:
    chosen = np.flatnonzero(inp.confidence >= tau)
    if chosen.size == 0:
        return (confidence_select(inp),)
    return _pick(inp, chosen)


def attn_topk(inp: StepInput, k: int) -> tuple[int, ...]:
    if k < 1:
        raise InvalidInput("k must be at least 1")
    # stable sort on -score keeps the lowest index first among ties
    order = np.argsort(-inp.attn_scores, kind="stable")[:k]
    return _pick(inp, order)


def attn_static_threshold(inp: StepInput, threshold: float) -> tuple[int, ...]:
    chosen = np.flatnonzero(inp.attn_scores >= threshold)
    if chosen.size == 0:
        return (attn_sequential(inp),)
    return _pick(inp, chosen)


def random_select(inp: StepInput, seed: int, step: int = 0) -> int:
    rng = np.random.default_rng([int(seed), int(step)])
    return inp.positions[int(rng.integers(len(inp.positions)))]


@dataclass(frozen=True)
class SamplerConfig:
    kind: str
    tau: float | None = None
    k: int | None = None
    static_threshold: float | None = None
    seed: int | None = None

    _PARAMS = {
        "attn_parallel": ("tau",),
        "confidence_threshold_parallel": ("tau",),
        "attn_topk": ("k",),
        "attn_static_threshold": ("static_threshold",),
        "random": ("seed",),
    }

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown sampler kind {self.kind!r}")
        needed = self._PARAMS.get(self.kind, ())
        for name in ("tau", "k", "static_threshold", "seed"):
            present = getattr(self, name) is not None
            if name in needed and not present:
                raise InvalidInput(f"sampler {self.kind} requires {name}")
            if name not in needed and present:
                raise InvalidInput(f"sampler {self.kind} does not take {name}")
        if self.tau is not None and not self.tau > 0:
            raise InvalidInput("tau must be positive")
        if self.k is not None and self.k < 1:
            raise InvalidInput("k must be at least 1")

    @classmethod
    def from_dict(cls, spec: dict) -> "SamplerConfig":
        unknown = set(spec) - {"kind", "tau", "k", "static_threshold", "seed"}
        if unknown:
            raise InvalidInput(f"unknown sampler fields {sorted(unknown)}")
        return cls(**spec)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for name in self._PARAMS.get(self.kind, ()):
            out[name] = getattr(self, name)
        return out

    @property
    def name(self) -> str:
        params = ",".join(f"{k}={v}" for k, v in self.to_dict().items() if k != "kind")
        return f"{self.kind}({params})" if params else self.kind

    @property
    def sequential(self) -> bool:
        return self.kind in SEQUENTIAL_KINDS

    def select(self, inp: StepInput, step: int = 0) -> Selection:
        kind = self.kind
        if kind == "attn_sequential":
            return Selection((attn_sequential(inp),))
        if kind == "attn_parallel":
            return attn_parallel_selection(inp, self.tau)
        if kind == "confidence":
            return Selection((confidence_select(inp),))
        if kind == "margin":
            return Selection((margin_select(inp),))
        if kind == "entropy":
            return Selection((entropy_select(inp),))
        if kind == "confidence_threshold_parallel":
            return Selection(confidence_threshold_parallel(inp, self.tau))
        if kind == "attn_topk":
            return Selection(attn_topk(inp, self.k))
        if kind == "attn_static_threshold":
            return Selection(attn_static_threshold(inp, self.static_threshold))
        return Selection((random_select(inp, self.seed, step),))


def parse_samplers(specs: Sequence[dict]) -> list[SamplerConfig]:
    return [SamplerConfig.from_dict(s) for s in specs]
