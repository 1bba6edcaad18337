"""Block-wise reverse decoding that drives any sampler.

A block of ``block_size`` MASK tokens is appended to the visible buffer and
filled in over several steps. Each step runs the model on the buffer, scores
the block positions by total attention, asks the sampler which masked
positions to commit, and writes the argmax non-MASK tokens there.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInput, SamplerStalled, SamplerViolation
from .masking import MaskSchedule, apply_forward_mask, masked_count  # noqa: F401  re-exported
from .model import ModelParams, aggregate_attention, forward
from .samplers import StepInput

SCORING_MODES = ("block", "visible")


@dataclass
class TraceStep:
    step: int
    positions: list[int]
    tokens: list[int]
    confidences: list[float]
    scores: list[float]
    logprobs: list[float]
    gamma: float | None = None

    def to_dict(self) -> dict:
        out = {"step": self.step, "positions": self.positions, "tokens": self.tokens,
               "confidences": self.confidences, "scores": self.scores, "logprobs": self.logprobs}
        if self.gamma is not None:
            out["gamma"] = self.gamma if np.isfinite(self.gamma) else None
            out["gamma_is_neg_inf"] = bool(np.isneginf(self.gamma))
        return out


@dataclass
class DecodeState:
    """Token buffer for one block being decoded.

    ``tokens`` covers the prompt and every block decoded so far, ending with
    the current block at ``[block_start, block_start + block_size)``.
    """

    tokens: np.ndarray
    masked: np.ndarray
    block_start: int
    block_size: int
    sub_block_size: int
    mask_id: int
    step_counter: int = 0
    trace: list[TraceStep] = field(default_factory=list)

    @property
    def block_end(self) -> int:
        return self.block_start + self.block_size

    def masked_in_block(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.masked[self.block_start:self.block_end]) + self.block_start]


def new_block_state(prefix: Sequence[int], block_size: int, mask_id: int,
                    sub_block_size: int | None = None) -> DecodeState:
    """Append ``block_size`` MASK tokens to ``prefix``."""
    if block_size < 1:
        raise InvalidInput("block_size must be positive")
    sub = block_size if sub_block_size is None else sub_block_size
    if sub < 1 or block_size % sub:
        raise InvalidInput(f"sub_block_size {sub} must divide block_size {block_size}")
    prefix = np.asarray(prefix, dtype=np.int64)
    tokens = np.concatenate([prefix, np.full(block_size, mask_id, dtype=np.int64)])
    masked = np.zeros(tokens.size, dtype=bool)
    masked[prefix.size:] = True
    return DecodeState(tokens, masked, prefix.size, block_size, sub, mask_id)


def total_attention(A: np.ndarray, block_range: tuple[int, int] | None = None) -> np.ndarray:
    """Column sums of ``A`` restricted to the block: s_i = sum_{j in block} A[j, i]."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInput("attention must be a square matrix")
    start, stop = (0, A.shape[0]) if block_range is None else block_range
    if not 0 <= start < stop <= A.shape[0]:
        raise InvalidInput(f"block range {block_range} out of bounds for {A.shape[0]} positions")
    return A[start:stop, start:stop].sum(axis=0)


def sub_block_scores(A: np.ndarray, state: DecodeState) -> np.ndarray:
    """Total attention evaluated inside each sub-block only."""
    b, sub = state.block_size, state.sub_block_size
    if sub < 1 or b % sub:
        raise InvalidInput(f"sub_block_size {sub} must divide block_size {b}")
    if A.shape[0] < state.block_end:
        raise InvalidInput("attention matrix does not cover the block")
    out = np.empty(b)
    for lo in range(state.block_start, state.block_end, sub):
        out[lo - state.block_start:lo - state.block_start + sub] = A[lo:lo + sub, lo:lo + sub].sum(axis=0)
    return out


@dataclass(frozen=True)
class DecodeOptions:
    """Knobs for :func:`decode_block`.

    scoring: ``"block"`` sums attention over block rows only; ``"visible"``
        sums over every row of the visible buffer.
    frozen_attention: reuse the attention captured at the fully masked block
        for every step of that block.
    layers, heads: which attention maps to average (None = all).
    reference: when given, commit these tokens instead of the argmax
        (teacher-forced evaluation); indexed like the buffer.
    """

    scoring: str = "block"
    frozen_attention: bool = False
    layers: tuple[int, ...] | None = None
    heads: tuple[int, ...] | None = None
    reference: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.scoring not in SCORING_MODES:
            raise InvalidInput(f"scoring must be one of {SCORING_MODES}")


def block_scores(A: np.ndarray, state: DecodeState, scoring: str = "block") -> np.ndarray:
    if state.sub_block_size < state.block_size:
        return sub_block_scores(A, state)
    if scoring == "visible":
        return A[:state.block_end, state.block_start:state.block_end].sum(axis=0)
    return total_attention(A, (state.block_start, state.block_end))


def decode_block(params: ModelParams, state: DecodeState, sampler, options: DecodeOptions | None = None,
                 observer=None) -> DecodeState:
    """Decode the current block in place until no MASK remains in it.

    ``observer(state, result, A, step_input)``, when given, is called every
    step after the forward pass and before any token is committed.
    """
    options = options or DecodeOptions()
    lo, hi = state.block_start, state.block_end
    if hi > state.tokens.size:
        raise InvalidInput("block extends past the buffer")
    reference = None if options.reference is None else np.asarray(options.reference, dtype=np.int64)
    frozen = None
    while state.masked[lo:hi].any():
        masked = state.masked_in_block()
        res = forward(params, state.tokens[:hi], frozen)
        if options.frozen_attention and frozen is None:
            frozen = res.attention
        A = aggregate_attention(res.attention, options.layers, options.heads)
        scores = block_scores(A, state, options.scoring)
        rows = np.asarray(masked) - lo
        inp = StepInput(tuple(masked), res.probs[masked], scores[rows])
        if observer is not None:
            observer(state, res, A, inp)
        sel = sampler.select(inp, state.step_counter)
        chosen = list(sel.positions)
        if not chosen:
            raise SamplerStalled(f"sampler returned no positions at step {state.step_counter}")
        if len(set(chosen)) != len(chosen) or not set(chosen) <= set(masked):
            raise SamplerViolation(f"sampler chose {chosen}, masked positions are {masked}")
        chosen.sort()
        if reference is None:
            # MASK is never a valid commitment, whatever mass the model gives it
            toks = [int(np.argmax(res.probs[i, :state.mask_id])) for i in chosen]
        else:
            toks = [int(reference[i]) for i in chosen]
        logp = [float(np.log(res.probs[i, t])) if res.probs[i, t] > 0 else float("-inf")
                for i, t in zip(chosen, toks)]
        state.trace.append(TraceStep(
            step=state.step_counter,
            positions=chosen,
            tokens=toks,
            confidences=[float(res.probs[i].max()) for i in chosen],
            scores=[float(scores[i - lo]) for i in chosen],
            logprobs=logp,
            gamma=sel.gamma,
        ))
        for i, t in zip(chosen, toks):
            state.tokens[i] = t
            state.masked[i] = False
        state.step_counter += 1
    return state


@dataclass
class GenerateResult:
    tokens: np.ndarray
    traces: list[list[TraceStep]]


def generate(params: ModelParams, prompt: Sequence[int], num_blocks: int, block_size: int, sampler,
             eos_token: int | None = None, options: DecodeOptions | None = None,
             sub_block_size: int | None = None) -> GenerateResult:
    """Semi-autoregressive generation: append and decode blocks until EOS or ``num_blocks``."""
    prompt = np.asarray(prompt, dtype=np.int64)
    if prompt.size == 0:
        raise InvalidInput("prompt must be nonempty")
    if num_blocks < 0:
        raise InvalidInput("num_blocks must be nonnegative")
    tokens = prompt.copy()
    traces = []
    mask_id = params.config.mask_id
    steps_so_far = 0
    for _ in range(num_blocks):
        state = new_block_state(tokens, block_size, mask_id, sub_block_size)
        state.step_counter = steps_so_far
        decode_block(params, state, sampler, options)
        tokens = state.tokens
        traces.append(state.trace)
        steps_so_far = state.step_counter
        if eos_token is not None and eos_token in tokens[state.block_start:state.block_end]:
            break
    return GenerateResult(tokens, traces)


def trace_json(trace: Sequence[TraceStep]) -> str:
    """Serialise a decode trace as a JSON list of steps."""
    return json.dumps([s.to_dict() for s in trace], sort_keys=True)


def decode_order(trace: Sequence[TraceStep], block_start: int = 0) -> tuple[int, ...]:
    """Flatten a trace into block-relative decode order (ties within a step by position)."""
    return tuple(p - block_start for s in trace for p in s.positions)
