"""Training runs and sampler evaluation on held-out blocks."""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass

import numpy as np

from ..diffusion import DecodeOptions, decode_block, new_block_state
from ..model import ModelParams, TrainResult, init_params, train
from ..samplers import ATTENTION_KINDS, SamplerConfig
from ..theory import PdgEvaluator
from .config import ExperimentConfig

COMPARE_COLUMNS = (
    "sampler", "kind", "tau", "k", "static_threshold", "seed", "layers", "heads", "blocks",
    "mean_loglik", "mean_pdg", "tokens_per_forward", "min_tokens_per_forward",
    "max_tokens_per_forward", "steps_per_block", "accuracy",
)
BLOCK_COLUMNS = ("sampler", "block", "start", "stop", "steps", "tokens_per_forward",
                 "teacher_forced_steps", "loglik", "pdg", "accuracy")
ABLATE_COLUMNS = ("axis", "value") + COMPARE_COLUMNS

STRATEGY_GRID = (
    [SamplerConfig("attn_topk", k=k) for k in (2, 3, 4)]
    + [SamplerConfig("attn_static_threshold", static_threshold=t) for t in (1.0, 0.9, 0.8)]
    + [SamplerConfig("attn_parallel", tau=t) for t in (0.9, 0.8, 0.7)]
)
ABLATE_AXES = ("layers", "heads", "attn_strategy")


def run_training(cfg: ExperimentConfig) -> TrainResult:
    tr = cfg.train
    train_split, _ = cfg.splits()
    params = init_params(cfg.model, seed=tr["seed"], std=tr["init_std"])
    return train(params, train_split, tr["steps"], tr["learning_rate"], cfg.mask_schedule,
                 seed=tr["seed"], batch_size=tr["batch_size"], momentum=tr["momentum"],
                 clip_norm=tr["clip_norm"])


def held_out_sequences(cfg: ExperimentConfig) -> np.ndarray:
    """The first ``num_blocks`` test sequences after a seeded shuffle."""
    _, test = cfg.splits()
    seqs = test.sequences
    n = min(cfg.evaluation["num_blocks"], len(seqs))
    idx = np.sort(np.random.default_rng(cfg.evaluation["seed"]).permutation(len(seqs))[:n])
    return seqs[idx]


@dataclass
class BlockResult:
    steps: int
    teacher_forced_steps: int
    loglik: float
    pdg: float
    accuracy: float

    def tokens_per_forward(self, b: int) -> float:
        return b / self.steps


def evaluate_block(params: ModelParams, seq, block_range, sampler: SamplerConfig, options: DecodeOptions,
                   sub_block_size: int | None = None) -> BlockResult:
    """Decode one held-out block twice.

    The teacher-forced pass commits the reference tokens in the sampler's
    order; it gives the per-token log-likelihood and the exact PDG of that
    order. The free-running pass commits argmax tokens and gives the step
    count and token accuracy.
    """
    start, stop = block_range
    seq = np.asarray(seq, dtype=np.int64)[:stop]
    b = stop - start
    mask_id = params.config.mask_id
    tf = new_block_state(seq[:start], b, mask_id, sub_block_size)
    decode_block(params, tf, sampler, dataclasses.replace(options, reference=tuple(int(t) for t in seq)))
    steps = [[p - start for p in s.positions] for s in tf.trace]
    loglik = 0.0
    for s in tf.trace:
        for lp in s.logprobs:
            loglik += lp
    pdg = PdgEvaluator(params, seq, block_range, options.frozen_attention).pdg_steps(steps)

    free = new_block_state(seq[:start], b, mask_id, sub_block_size)
    decode_block(params, free, sampler, options)
    acc = float(np.mean(free.tokens[start:stop] == seq[start:stop]))
    return BlockResult(len(free.trace), len(tf.trace), loglik / b, pdg, acc)


def _sampler_fields(sampler: SamplerConfig) -> dict:
    return {"sampler": sampler.name, "kind": sampler.kind, "tau": sampler.tau, "k": sampler.k,
            "static_threshold": sampler.static_threshold, "seed": sampler.seed}


def evaluate_sampler(params: ModelParams, seqs, block_range, sampler: SamplerConfig, options: DecodeOptions,
                     sub_block_size: int | None = None) -> tuple[dict, list[dict], float]:
    """Summary row, per-block rows and elapsed seconds for one sampler."""
    start, stop = block_range
    b = stop - start
    t0 = time.perf_counter()
    results = [evaluate_block(params, s, block_range, sampler, options, sub_block_size) for s in seqs]
    elapsed = time.perf_counter() - t0
    tpf = [r.tokens_per_forward(b) for r in results]
    cfg = params.config
    row = _sampler_fields(sampler)
    row.update({
        "layers": len(options.layers) if options.layers is not None else cfg.layers,
        "heads": len(options.heads) if options.heads is not None else cfg.heads,
        "blocks": len(results),
        "mean_loglik": math.fsum(r.loglik for r in results) / len(results),
        "mean_pdg": math.fsum(r.pdg for r in results) / len(results),
        "tokens_per_forward": math.fsum(tpf) / len(tpf),
        "min_tokens_per_forward": min(tpf),
        "max_tokens_per_forward": max(tpf),
        "steps_per_block": math.fsum(r.steps for r in results) / len(results),
        "accuracy": math.fsum(r.accuracy for r in results) / len(results),
    })
    blocks = [{"sampler": sampler.name, "block": i, "start": start, "stop": stop, "steps": r.steps,
               "tokens_per_forward": tpf[i], "teacher_forced_steps": r.teacher_forced_steps,
               "loglik": r.loglik, "pdg": r.pdg, "accuracy": r.accuracy}
              for i, r in enumerate(results)]
    return row, blocks, elapsed


def compare(params: ModelParams, cfg: ExperimentConfig) -> dict:
    seqs = held_out_sequences(cfg)
    block_range = cfg.block_range(seqs.shape[1])
    options = cfg.decode_options()
    rows, blocks, timing = [], [], {}
    for sampler in cfg.samplers:
        row, per_block, elapsed = evaluate_sampler(params, seqs, block_range, sampler, options, cfg.sub_block_size)
        rows.append(row)
        blocks.extend(per_block)
        timing[sampler.name] = elapsed
    return {"rows": rows, "blocks": blocks, "timing": timing, "block_range": list(block_range)}


def prefixes(n: int) -> list[int]:
    """Sizes 1, ceil(n/2) and n, deduplicated."""
    return sorted({1, math.ceil(n / 2), n})


def ablate(params: ModelParams, cfg: ExperimentConfig, axis: str) -> list[dict]:
    if axis not in ABLATE_AXES:
        raise ValueError(f"axis must be one of {ABLATE_AXES}")
    seqs = held_out_sequences(cfg)
    block_range = cfg.block_range(seqs.shape[1])
    base = cfg.decode_options()
    rows = []
    if axis == "attn_strategy":
        for sampler in STRATEGY_GRID:
            row, _, _ = evaluate_sampler(params, seqs, block_range, sampler, base, cfg.sub_block_size)
            rows.append({"axis": axis, "value": sampler.name, **row})
        return rows
    samplers = [s for s in cfg.samplers if s.kind in ATTENTION_KINDS] or [SamplerConfig("attn_sequential")]
    total = params.config.layers if axis == "layers" else params.config.heads
    for size in prefixes(total):
        sel = tuple(range(size))
        options = dataclasses.replace(base, **{axis: sel})
        for sampler in samplers:
            row, _, _ = evaluate_sampler(params, seqs, block_range, sampler, options, cfg.sub_block_size)
            rows.append({"axis": axis, "value": size, **row})
    return rows
