import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dlmorder.diffusion import (
    DecodeOptions, MaskSchedule, apply_forward_mask, block_scores, decode_block, decode_order, generate,
    masked_count, new_block_state, sub_block_scores, total_attention, trace_json,
)
from dlmorder.errors import InvalidInput, SamplerStalled, SamplerViolation
from dlmorder.samplers import KINDS, SamplerConfig, Selection

from conftest import random_params

SAMPLERS = [
    SamplerConfig("attn_sequential"), SamplerConfig("attn_parallel", tau=0.3), SamplerConfig("confidence"),
    SamplerConfig("margin"), SamplerConfig("entropy"), SamplerConfig("confidence_threshold_parallel", tau=0.3),
    SamplerConfig("attn_topk", k=2), SamplerConfig("attn_static_threshold", static_threshold=1.0),
    SamplerConfig("random", seed=5),
]


def test_sampler_list_covers_kinds():
    assert sorted(s.kind for s in SAMPLERS) == sorted(KINDS)


def test_forward_mask_full_and_minimal():
    x, pos = apply_forward_mask([1, 2, 3, 4], 1.0, seed=0, mask_id=9)
    assert x.tolist() == [9, 9, 9, 9] and pos.tolist() == [0, 1, 2, 3]
    x, pos = apply_forward_mask(list(range(8)), 1e-9, seed=0, mask_id=9)
    assert len(pos) == 1 and (x == 9).sum() == 1


def test_forward_mask_ceiling_rule():
    assert masked_count(10, 0.3) == 3
    assert masked_count(8, 0.26) == 3
    for bad in (0.0, -0.1, 1.01):
        with pytest.raises(InvalidInput):
            masked_count(8, bad)


def test_forward_mask_counts_exact_over_draws():
    rng = np.random.default_rng(0)
    seen = np.zeros(8)
    for _ in range(10_000):
        x, pos = apply_forward_mask(np.arange(8), 0.4, rng, mask_id=9)
        assert len(pos) == 4 and (x == 9).sum() == 4
        seen[pos] += 1
    # each position is masked with probability 1/2
    assert np.all(np.abs(seen / 10_000 - 0.5) < 0.03)


def test_forward_mask_deterministic_and_schedule():
    a = apply_forward_mask(np.arange(10), 0.5, 7, 11)
    b = apply_forward_mask(np.arange(10), 0.5, 7, 11)
    assert np.array_equal(a[0], b[0])
    sched = MaskSchedule("per_step_linear", num_levels=4)
    assert [sched.sample(None, s) for s in range(5)] == [0.25, 0.5, 0.75, 1.0, 0.25]
    x, pos = apply_forward_mask(np.arange(8), sched, 0, 9, step=1)
    assert len(pos) == 4
    with pytest.raises(InvalidInput):
        MaskSchedule("cosine")


@settings(max_examples=50)
@given(st.integers(0, 2**31))
def test_uniform_schedule_in_range(seed):
    f = MaskSchedule(min_fraction=0.2).sample(np.random.default_rng(seed))
    assert 0.2 <= f <= 1.0 and f > 0


def test_total_attention_examples():
    A = np.array([[0.5, 0.5], [0.25, 0.75]])
    assert total_attention(A).tolist() == [0.75, 1.25]
    assert np.allclose(total_attention(np.full((5, 5), 0.2)), 1.0, atol=1e-15)
    with pytest.raises(InvalidInput):
        total_attention(A, (1, 3))


def test_sub_block_scores_oracle():
    rng = np.random.default_rng(3)
    n = 10
    A = rng.random((n, n))
    A /= A.sum(axis=1, keepdims=True)
    state = new_block_state([0, 1], 8, 9, sub_block_size=4)
    got = sub_block_scores(A, state)
    for i in range(8):
        lo = 2 + (i // 4) * 4
        oracle = sum(A[j, 2 + i] for j in range(lo, lo + 4))
        assert abs(got[i] - oracle) <= 1e-12


def test_sub_block_scores_block_diagonal():
    blk = np.array([[0.6, 0.4], [0.3, 0.7]])
    A = np.zeros((4, 4))
    A[:2, :2] = blk
    A[2:, 2:] = blk[::-1]
    state = new_block_state([], 4, 9, sub_block_size=2)
    assert np.allclose(sub_block_scores(A, state), total_attention(A), atol=1e-15)


def test_sub_block_misaligned():
    with pytest.raises(InvalidInput):
        new_block_state([0], 4, 9, sub_block_size=3)


def test_visible_scoring_mode():
    rng = np.random.default_rng(4)
    A = rng.random((6, 6))
    state = new_block_state([0, 1], 4, 9)
    assert np.allclose(block_scores(A, state, "visible"), A[:, 2:].sum(axis=0))
    assert np.allclose(block_scores(A, state, "block"), A[2:, 2:].sum(axis=0))
    with pytest.raises(InvalidInput):
        DecodeOptions(scoring="prompt")


@pytest.mark.parametrize("sampler", SAMPLERS, ids=lambda s: s.kind)
def test_decode_block_invariants(sampler):
    params = random_params(vocab=7, dim=8, max_len=8, seed=2)
    state = new_block_state([0, 3, 1], 5, params.config.mask_id)
    decode_block(params, state, sampler)
    assert not state.masked.any()
    assert sorted(p for s in state.trace for p in s.positions) == list(range(3, 8))
    assert state.tokens[:3].tolist() == [0, 3, 1]
    assert np.all(state.tokens < params.config.mask_id)
    if sampler.sequential:
        assert len(state.trace) == 5


@pytest.mark.parametrize("sampler", SAMPLERS, ids=lambda s: s.kind)
def test_single_position_block_one_step(sampler):
    params = random_params(seed=1)
    state = new_block_state([2, 2], 1, params.config.mask_id)
    decode_block(params, state, sampler)
    assert len(state.trace) == 1


def test_decode_commits_argmax_and_never_overwrites():
    params = random_params(vocab=7, dim=8, max_len=8, seed=3)
    state = new_block_state([0, 1], 4, params.config.mask_id)
    committed = {}

    def observe(st, res, A, inp):
        for p, t in committed.items():
            assert st.tokens[p] == t
        assert set(inp.positions) == set(st.masked_in_block())

    decode_block(params, state, SamplerConfig("attn_sequential"), observer=observe)
    from dlmorder.model import forward
    replay = new_block_state([0, 1], 4, params.config.mask_id)
    for step in state.trace:
        probs = forward(params, replay.tokens).probs
        for p, t in zip(step.positions, step.tokens):
            assert t == int(np.argmax(probs[p, :6]))
            replay.tokens[p] = t
    assert np.array_equal(replay.tokens, state.tokens)


def test_parallel_with_tau_above_one_matches_sequential():
    params = random_params(vocab=7, dim=8, max_len=8, seed=4)
    a = new_block_state([1, 2], 5, 6)
    b = new_block_state([1, 2], 5, 6)
    decode_block(params, a, SamplerConfig("attn_parallel", tau=1.5))
    decode_block(params, b, SamplerConfig("attn_sequential"))
    assert [(s.positions, s.tokens) for s in a.trace] == [(s.positions, s.tokens) for s in b.trace]


class _Bad:
    def __init__(self, mode):
        self.mode = mode

    def select(self, inp, step):
        if self.mode == "empty":
            return Selection(())
        return Selection((0,))


def test_sampler_errors():
    params = random_params(seed=5)
    with pytest.raises(SamplerStalled):
        decode_block(params, new_block_state([1, 2], 3, 6), _Bad("empty"))
    with pytest.raises(SamplerViolation):
        decode_block(params, new_block_state([1, 2], 3, 6), _Bad("decoded"))


def test_frozen_attention_decode_deterministic():
    params = random_params(vocab=7, dim=8, max_len=8, seed=6)
    seen = []
    opts = DecodeOptions(frozen_attention=True)
    s1 = new_block_state([0, 1, 2], 4, 6)
    decode_block(params, s1, SamplerConfig("attn_sequential"), opts,
                 observer=lambda st, res, A, inp: seen.append(res.attention))
    assert all(np.array_equal(a, seen[0]) for a in seen)
    s2 = new_block_state([0, 1, 2], 4, 6)
    decode_block(params, s2, SamplerConfig("attn_sequential"), opts)
    assert trace_json(s1.trace) == trace_json(s2.trace)


def test_teacher_forced_reference():
    params = random_params(vocab=7, dim=8, max_len=8, seed=7)
    ref = (0, 1, 5, 4, 3)
    state = new_block_state(ref[:2], 3, 6)
    decode_block(params, state, SamplerConfig("attn_sequential"), DecodeOptions(reference=ref))
    assert tuple(state.tokens.tolist()) == ref


def test_trace_json_and_gamma():
    params = random_params(vocab=7, dim=8, max_len=8, seed=8)
    state = new_block_state([0, 1], 3, 6)
    decode_block(params, state, SamplerConfig("attn_parallel", tau=1e-9))
    doc = json.loads(trace_json(state.trace))
    assert doc[0]["gamma"] is None and doc[0]["gamma_is_neg_inf"] is True
    assert sorted(doc[0]["positions"]) == [2, 3, 4]
    assert set(doc[0]) >= {"positions", "tokens", "confidences", "scores", "step"}
    assert decode_order(state.trace, 2) == (0, 1, 2)


def test_generate():
    params = random_params(vocab=7, dim=8, max_len=12, seed=9)
    sampler = SamplerConfig("attn_sequential")
    same = generate(params, [1, 2], 0, 3, sampler)
    assert same.tokens.tolist() == [1, 2] and same.traces == []
    full = generate(params, [1, 2], 3, 3, sampler)
    assert full.tokens.size == 11 and len(full.traces) == 3
    again = generate(params, [1, 2], 3, 3, sampler)
    assert np.array_equal(full.tokens, again.tokens)
    first_block = full.tokens[2:5].tolist()
    stopped = generate(params, [1, 2], 3, 3, sampler, eos_token=first_block[0])
    assert len(stopped.traces) == 1
    with pytest.raises(InvalidInput):
        generate(params, [], 1, 3, sampler)
