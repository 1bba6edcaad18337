import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dlmorder.errors import InvalidInput, InvalidToken, SequenceTooLong, TrainingDiverged
from dlmorder.model import (
    ModelConfig, PARAM_NAMES, aggregate_attention, backward, checkpoint_json, forward, init_params,
    load_checkpoint, masked_loss, save_checkpoint, train,
)
from dlmorder.numerics import finite_diff_grad

from conftest import random_params


def straight_line_logits(params, tokens):
    """Position-by-position loops, no batching or broadcasting."""
    cfg = params.config
    n, d, dh = len(tokens), cfg.dim, cfg.head_dim
    h = [[params.embed[t][c] + params.pos[i][c] for c in range(d)] for i, t in enumerate(tokens)]
    for layer in range(cfg.layers):
        new_h = [[0.0] * d for _ in range(n)]
        for head in range(cfg.heads):
            wq, wk, wv = params.wq[layer, head], params.wk[layer, head], params.wv[layer, head]
            proj = lambda w, x: [sum(x[r] * w[r][c] for r in range(d)) for c in range(dh)]
            q = [proj(wq, x) for x in h]
            k = [proj(wk, x) for x in h]
            v = [proj(wv, x) for x in h]
            for i in range(n):
                sc = [sum(q[i][c] * k[j][c] for c in range(dh)) / math.sqrt(dh) for j in range(n)]
                top = max(sc)
                ex = [math.exp(s - top) for s in sc]
                tot = sum(ex)
                for c in range(dh):
                    new_h[i][head * dh + c] = sum(ex[j] / tot * v[j][c] for j in range(n))
        h = new_h
    return np.array([[sum(params.out_w[t][c] * h[i][c] for c in range(d)) + params.out_b[t]
                      for t in range(cfg.vocab_size)] for i in range(n)])


@pytest.mark.parametrize("layers,heads", [(1, 1), (2, 2)])
def test_forward_matches_straight_line(layers, heads):
    params = random_params(vocab=6, dim=8, layers=layers, heads=heads, max_len=4, seed=3)
    tokens = [1, 4, 0, 5]
    assert np.max(np.abs(forward(params, tokens).logits - straight_line_logits(params, tokens))) <= 1e-10


def test_uniform_attention_under_symmetry():
    params = random_params(vocab=5, dim=4, max_len=5)
    params.embed[:] = params.embed[0]
    params.pos[:] = 0.0
    attn = forward(params, [0, 1, 2, 3]).attention[0, 0]
    assert np.allclose(attn, 0.25, atol=1e-15)


def test_single_token_attention():
    params = random_params()
    assert forward(params, [2]).attention[0, 0].tolist() == [[1.0]]


def test_forward_errors():
    params = random_params(vocab=5, max_len=4)
    with pytest.raises(InvalidToken):
        forward(params, [0, 5])
    with pytest.raises(InvalidToken):
        forward(params, [-1])
    with pytest.raises(SequenceTooLong):
        forward(params, [0] * 5)
    with pytest.raises(InvalidInput):
        forward(params, [0, 1], attention_override=np.ones((1, 1, 3, 3)) / 3)


def test_config_validation():
    with pytest.raises(InvalidInput):
        ModelConfig(vocab_size=5, dim=6, heads=4)
    with pytest.raises(InvalidInput):
        ModelConfig(vocab_size=1, dim=4)
    assert ModelConfig(vocab_size=5, dim=4).mask_id == 4


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 2), st.integers(1, 8), st.integers(0, 2**31))
def test_attention_rows_stochastic(layers, heads, n, seed):
    params = random_params(vocab=6, dim=4, layers=layers, heads=heads, max_len=8, seed=seed % 1000, std=2.0)
    tokens = np.random.default_rng(seed).integers(0, 6, size=n)
    attn = forward(params, tokens).attention
    assert np.all(np.abs(attn.sum(axis=-1) - 1.0) <= 1e-9)
    assert np.all((attn >= 0) & (attn <= 1))


def test_override_with_own_attention_reproduces_logits():
    params = random_params(vocab=6, dim=8, layers=2, heads=2, max_len=6, seed=4)
    tokens = [0, 3, 5, 1, 2]
    res = forward(params, tokens)
    again = forward(params, tokens, res.attention)
    assert np.max(np.abs(again.logits - res.logits)) <= 1e-12


def test_mask_values_use_position():
    params = random_params(vocab=6, dim=8, max_len=4, seed=2)
    res = forward(params, [0, 1, 2])
    expected = (params.embed[5] + params.pos[1]) @ params.wv[0, 0]
    assert np.allclose(res.mask_values[0, 1], expected, atol=1e-15)


def test_masked_loss_one_hot_and_uniform():
    params = random_params(vocab=5, dim=4)
    params.out_w[:] = 0.0
    params.out_b[:] = 0.0
    assert masked_loss(params, [1, 2, 3], [0, 2]) == pytest.approx(math.log(5), abs=1e-12)
    params.out_b[2] = 60.0
    assert masked_loss(params, [2, 2, 2], [0, 1]) < 1e-20


def test_masked_loss_oracle():
    params = random_params(vocab=6, dim=8, layers=1, heads=2, max_len=5, seed=9)
    tokens, masked = [3, 1, 4, 1, 0], [1, 3]
    x = list(tokens)
    for p in masked:
        x[p] = 5
    logits = straight_line_logits(params, x)
    nll = []
    for p in masked:
        row = logits[p]
        lse = max(row) + math.log(sum(math.exp(v - max(row)) for v in row))
        nll.append(lse - row[tokens[p]])
    assert abs(masked_loss(params, tokens, masked) - sum(nll) / len(nll)) <= 1e-10


def test_masked_loss_rejects_empty():
    with pytest.raises(InvalidInput):
        masked_loss(random_params(), [0, 1], [])


def test_masked_loss_relabel_covariant():
    params = random_params(vocab=6, dim=8, max_len=5, seed=11)
    tokens, masked = np.array([0, 3, 2, 4, 1]), [1, 2]
    sigma = np.array([2, 0, 4, 1, 3, 5])  # MASK (5) stays fixed
    relabeled = params.copy()
    relabeled.embed[sigma] = params.embed
    relabeled.out_w[sigma] = params.out_w
    relabeled.out_b[sigma] = params.out_b
    a = masked_loss(params, tokens, masked)
    b = masked_loss(relabeled, sigma[tokens], masked)
    assert abs(a - b) <= 1e-12


def test_backward_unused_token_rows_zero():
    params = random_params(vocab=7, dim=8, max_len=5)
    grad = backward(params, [0, 1, 1, 0], [2])
    # tokens 2..5 never appear in the input (MASK=6 does)
    assert np.all(grad.embed[2:6] == 0.0)


def test_backward_perturbation_sign():
    params = random_params(vocab=6, dim=8, max_len=5, seed=5)
    tokens, masked = [0, 2, 4, 1], [1, 3]
    grad = backward(params, tokens, masked)
    idx = np.unravel_index(np.argmax(np.abs(grad.out_w)), grad.out_w.shape)
    bumped = params.copy()
    bumped.out_w[idx] += 1e-4
    delta = masked_loss(bumped, tokens, masked) - masked_loss(params, tokens, masked)
    assert np.sign(delta) == np.sign(grad.out_w[idx])


def test_backward_finite_differences_multihead():
    params = random_params(vocab=6, dim=8, layers=2, heads=2, max_len=5, seed=6, std=0.4)
    tokens, masked = [0, 3, 2, 4, 1], [0, 2, 4]
    grad = backward(params, tokens, masked)
    flat = params.flat()
    fd = finite_diff_grad(lambda v: masked_loss(params.with_flat(v), tokens, masked), flat)
    an = grad.flat()
    at = 0
    for name in PARAM_NAMES:
        size = getattr(params, name).size
        a, f = an[at:at + size], fd[at:at + size]
        at += size
        assert np.linalg.norm(a - f) <= 1e-4 * max(np.linalg.norm(a), np.linalg.norm(f), 1e-6), name


def test_aggregate_attention():
    params = random_params(vocab=6, dim=8, layers=2, heads=2, max_len=5)
    attn = forward(params, [0, 1, 2]).attention
    single = attn[:1, :1]
    assert np.array_equal(aggregate_attention(single), single[0, 0])
    twin = np.stack([attn[0], attn[0]])
    assert np.allclose(aggregate_attention(twin, heads=[1]), attn[0, 1], atol=1e-15)
    with pytest.raises(InvalidInput):
        aggregate_attention(attn, layers=[])
    with pytest.raises(InvalidInput):
        aggregate_attention(attn, heads=[2])


def test_aggregate_row_stochastic_sweep():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        L, H, n = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 6)
        a = rng.random((L, H, n, n))
        a /= a.sum(axis=-1, keepdims=True)
        m = aggregate_attention(a)
        assert np.all(np.abs(m.sum(axis=1) - 1.0) <= 1e-9)


def test_train_zero_lr_and_determinism(copy_corpus):
    params = init_params(ModelConfig(9, 8, max_len=6), seed=1)
    same = train(params, copy_corpus, 5, 0.0, seed=3)
    for name in PARAM_NAMES:
        assert np.array_equal(getattr(same.params, name), getattr(params, name))
    a = train(params, copy_corpus, 20, 0.3, seed=3)
    b = train(params, copy_corpus, 20, 0.3, seed=3)
    assert a.losses == b.losses
    assert np.array_equal(a.params.flat(), b.params.flat())


def test_train_reduces_loss(copy_corpus):
    params = init_params(ModelConfig(9, 16, max_len=6), seed=0)
    res = train(params, copy_corpus, 500, 0.3, seed=0, batch_size=64)
    assert np.mean(res.losses[-50:]) < res.losses[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence():
    params = init_params(ModelConfig(5, 4, max_len=4), seed=0, std=1.0)
    params.embed[0, 0] = np.inf
    with pytest.raises(TrainingDiverged):
        train(params, np.array([[0, 1, 2, 3]]), 3, 0.1)


def test_train_rejects_bad_args():
    params = init_params(ModelConfig(5, 4, max_len=4))
    with pytest.raises(InvalidInput):
        train(params, np.array([[0, 1]]), -1, 0.1)
    with pytest.raises(InvalidInput):
        train(params, np.array([[0, 1]]), 1, -0.1)


def test_checkpoint_round_trip(tmp_path):
    params = random_params(vocab=6, dim=8, layers=2, heads=2, max_len=5, seed=8)
    path = tmp_path / "ck.json"
    save_checkpoint(params, path)
    back = load_checkpoint(path)
    assert back.config == params.config
    for name in PARAM_NAMES:
        assert np.array_equal(getattr(back, name), getattr(params, name))
    assert checkpoint_json(back) == path.read_text()


def test_checkpoint_rejects_foreign(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "other"}')
    with pytest.raises(InvalidInput):
        load_checkpoint(path)
