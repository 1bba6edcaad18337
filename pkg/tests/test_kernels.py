import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dlmorder import _kernels
from dlmorder._kernels import _fallback

BACKENDS = _kernels.backends()
needs_compiled = pytest.mark.skipif("compiled" not in BACKENDS, reason="compiled backend not built")


def test_backend_flag():
    assert _kernels.BACKEND in ("compiled", "python")


def test_fallback_brute_force_matches_itertools():
    s = [0.3, 1.7, 0.9, 1.1]
    best = min(itertools.permutations(range(4)), key=lambda o: sum(k * s[o[k]] for k in range(4)))
    order, total = _fallback.min_surrogate_sum(s)
    assert tuple(order) == best
    assert total == _fallback.surrogate_sum(s, best)


def test_fallback_power_iteration():
    lam = _fallback.top_eigen_gram([[3.0, 0.0], [0.0, 1.0]], [1.0, 1.0], 1e-10, 1000)
    assert lam == pytest.approx(9.0, rel=1e-9)


@needs_compiled
@settings(max_examples=60)
@given(st.integers(1, 7), st.integers(0, 2**31))
def test_backends_bit_identical_surrogate(b, seed):
    rng = np.random.default_rng(seed)
    s = rng.random(b).tolist()
    if b > 2:
        s[1] = s[0]  # exercise ties
    order = [int(i) for i in rng.permutation(b)]
    c, p = BACKENDS["compiled"], BACKENDS["python"]
    assert c.surrogate_sum(s, order) == p.surrogate_sum(s, order)
    oc, tc = c.min_surrogate_sum(s)
    op, tp = p.min_surrogate_sum(s)
    assert tuple(oc) == tuple(op) and tc == tp


@needs_compiled
@settings(max_examples=40)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_backends_bit_identical_power_iteration(r, c, seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((r, c)).tolist()
    x0 = rng.standard_normal(c).tolist()
    a = BACKENDS["compiled"].top_eigen_gram(w, x0, 1e-10, 1000)
    b = BACKENDS["python"].top_eigen_gram(w, x0, 1e-10, 1000)
    assert a == b
