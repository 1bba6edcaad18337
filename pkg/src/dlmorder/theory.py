"""Executable decoding-order theory.

Exact permutation dependency gap (PDG), its attention-based upper bound and
rank-weighted surrogate, the descending-total-attention order, brute-force
oracles over all block permutations, and checks for the assumptions and
sampler-equivalence conditions.

Conventions: ``block_range`` is a half-open ``(start, stop)`` over sequence
positions; permutations are tuples of block-relative offsets in decode order
(``order[k]`` is decoded at step ``k``).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .diffusion import DecodeOptions, decode_block, new_block_state, total_attention  # noqa: F401
from .errors import BlockTooLarge, InvalidInput, UnsupportedModel
from .model import ModelParams, aggregate_attention, forward
from .numerics import check_prob_vector, entropy_rows, log_softmax_rows, spectral_norm
from .samplers import SamplerConfig, StepInput, attn_sequential, confidence_select, entropy_select

# Lipschitz constant of log-softmax w.r.t. its logits
LIPSCHITZ_CE = math.sqrt(2.0)
MAX_SURROGATE_BLOCK = 8
MAX_EXACT_BLOCK = 6
TIE_TOL = 1e-12


def _block(sequence, block_range) -> tuple[np.ndarray, int, int]:
    seq = np.asarray(sequence, dtype=np.int64)
    start, stop = block_range
    if not 0 <= start < stop <= seq.size:
        raise InvalidInput(f"block range {block_range} out of bounds for length {seq.size}")
    return seq, int(start), int(stop)


def check_permutation(permutation, b: int) -> tuple[int, ...]:
    order = tuple(int(p) for p in permutation)
    if sorted(order) != list(range(b)):
        raise InvalidInput(f"{order} is not a permutation of range({b})")
    return order


def _ranks(order: Sequence[int]) -> np.ndarray:
    rank = np.empty(len(order), dtype=np.int64)
    rank[list(order)] = np.arange(len(order))
    return rank


def masked_block_attention(params: ModelParams, sequence, block_range) -> np.ndarray:
    """Full attention tensor with every block position masked (the frozen reference)."""
    seq, start, stop = _block(sequence, block_range)
    x = seq.copy()
    x[start:stop] = params.config.mask_id
    return forward(params, x).attention


class PdgEvaluator:
    """Teacher-forced log-likelihoods for one (sequence, block), cached by revealed set.

    ``logp(revealed)`` gives log p(x_i | context) for every block offset i,
    where the block positions outside ``revealed`` hold MASK and everything
    outside the block is visible.
    """

    def __init__(self, params: ModelParams, sequence, block_range, frozen_attention: bool = False):
        self.params = params
        self.seq, self.start, self.stop = _block(sequence, block_range)
        self.b = self.stop - self.start
        self.override = masked_block_attention(params, self.seq, block_range) if frozen_attention else None
        self._cache: dict[frozenset, np.ndarray] = {}

    def logp(self, revealed: frozenset) -> np.ndarray:
        hit = self._cache.get(revealed)
        if hit is None:
            x = self.seq.copy()
            for off in range(self.b):
                if off not in revealed:
                    x[self.start + off] = self.params.config.mask_id
            logits = forward(self.params, x, self.override).logits
            lp = log_softmax_rows(logits)
            idx = np.arange(self.start, self.stop)
            hit = lp[idx, self.seq[idx]]
            self._cache[revealed] = hit
        return hit

    def full_context_terms(self) -> np.ndarray:
        """log p(x_i | x_{S minus i}) for each block offset i."""
        everything = frozenset(range(self.b))
        return np.array([self.logp(everything - {i})[i] for i in range(self.b)])

    def step_terms(self, steps: Sequence[Sequence[int]]) -> list[float]:
        """Log-probability of each committed token, in commit order."""
        revealed: frozenset = frozenset()
        out = []
        for group in steps:
            lp = self.logp(revealed)
            out.extend(float(lp[i]) for i in group)
            revealed = revealed | frozenset(group)
        return out

    def pdg(self, order: Sequence[int]) -> float:
        return self.pdg_steps([[i] for i in order])

    def pdg_steps(self, steps: Sequence[Sequence[int]]) -> float:
        flat = [i for g in steps for i in g]
        if sorted(flat) != list(range(self.b)):
            raise InvalidInput("decode steps must cover every block offset exactly once")
        full = 0.0
        for v in self.full_context_terms():
            full += float(v)
        fact = 0.0
        for v in self.step_terms(steps):
            fact += v
        return full - fact


def pdg_exact(params: ModelParams, sequence, block_range, permutation, frozen_attention: bool = False) -> float:
    """Full-context log-likelihood of the block minus its permutation-factorised one."""
    ev = PdgEvaluator(params, sequence, block_range, frozen_attention)
    return ev.pdg(check_permutation(permutation, ev.b))


def _require_single_layer(params: ModelParams) -> None:
    if params.config.layers != 1 or params.config.heads != 1:
        raise UnsupportedModel("the PDG bound is derived for a 1-layer, 1-head model only")


def value_gap(params: ModelParams, sequence, block_range) -> float:
    """B = max over block positions j of ||v_j - v_mask,j||, with v_mask,j using position j's encoding."""
    _require_single_layer(params)
    seq, start, stop = _block(sequence, block_range)
    res = forward(params, seq)
    diff = res.values[0, 0, start:stop] - res.mask_values[0, start:stop]
    return float(np.sqrt((diff * diff).sum(axis=1)).max())


def later_attention_mass(A: np.ndarray, permutation) -> float:
    """sum_i sum_{j decoded after i} A[i, j] over a block-local attention matrix."""
    A = np.asarray(A, dtype=np.float64)
    order = check_permutation(permutation, A.shape[0])
    rank = _ranks(order)
    later = rank[None, :] > rank[:, None]
    return float(A[later].sum())


def _block_local(A: np.ndarray, n: int, start: int, stop: int) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.shape == (n, n):
        return A[start:stop, start:stop]
    if A.shape == (stop - start, stop - start):
        return A
    raise InvalidInput(f"attention shape {A.shape} matches neither the sequence nor the block")


def pdg_bound(params: ModelParams, sequence, block_range, permutation, A: np.ndarray | None = None) -> float:
    """sqrt(2) * B * ||W||_2 * (attention mass each token sends to later-decoded tokens).

    ``A`` defaults to the attention of the fully masked block.
    """
    return bound_terms(params, sequence, block_range, permutation, A)["bound"]


def bound_terms(params: ModelParams, sequence, block_range, permutation, A: np.ndarray | None = None) -> dict:
    _require_single_layer(params)
    seq, start, stop = _block(sequence, block_range)
    if A is None:
        A = masked_block_attention(params, seq, block_range)[0, 0]
    local = _block_local(A, seq.size, start, stop)
    B = value_gap(params, seq, block_range)
    w_norm = spectral_norm(params.out_w)
    mass = later_attention_mass(local, permutation)
    return {"B": B, "W_norm": w_norm, "later_mass": mass, "bound": LIPSCHITZ_CE * B * w_norm * mass}


def pdg_surrogate(A: np.ndarray, permutation, block_range=None, scale_constants: tuple[float, float] | None = None) -> float:
    """sum_k (k / b) * s_{order[k]} with s the block total attention.

    Multiplied by sqrt(2) * B * ||W||_2 when ``scale_constants = (B, W_norm)``.
    """
    s = total_attention(A, block_range)
    b = s.size
    order = check_permutation(permutation, b)
    value = _kernels.surrogate_sum(s, order) / b
    if scale_constants is not None:
        B, w_norm = scale_constants
        value *= LIPSCHITZ_CE * B * w_norm
    return value


def best_order(A: np.ndarray, block_range=None) -> tuple[int, ...]:
    """Block offsets by descending total attention, lowest offset first on ties."""
    s = total_attention(A, block_range)
    return tuple(sorted(range(s.size), key=lambda i: -s[i]))


def brute_force_min_surrogate(A: np.ndarray, block_range=None) -> tuple[tuple[int, ...], float]:
    """Exhaustive minimum of the unscaled surrogate over all b! orders."""
    s = total_attention(A, block_range)
    if s.size > MAX_SURROGATE_BLOCK:
        raise BlockTooLarge(f"block of {s.size} exceeds the brute-force cap {MAX_SURROGATE_BLOCK}")
    order, total = _kernels.min_surrogate_sum(s)
    return tuple(order), total / s.size


def all_exact_pdg(params: ModelParams, sequence, block_range, frozen: bool = False) -> dict[tuple[int, ...], float]:
    """Exact PDG of every block permutation, in lexicographic order."""
    ev = PdgEvaluator(params, sequence, block_range, frozen)
    if ev.b > MAX_EXACT_BLOCK:
        raise BlockTooLarge(f"block of {ev.b} exceeds the exact brute-force cap {MAX_EXACT_BLOCK}")
    return {order: ev.pdg(order) for order in itertools.permutations(range(ev.b))}


def brute_force_min_exact_pdg(params: ModelParams, sequence, block_range, frozen: bool = False) -> tuple[tuple[int, ...], float]:
    best, best_val = None, math.inf
    for order, val in all_exact_pdg(params, sequence, block_range, frozen).items():
        if val < best_val:
            best, best_val = order, val
    return best, best_val


def order_rank(values: dict[tuple[int, ...], float], order: Sequence[int]) -> int:
    """1-based rank of ``order`` among all permutations (1 = no strictly smaller PDG)."""
    target = values[tuple(order)]
    return 1 + sum(1 for v in values.values() if v < target)


@dataclass
class PdgReport:
    exact_pdg: float
    bound: float | None
    surrogate: float
    surrogate_scaled: float | None
    B: float | None
    W_norm: float
    permutation: tuple[int, ...]
    per_step_terms: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "exact_pdg": self.exact_pdg,
            "bound": self.bound,
            "surrogate": self.surrogate,
            "surrogate_scaled": self.surrogate_scaled,
            "B": self.B,
            "W_norm": self.W_norm,
            "permutation": list(self.permutation),
            "per_step_terms": self.per_step_terms,
        }


def pdg_report(params: ModelParams, sequence, block_range, permutation, frozen_attention: bool = True) -> PdgReport:
    """Exact PDG, bound, surrogate and their constants for one permutation.

    The bound and the scaled surrogate are reported only for 1-layer, 1-head
    models; otherwise they are ``None``.
    """
    ev = PdgEvaluator(params, sequence, block_range, frozen_attention)
    order = check_permutation(permutation, ev.b)
    attn = masked_block_attention(params, ev.seq, block_range)
    A = aggregate_attention(attn)
    full = ev.full_context_terms()
    steps = ev.step_terms([[i] for i in order])
    w_norm = spectral_norm(params.out_w)
    surrogate = pdg_surrogate(A, order, (ev.start, ev.stop))
    bound = B = scaled = None
    if params.config.layers == 1 and params.config.heads == 1:
        terms = bound_terms(params, ev.seq, block_range, order, attn[0, 0])
        bound, B = terms["bound"], terms["B"]
        scaled = pdg_surrogate(A, order, (ev.start, ev.stop), (B, w_norm))
    per_step = [{"step": k, "offset": i, "position": ev.start + i,
                 "full_context_logp": float(full[i]), "factorized_logp": steps[k]}
                for k, i in enumerate(order)]
    return PdgReport(ev.pdg(order), bound, surrogate, scaled, B, w_norm, order, per_step)


def negentropy_upper_bound(M: float, vocab_size: int) -> float:
    """M log M + (1 - M) log((1 - M) / (|V| - 1)); 0 at M = 1."""
    if vocab_size < 2:
        raise InvalidInput("the bound needs |V| >= 2")
    first = M * math.log(M) if M > 0 else 0.0
    rest = 1.0 - M
    second = rest * math.log(rest / (vocab_size - 1)) if rest > 0 else 0.0
    return first + second


def check_entropy_bound(p) -> tuple[float, float, bool]:
    """Negative entropy against its max-probability upper bound. Returns (lhs, rhs, holds)."""
    q = check_prob_vector(p)
    if q.size < 2:
        raise InvalidInput("the bound needs |V| >= 2")
    lhs = -float(entropy_rows(q[None, :])[0])
    rhs = negentropy_upper_bound(float(q.max()), q.size)
    return lhs, rhs, rhs - lhs >= -TIE_TOL


def _sign(x: float, tol: float) -> int:
    return 0 if abs(x) <= tol else (1 if x > 0 else -1)


def check_symmetric_balance(A: np.ndarray, masked_set=(), positions: Sequence[int] | None = None,
                            column_rows: Sequence[int] | None = None, tol: float = TIE_TOL) -> tuple[int, bool]:
    """Does a strictly increasing map take unmasked row sums to column sums?

    Column sums run over ``column_rows`` (default all rows); unmasked row
    sums run over every column outside ``masked_set``. Pairs of
    ``positions`` (default all) are compared: opposite strict orderings and
    cross-ties (tied on one side only) each count as one violation. Values
    within ``tol`` are tied.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    rows = list(range(n)) if column_rows is None else list(column_rows)
    pos = list(range(n)) if positions is None else list(positions)
    keep = np.ones(n, dtype=bool)
    keep[list(masked_set)] = False
    col = A[rows].sum(axis=0)
    row = A[:, keep].sum(axis=1)
    violations = 0
    for a, b in itertools.combinations(pos, 2):
        if _sign(col[a] - col[b], tol) != _sign(row[a] - row[b], tol):
            violations += 1
    return violations, violations == 0


@dataclass
class Prop4Step:
    step: int
    confidence_choice: int
    attention_choice: int
    agree: bool
    violations: int
    balanced: bool


@dataclass
class Prop4Report:
    steps: list[Prop4Step]

    def contingency(self) -> dict[str, int]:
        table = {"balanced_agree": 0, "balanced_disagree": 0, "unbalanced_agree": 0, "unbalanced_disagree": 0}
        for s in self.steps:
            key = ("balanced" if s.balanced else "unbalanced") + ("_agree" if s.agree else "_disagree")
            table[key] += 1
        return table


def check_prop4_equivalence(params: ModelParams, state, options: DecodeOptions | None = None) -> Prop4Report:
    """Decode ``state`` with the attention sampler, comparing it with confidence each step."""
    _require_single_layer(params)
    records: list[Prop4Step] = []

    def observe(st, res, A, inp):
        masked = inp.positions
        v, ok = check_symmetric_balance(A[:st.block_end, :st.block_end], masked, masked,
                                        range(st.block_start, st.block_end))
        c, a = confidence_select(inp), attn_sequential(inp)
        records.append(Prop4Step(st.step_counter, c, a, c == a, v, ok))

    decode_block(params, state, SamplerConfig("attn_sequential"), options, observer=observe)
    return Prop4Report(records)


@dataclass
class Prop5Result:
    condition_i: bool
    condition_ii: bool
    agree: bool

    @property
    def violated(self) -> bool:
        return (self.condition_i or self.condition_ii) and not self.agree


def check_prop5_conditions(inputs: Sequence[StepInput]) -> list[Prop5Result]:
    """Evaluate the two sufficient conditions for entropy and confidence selection to agree."""
    out = []
    for inp in inputs:
        conf = inp.confidence
        negent = -entropy_rows(inp.probs)
        star = int(np.argmax(conf))
        others = [i for i in range(conf.size) if i != star]
        cond_i = conf[star] == 1.0 and all(conf[i] < 1.0 for i in others)
        vocab = inp.probs.shape[1]
        cond_ii = all(conf[star] > conf[i] for i in others) and all(
            negent[star] >= negentropy_upper_bound(float(conf[i]), vocab) for i in others)
        out.append(Prop5Result(bool(cond_i), bool(cond_ii), entropy_select(inp) == confidence_select(inp)))
    return out


@dataclass
class AssumptionDiagnostics:
    attn_drift: float
    mean_attention_gap: list[float]
    symmetric_balance_violations: int
    order: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {"attn_drift": self.attn_drift, "mean_attention_gap": self.mean_attention_gap,
                "symmetric_balance_violations": self.symmetric_balance_violations,
                "order": list(self.order)}


def attention_gaps(A_block: np.ndarray, steps: Sequence[Sequence[int]]) -> list[float]:
    """|mean column attention from the whole block - mean from earlier-decoded tokens|.

    One entry per decoded token that has at least one earlier-decoded token.
    """
    A_block = np.asarray(A_block, dtype=np.float64)
    b = A_block.shape[0]
    earlier: list[int] = []
    gaps = []
    for group in steps:
        for c in group:
            if earlier:
                gaps.append(abs(A_block[:, c].sum() / b - A_block[earlier, c].sum() / len(earlier)))
        earlier.extend(group)
    return gaps


def diagnose_assumptions(params: ModelParams, sequence, block_range, sampler,
                         frozen: bool = False, options: DecodeOptions | None = None) -> AssumptionDiagnostics:
    """Teacher-forced decode of the block, measuring attention drift and the mean-attention gap.

    Drift compares every step's attention tensor to the one seen at the fully
    masked first step. Gaps use that first-step attention over block rows.
    """
    seq, start, stop = _block(sequence, block_range)
    base = options or DecodeOptions()
    opts = DecodeOptions(base.scoring, frozen, base.layers, base.heads, tuple(int(t) for t in seq[:stop]))
    state = new_block_state(seq[:start], stop - start, params.config.mask_id)
    seen: list[np.ndarray] = []
    violations = 0

    def observe(st, res, A, inp):
        nonlocal violations
        seen.append(res.attention)
        v, _ = check_symmetric_balance(A[:st.block_end, :st.block_end], inp.positions, inp.positions,
                                       range(st.block_start, st.block_end))
        violations += v

    decode_block(params, state, sampler, opts, observer=observe)
    drift = max(float(np.abs(a - seen[0]).max()) for a in seen)
    A0 = aggregate_attention(seen[0], base.layers, base.heads)[start:stop, start:stop]
    steps = [[p - start for p in s.positions] for s in state.trace]
    order = tuple(i for g in steps for i in g)
    return AssumptionDiagnostics(drift, attention_gaps(A0, steps), violations, order)


def lipschitz_norms(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """||softmax(k) - e_target||_2 for each row of ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(p.shape[0]), targets] -= 1.0
    return np.sqrt((p * p).sum(axis=1))


def check_lipschitz_constant(num_trials: int, vocab_size: int, seed: int = 0) -> float:
    """Largest observed log-softmax gradient norm over random logits and targets."""
    if vocab_size < 2:
        raise InvalidInput("vocab_size must be at least 2")
    rng = np.random.default_rng(seed)
    scale = np.exp(rng.uniform(-2.0, 4.0, size=(num_trials, 1)))
    logits = rng.standard_normal((num_trials, vocab_size)) * scale
    targets = rng.integers(0, vocab_size, size=num_trials)
    return float(lipschitz_norms(logits, targets).max()) if num_trials else 0.0


def lipschitz_two_class_limit(gaps: Sequence[float] = (1, 2, 5, 10, 20, 40)) -> list[float]:
    """Gradient norms for two classes as the target's logit falls ``gap`` below the other."""
    logits = np.array([[-g, 0.0] for g in gaps], dtype=np.float64)
    return lipschitz_norms(logits, np.zeros(len(gaps), dtype=np.int64)).tolist()
