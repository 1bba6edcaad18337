"""Randomised sweeps that check the ordering theory and the model gradients.

Every sweep is seeded, so a report is reproducible byte for byte. A failing
sweep keeps its worst counterexample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..model import ModelConfig, PARAM_NAMES, backward, init_params, masked_loss
from ..numerics import finite_diff_grad, softmax_rows
from ..samplers import StepInput
from ..theory import (
    LIPSCHITZ_CE, TIE_TOL, best_order, brute_force_min_surrogate, check_lipschitz_constant,
    check_prop5_conditions, lipschitz_two_class_limit, pdg_bound, pdg_exact, pdg_surrogate, total_attention,
)

DEFAULT_TRIALS = {
    "order_optimality": 1000,
    "pdg_bound": 500,
    "swap": 1000,
    "entropy_bound": 100_000,
    "lipschitz": 100_000,
    "selection_agreement": 10_000,
    "gradient": None,
}
GRAD_RTOL = 1e-4
# floor for the relative-error denominator, so near-zero gradient subsets compare absolutely
GRAD_FLOOR = 1e-6
BOUND_TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    trials: int
    max_violation: float
    passed: bool
    counterexample: dict | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "trials": self.trials, "max_violation": self.max_violation,
                "passed": self.passed, "counterexample": self.counterexample, "details": self.details}


def random_attention(rng: np.random.Generator, n: int) -> np.ndarray:
    """Row-stochastic matrix from scaled Gaussian logits."""
    return softmax_rows(rng.standard_normal((n, n)) * rng.uniform(0.5, 3.0))


def check_order_optimality(trials: int = 1000, seed: int = 0, order_fn: Callable = best_order) -> CheckResult:
    """Descending total attention attains the brute-force surrogate minimum (b = 2..6)."""
    rng = np.random.default_rng([seed, 1])
    worst, example = 0.0, None
    for t in range(trials):
        b = 2 + t % 5
        n = b + int(rng.integers(0, 3))
        A = random_attention(rng, n)
        block = (n - b, n)
        order = tuple(order_fn(A, block))
        got = pdg_surrogate(A, order, block)
        best, best_val = brute_force_min_surrogate(A, block)
        gap = got - best_val
        if gap > worst:
            worst = gap
            example = {"trial": t, "block": list(block), "scores": total_attention(A, block).tolist(),
                       "order": list(order), "surrogate": got, "brute_force_order": list(best),
                       "brute_force_min": best_val}
    return CheckResult("order_optimality", trials, worst, example is None, example)


def check_pdg_bound(trials: int = 500, seed: int = 0) -> CheckResult:
    """Exact PDG never exceeds its bound for 1-layer, 1-head models with frozen attention."""
    rng = np.random.default_rng([seed, 2])
    worst, example, slack_min = -math.inf, None, math.inf
    for t in range(trials):
        vocab = int(rng.integers(3, 17))
        n = int(rng.integers(2, 9))
        dim = int(rng.choice([2, 4, 8]))
        cfg = ModelConfig(vocab, dim, layers=1, heads=1, max_len=n)
        params = init_params(cfg, seed=int(rng.integers(2**31)), std=float(rng.uniform(0.1, 1.5)))
        params.out_b[...] = rng.normal(0.0, 0.5, vocab)
        seq = rng.integers(0, vocab - 1, size=n)
        b = int(rng.integers(1, min(n, 6) + 1))
        start = int(rng.integers(0, n - b + 1))
        block = (start, start + b)
        perm = tuple(int(i) for i in rng.permutation(b))
        exact = pdg_exact(params, seq, block, perm, frozen_attention=True)
        bound = pdg_bound(params, seq, block, perm)
        excess = exact - bound
        slack_min = min(slack_min, bound - exact)
        if excess > worst:
            worst = excess
            if excess > BOUND_TOL:
                example = {"trial": t, "vocab_size": vocab, "dim": dim, "sequence": seq.tolist(),
                           "block": list(block), "permutation": list(perm), "exact_pdg": exact, "bound": bound}
    return CheckResult("pdg_bound", trials, max(worst, 0.0) if trials else 0.0, example is None, example,
                       {"min_slack": slack_min if trials else None})


def check_swap(trials: int = 1000, seed: int = 0) -> CheckResult:
    """Moving a higher-score position ahead of an adjacent lower one lowers the surrogate."""
    rng = np.random.default_rng([seed, 3])
    worst, example = -math.inf, None
    for t in range(trials):
        while True:
            b = int(rng.integers(2, 9))
            A = random_attention(rng, b)
            s = total_attention(A)
            if np.min(np.diff(np.sort(s))) > TIE_TOL:
                break
        while True:
            perm = [int(i) for i in rng.permutation(b)]
            inversions = [k for k in range(b - 1) if s[perm[k]] < s[perm[k + 1]]]
            if inversions:
                break
        k = inversions[int(rng.integers(len(inversions)))]
        swapped = perm.copy()
        swapped[k], swapped[k + 1] = swapped[k + 1], swapped[k]
        before, after = pdg_surrogate(A, perm), pdg_surrogate(A, swapped)
        change = after - before
        if change > worst:
            worst = change
            if change >= 0:
                example = {"trial": t, "scores": s.tolist(), "permutation": perm, "swapped": swapped,
                           "before": before, "after": after}
    return CheckResult("swap", trials, max(worst, 0.0) if trials else 0.0, example is None, example,
                       {"largest_change": worst if trials else None})


def _negent_bound_rows(M: np.ndarray, vocab: int) -> np.ndarray:
    rest = 1.0 - M
    with np.errstate(divide="ignore", invalid="ignore"):
        first = np.where(M > 0, M * np.log(np.where(M > 0, M, 1.0)), 0.0)
        second = np.where(rest > 0, rest * np.log(np.where(rest > 0, rest, 1.0) / (vocab - 1)), 0.0)
    return first + second


def check_entropy_bound(trials: int = 100_000, seed: int = 0) -> CheckResult:
    """Negative entropy is at most its max-probability bound, with equality at one-hot and uniform."""
    rng = np.random.default_rng([seed, 4])
    vocabs = list(range(2, 51))
    worst, example, reverse = -math.inf, None, math.inf
    for i, vocab in enumerate(vocabs):
        count = trials // len(vocabs) + (1 if i < trials % len(vocabs) else 0)
        if count == 0:
            continue
        alpha = np.exp(rng.uniform(-3.0, 2.0, size=(count, 1)))
        g = rng.gamma(np.broadcast_to(alpha, (count, vocab)))
        g[g.sum(axis=1) == 0, 0] = 1.0
        p = g / g.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            lhs = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0).sum(axis=1)
        rhs = _negent_bound_rows(p.max(axis=1), vocab)
        excess = lhs - rhs
        reverse = min(reverse, float(excess.min()))
        j = int(np.argmax(excess))
        if excess[j] > worst:
            worst = float(excess[j])
            if worst > TIE_TOL:
                example = {"vocab_size": vocab, "p": p[j].tolist(), "negentropy": float(lhs[j]), "bound": float(rhs[j])}
    equality = {}
    for vocab in (2, 3, 10, 50):
        one_hot = np.zeros(vocab)
        one_hot[0] = 1.0
        uniform = np.full(vocab, 1.0 / vocab)
        for label, p in (("one_hot", one_hot), ("uniform", uniform)):
            with np.errstate(divide="ignore", invalid="ignore"):
                lhs = float(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0).sum())
            rhs = float(_negent_bound_rows(np.array([p.max()]), vocab)[0])
            equality[f"{label}_{vocab}"] = abs(lhs - rhs)
    tight = max(equality.values()) <= TIE_TOL
    if not tight and example is None:
        example = {"equality_gaps": equality}
    # the opposite inequality (bound <= negentropy) is tracked for diagnosis
    return CheckResult("entropy_bound", trials, max(worst, 0.0) if trials else 0.0,
                       example is None and tight, example,
                       {"equality_gaps": equality, "reverse_min_slack": reverse if trials else None})


def check_lipschitz(trials: int = 100_000, seed: int = 0) -> CheckResult:
    """Log-softmax gradient norm stays below sqrt(2) and approaches it for two classes."""
    vocabs = (2, 5, 16, 50)
    observed = 0.0
    for i, vocab in enumerate(vocabs):
        count = trials // len(vocabs) + (1 if i < trials % len(vocabs) else 0)
        if count:
            observed = max(observed, check_lipschitz_constant(count, vocab, seed * 100 + i))
    limit = lipschitz_two_class_limit()
    excess = observed - LIPSCHITZ_CE
    reached = max(limit) >= LIPSCHITZ_CE - 1e-3
    ok = excess <= 1e-12 and reached
    example = None if ok else {"max_norm": observed, "two_class_limit": limit}
    return CheckResult("lipschitz", trials, max(excess, 0.0), ok, example,
                       {"max_norm": observed, "two_class_max": max(limit)})


def _dirichlet_rows(rng, m: int, vocab: int) -> np.ndarray:
    alpha = np.exp(rng.uniform(-2.0, 1.0))
    g = rng.gamma(alpha, size=(m, vocab))
    g[g.sum(axis=1) == 0, 0] = 1.0
    return g / g.sum(axis=1, keepdims=True)


def agreement_inputs(trials: int, seed: int = 0) -> list[StepInput]:
    """StepInputs built to satisfy the one-hot condition (even trials) or the entropy-gap condition (odd)."""
    rng = np.random.default_rng([seed, 6])
    out = []
    for t in range(trials):
        while True:
            m = int(rng.integers(2, 7))
            vocab = int(rng.integers(2, 21))
            probs = _dirichlet_rows(rng, m, vocab)
            star = int(rng.integers(m))
            top = int(rng.integers(vocab))
            if t % 2 == 0:
                probs[star] = 0.0
                probs[star, top] = 1.0
            else:
                eps = 10.0 ** rng.uniform(-4.0, -0.3)
                probs[star] = (1.0 - eps) * np.eye(vocab)[top] + eps * probs[star]
            inp = StepInput(tuple(range(m)), probs, np.zeros(m))
            res = check_prop5_conditions([inp])[0]
            if (res.condition_i if t % 2 == 0 else res.condition_ii):
                out.append(inp)
                break
    return out


def check_selection_agreement(trials: int = 10_000, seed: int = 0) -> CheckResult:
    """Entropy and confidence selection agree whenever either sufficient condition holds."""
    results = check_prop5_conditions(agreement_inputs(trials, seed))
    bad = [i for i, r in enumerate(results) if r.violated]
    example = None
    if bad:
        inp = agreement_inputs(bad[0] + 1, seed)[bad[0]]
        example = {"trial": bad[0], "probs": inp.probs.tolist()}
    return CheckResult("selection_agreement", trials, float(len(bad)), not bad, example,
                       {"condition_i": sum(r.condition_i for r in results),
                        "condition_ii": sum(r.condition_ii for r in results)})


def check_gradient(coords_per_block: int | None = None, seed: int = 0) -> CheckResult:
    """Analytic gradients against central differences on a 3-layer, 2-head, d=16 model.

    ``coords_per_block`` limits how many coordinates of each parameter array
    are differenced (None checks all of them).
    """
    rng = np.random.default_rng([seed, 7])
    cfg = ModelConfig(vocab_size=7, dim=16, layers=3, heads=2, max_len=6)
    params = init_params(cfg, seed=seed, std=0.3)
    params.out_b[...] = rng.normal(0.0, 0.3, cfg.vocab_size)
    tokens = rng.integers(0, cfg.vocab_size - 1, size=cfg.max_len)
    masked = sorted(int(i) for i in rng.choice(cfg.max_len, size=3, replace=False))
    analytic = backward(params, tokens, masked)
    errors, worst_block = {}, None
    checked = 0
    for name in PARAM_NAMES:
        base = getattr(params, name)
        size = base.size
        idx = np.arange(size) if coords_per_block is None else np.sort(
            rng.choice(size, size=min(coords_per_block, size), replace=False))

        def f(vals, name=name, idx=idx):
            p = params.copy()
            getattr(p, name).reshape(-1)[idx] = vals
            return masked_loss(p, tokens, masked)

        fd = finite_diff_grad(f, base.reshape(-1)[idx])
        an = getattr(analytic, name).reshape(-1)[idx]
        denom = max(float(np.linalg.norm(an)), float(np.linalg.norm(fd)), GRAD_FLOOR)
        errors[name] = float(np.linalg.norm(an - fd)) / denom
        checked += idx.size
        if worst_block is None or errors[name] > errors[worst_block]:
            worst_block = name
    worst = errors[worst_block]
    ok = worst <= GRAD_RTOL
    example = None if ok else {"block": worst_block, "relative_error": worst}
    return CheckResult("gradient", checked, worst, ok, example, {"relative_error": errors})


CHECKS = ("order_optimality", "pdg_bound", "swap", "entropy_bound", "lipschitz", "selection_agreement", "gradient")


def run_verify(trials: int | None = None, seed: int = 0, order_fn: Callable = best_order,
               only: tuple[str, ...] | None = None) -> list[CheckResult]:
    """Run the sweeps; ``trials`` overrides every default trial count."""
    def n(name):
        return DEFAULT_TRIALS[name] if trials is None else trials

    runners = {
        "order_optimality": lambda: check_order_optimality(n("order_optimality"), seed, order_fn),
        "pdg_bound": lambda: check_pdg_bound(n("pdg_bound"), seed),
        "swap": lambda: check_swap(n("swap"), seed),
        "entropy_bound": lambda: check_entropy_bound(n("entropy_bound"), seed),
        "lipschitz": lambda: check_lipschitz(n("lipschitz"), seed),
        "selection_agreement": lambda: check_selection_agreement(n("selection_agreement"), seed),
        "gradient": lambda: check_gradient(n("gradient"), seed),
    }
    return [runners[name]() for name in (only or CHECKS)]
