"""Small dense linear algebra and information-theoretic primitives.

Everything works in float64. Matrices are plain 2-D ``numpy`` arrays and
probability vectors are 1-D arrays on the simplex.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import _kernels
from .errors import EvaluationError, InvalidInput

SIMPLEX_TOL = 1e-9
SPECTRAL_RTOL = 1e-10
SPECTRAL_MAX_ITER = 1000
SPECTRAL_SEED = 0


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Numerically stable softmax of a 1-D logit vector."""
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidInput("softmax needs a nonempty 1-D logit vector")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("softmax logits must be finite")
    if not temperature > 0:
        raise InvalidInput(f"temperature must be positive, got {temperature}")
    z = x / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax over the last axis."""
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def check_prob_vector(p) -> np.ndarray:
    """Validate a simplex point and return it as a float64 array."""
    q = np.asarray(p, dtype=np.float64)
    if q.ndim != 1 or q.size == 0:
        raise InvalidInput("probability vector must be nonempty and 1-D")
    if not np.all(np.isfinite(q)) or np.any(q < 0.0) or np.any(q > 1.0):
        raise InvalidInput("probabilities must lie in [0, 1]")
    if abs(q.sum() - 1.0) > SIMPLEX_TOL:
        raise InvalidInput(f"probabilities sum to {q.sum()!r}, not 1")
    return q


def entropy(p) -> float:
    """Shannon entropy in nats, with 0 log 0 taken as 0."""
    q = check_prob_vector(p)
    nz = q[q > 0.0]
    return float(-(nz * np.log(nz)).sum())


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    """Entropy of each row of a (m, V) matrix; no validation."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0.0, probs * np.log(np.where(probs > 0.0, probs, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def spectral_norm(w) -> float:
    """Largest singular value of ``w``.

    Power iteration on ``w.T @ w`` from a fixed-seed start vector; stops when
    the Rayleigh quotient changes by less than ``SPECTRAL_RTOL`` relative, or
    after ``SPECTRAL_MAX_ITER`` iterations.
    """
    m = np.asarray(w, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise InvalidInput("spectral_norm needs a nonempty 2-D matrix")
    if not np.all(np.isfinite(m)):
        raise InvalidInput("matrix entries must be finite")
    x0 = np.random.default_rng(SPECTRAL_SEED).standard_normal(m.shape[1])
    lam = _kernels.top_eigen_gram(m.tolist(), x0.tolist(), SPECTRAL_RTOL, SPECTRAL_MAX_ITER)
    return math.sqrt(max(lam, 0.0))


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector."""
    if not h > 0:
        raise InvalidInput("step h must be positive")
    x = np.array(x, dtype=np.float64, copy=True).reshape(-1)
    grad = np.empty_like(x)
    for k in range(x.size):
        orig = x[k]
        x[k] = orig + h
        fp = f(x)
        x[k] = orig - h
        fm = f(x)
        x[k] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise EvaluationError(f"non-finite evaluation at coordinate {k}")
        grad[k] = (fp - fm) / (2.0 * h)
    return grad
