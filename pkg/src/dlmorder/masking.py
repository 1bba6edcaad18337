"""Absorbing-kernel corruption: replace a sampled position subset with MASK.

The transition matrices of the forward process are never materialised; at
this scale corrupting a sequence to mask fraction ``t`` is the same as
masking an exact-size uniformly random subset of positions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput

# guards ceil() against products like 0.3 * 10 = 3.0000000000000004
_CEIL_SLACK = 1e-9


def masked_count(n: int, fraction: float) -> int:
    """Number of positions masked at ``fraction``: ceil(fraction * n), at least 1."""
    if not 0.0 < fraction <= 1.0:
        raise InvalidInput(f"mask fraction must lie in (0, 1], got {fraction}")
    return max(1, min(n, math.ceil(fraction * n - _CEIL_SLACK)))


def mask_positions(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    count = masked_count(n, fraction)
    return np.sort(rng.permutation(n)[:count])


@dataclass(frozen=True)
class MaskSchedule:
    """How training draws mask fractions.

    ``uniform_fraction``: fraction ~ U(min_fraction, 1].
    ``per_step_linear``: fraction cycles through k/num_levels, k = 1..num_levels,
    one level per training step.
    """

    kind: str = "uniform_fraction"
    min_fraction: float = 0.0
    num_levels: int = 8

    def __post_init__(self):
        if self.kind not in ("uniform_fraction", "per_step_linear"):
            raise InvalidInput(f"unknown mask schedule {self.kind!r}")
        if not 0.0 <= self.min_fraction < 1.0:
            raise InvalidInput("min_fraction must lie in [0, 1)")
        if self.num_levels < 1:
            raise InvalidInput("num_levels must be positive")

    def sample(self, rng: np.random.Generator, step: int = 0) -> float:
        if self.kind == "per_step_linear":
            return (step % self.num_levels + 1) / self.num_levels
        # 1 - U[0, 1) lies in (0, 1]
        return self.min_fraction + (1.0 - self.min_fraction) * (1.0 - rng.random())

    @classmethod
    def from_dict(cls, spec: dict) -> "MaskSchedule":
        return cls(**spec)


def apply_forward_mask(sequence, fraction, seed: int | np.random.Generator, mask_id: int,
                       step: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Mask a uniformly random subset of ``ceil(fraction * n)`` positions.

    ``fraction`` may be a float or a :class:`MaskSchedule`. Returns the
    corrupted copy and the sorted masked positions.
    """
    x = np.array(sequence, dtype=np.int64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidInput("sequence must be a nonempty 1-D token array")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    frac = fraction.sample(rng, step) if isinstance(fraction, MaskSchedule) else float(fraction)
    pos = mask_positions(x.size, frac, rng)
    x[pos] = mask_id
    return x, pos
