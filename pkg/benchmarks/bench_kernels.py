"""Time the compiled and pure-Python kernel backends on identical inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from dlmorder import _kernels


def cases():
    rng = np.random.default_rng(0)
    for b in (4, 6, 8):
        s = rng.random(b).tolist()
        yield f"min_surrogate_sum b={b}", lambda mod, s=s: mod.min_surrogate_sum(s)
    for b in (8, 32):
        s = rng.random(b).tolist()
        order = list(rng.permutation(b))
        yield f"surrogate_sum b={b}", lambda mod, s=s, o=order: mod.surrogate_sum(s, o)
    for shape in ((9, 16), (64, 32)):
        w = rng.standard_normal(shape).tolist()
        x0 = rng.standard_normal(shape[1]).tolist()
        yield f"top_eigen_gram {shape[0]}x{shape[1]}", lambda mod, w=w, x0=x0: mod.top_eigen_gram(w, x0, 1e-10, 1000)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    mods = _kernels.backends()
    if "compiled" not in mods:
        print("compiled backend not built; only the Python fallback is available")
    print(f"{'kernel':<28}" + "".join(f"{name:>14}" for name in mods) + f"{'speedup':>10}")
    for label, fn in cases():
        times = {}
        results = {}
        for name, mod in mods.items():
            results[name] = fn(mod)
            number = 1 if name == "python" and "b=8" in label and "min" in label else 20
            times[name] = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
        if len(set(map(repr, results.values()))) != 1:
            raise SystemExit(f"backends disagree on {label}: {results}")
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{label:<28}" + "".join(f"{times[n] * 1e3:>12.3f}ms" for n in mods) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
