"""Time the span-grid kernels under both backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--T 40]

Prints one line per (kernel, backend) with the best-of-N wall time and, when
the compiled extension is built, the speedup over the pure-Python loops.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from bsner import kernels


def _cases(T: int, c: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    n_ent = max(1, T // 6)
    starts = np.sort(rng.choice(T - 3, size=n_ent, replace=False)).astype(np.int64)
    ends = np.minimum(starts + rng.integers(0, 3, size=n_ent), T - 1).astype(np.int64)
    types = rng.integers(1, c, size=n_ent).astype(np.int64)
    sizes = np.full(n_ent, 2, dtype=np.int64)
    logits = rng.standard_normal((T, T, c))
    logits[..., 0] += 2.0
    probs = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
    valid = np.triu(np.ones((T, T), dtype=bool))
    cs, ce, _, conf = kernels.candidates(probs, valid, 0.0)
    order = np.argsort(-conf, kind="stable")
    return {
        "smooth_fill": (starts, ends, types, sizes, T, c, 0.2, False),
        "candidates": (probs, valid, 0.0),
        "greedy": (cs[order], ce[order], False),
    }


def _best(fn, args, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--T", type=int, default=40, help="sentence length")
    p.add_argument("--c", type=int, default=5, help="label count including non-entity")
    args = p.parse_args()
    cases = _cases(args.T, args.c)
    backends = sorted(kernels.BACKENDS)
    print(f"T={args.T} c={args.c} backends={backends}")
    for name, case in cases.items():
        times = {}
        for b in backends:
            kernels.use_backend(b)
            times[b] = _best(getattr(kernels, name), case, args.repeat)
        line = "  ".join(f"{b}={t * 1e3:9.3f} ms" for b, t in times.items())
        if "compiled" in times and times["compiled"] > 0:
            line += f"  speedup x{times['python'] / times['compiled']:.1f}"
        print(f"{name:12s} {line}")
    kernels.use_backend("compiled" if "compiled" in kernels.BACKENDS else "python")


if __name__ == "__main__":
    main()
