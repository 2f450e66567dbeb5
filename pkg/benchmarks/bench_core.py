"""Time the compiled kernel core against the numpy fallback.

    python3 benchmarks/bench_core.py [--size N] [--repeat R]
"""
import argparse
import timeit

import numpy as np

from kimura_spde import _backend


def _cases(size: int):
    rng = np.random.default_rng(0)
    x = rng.uniform(0.0, 200.0, size)
    z, w = rng.uniform(1e-3, 10.0, (2, size))
    t = rng.uniform(1e-2, 2.0, size)
    weight = rng.uniform(0.0, 1.0, size)
    return {
        "ive(0, x)": lambda: _backend.ive(0.0, x),
        "q_nu(0.5, z, w, t)": lambda: _backend.q_nu(0.5, z, w, t),
        "q0_squared_sum": lambda: _backend.q0_squared_sum(z, w, t, weight),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=200_000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not _backend.COMPILED:
        raise SystemExit("compiled core not built; run `pip install -e . --no-build-isolation` first")
    print(f"{'case':<22}{'compiled ms':>14}{'fallback ms':>14}{'speedup':>10}")
    for name, fn in _cases(args.size).items():
        timings = []
        for fallback in (False, True):
            _backend.use_fallback(fallback)
            fn()
            timings.append(min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3)
        _backend.use_fallback(False)
        print(f"{name:<22}{timings[0]:>14.2f}{timings[1]:>14.2f}{timings[1] / timings[0]:>9.1f}x")


if __name__ == "__main__":
    main()
