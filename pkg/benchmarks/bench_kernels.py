"""Time the compiled and numpy kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--channels 16]
"""

import argparse
import time

import numpy as np

from dsa_forge import _kernels
from dsa_forge.testing import random_act_steps, random_coef_steps, seeded_rng


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng, channels):
    tiles = random_act_steps(rng, (16, 16, 16))
    blocks = random_coef_steps(rng, (16, 3, 3))
    active = np.ones(16, np.uint8)
    src = random_act_steps(rng, (channels, 58, 58))
    kernels = random_coef_steps(rng, (channels, channels, 3, 3))

    def ring(b):
        partials = np.zeros((16, 14, 14), np.int64)
        return lambda: [b.ring_step(tiles, blocks, active, partials) for _ in range(64)]

    def direct(b):
        return lambda: b.conv3x3_direct(src, kernels)

    return {"ring_step x64": ring, f"conv3x3_direct {channels}ch 56x56": direct}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--channels", type=int, default=16)
    args = ap.parse_args(argv)

    backends = _kernels.available_backends()
    print(f"backends: {', '.join(backends)} (active: {_kernels.BACKEND})")
    rng = seeded_rng()
    for name, make in cases(rng, args.channels).items():
        timings = {b: best_of(make(mod), args.repeat) for b, mod in backends.items()}
        row = "  ".join(f"{b} {t * 1e3:9.3f} ms" for b, t in timings.items())
        if len(timings) == 2:
            row += f"  speedup {timings['python'] / timings['cython']:.1f}x"
        print(f"{name:32s} {row}")


if __name__ == "__main__":
    main()
