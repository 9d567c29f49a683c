"""Time the compiled and numpy kernel backends on training-sized tensors.

    python3 benchmarks/bench_kernels.py [--batch 32] [--channels 16] [--size 6] [--repeat 5]

Each kernel is run on both backends; outputs are checked for bit equality
and the best-of-``repeat`` wall time is reported.
"""
import argparse
import time

import numpy as np

from shiftadd import kernels


def cases(batch, ch, size, rng):
    R = S = 3
    Hp = Wp = size + 2
    xp = rng.normal(size=(batch, ch, Hp, Wp))
    w = rng.normal(size=(ch, ch, R, S))
    mask = (rng.uniform(size=w.shape) > 0.3).astype(float)
    up = rng.normal(size=(batch, ch, size, size))
    sign = rng.integers(-1, 2, size=w.shape)
    shift = rng.integers(0, 8, size=w.shape)
    xi = rng.integers(-127, 128, size=xp.shape)
    wi = rng.integers(-127, 128, size=w.shape)
    return {
        "conv_forward": (kernels.conv_forward, (xp, w, 1, size, size)),
        "l1_forward": (kernels.l1_forward, (xp, w, mask, 1, size, size)),
        "conv_weight_grad": (kernels.conv_weight_grad, (xp, up, 1, R, S)),
        "l1_weight_grad": (kernels.l1_weight_grad, (xp, w, up, 1)),
        "conv_input_grad": (kernels.conv_input_grad, (up, w, 1, Hp, Wp)),
        "l1_input_grad": (kernels.l1_input_grad, (xp, w, mask, up, 1)),
        "shift_forward_int": (kernels.shift_forward_int, (xi, sign, shift, 1, size, size)),
        "l1_forward_int": (kernels.l1_forward_int, (xi, wi, mask.astype(np.int64), 1, size, size)),
    }


def best_time(fn, args, backend, repeat):
    out, best = None, float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return out, best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--size", type=int, default=6)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    backends = sorted(kernels.BACKENDS)
    print(f"backends {backends}  active {kernels.BACKEND}  batch {args.batch} channels {args.channels} "
          f"size {args.size}x{args.size} kernel 3x3")
    print(f"{'kernel':<20}" + "".join(f"{b + ' ms':>14}" for b in backends) + f"{'speedup':>10}{'equal':>8}")
    rng = np.random.default_rng(args.seed)
    for name, (fn, fargs) in cases(args.batch, args.channels, args.size, rng).items():
        results = {b: best_time(fn, fargs, b, args.repeat) for b in backends}
        outs = [r[0] for r in results.values()]
        equal = all(np.array_equal(outs[0], o) for o in outs[1:])
        times = [results[b][1] for b in backends]
        speed = (results["python"][1] / results["cython"][1]) if "cython" in results else float("nan")
        print(f"{name:<20}" + "".join(f"{t * 1e3:>14.3f}" for t in times) + f"{speed:>9.1f}x{str(equal):>8}")


if __name__ == "__main__":
    main()
