"""Compare the numba and numpy kernel backends on model-sized workloads.

Usage: python3 benchmarks/bench_kernels.py [--batch 16] [--repeat 3]

Covers each conv/pool stage of the frame model plus a whole training step.
The numba rows are skipped when numba is not importable.
"""

import argparse
import time

import numpy as np

from fckit import backend, model
from fckit.kernels import numba_ops, numpy_ops


def _time(fn, repeat):
    fn()  # warm: JIT compile and page in buffers
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _conv_cases(batch):
    # (H, cin, cout) for one conv of each stage of the trunk
    return [(120, 3, 16), (120, 16, 16), (60, 16, 32), (30, 32, 64), (15, 64, 80)]


def bench_kernels(batch, repeat):
    rng = np.random.default_rng(0)
    rows = []
    for size, cin, cout in _conv_cases(batch):
        x = rng.standard_normal((batch, size, size, cin)).astype(np.float32)
        w = rng.standard_normal((3, 3, cin, cout)).astype(np.float32)
        b = np.zeros(cout, dtype=np.float32)
        g = rng.standard_normal((batch, size, size, cout)).astype(np.float32)
        label = f"conv {size}x{size} {cin}->{cout}"
        rows.append((
            label + " fwd",
            _time(lambda: numpy_ops.conv2d_run(x, w, b), repeat),
            _time(lambda: numba_ops.conv2d_run(x, w, b), repeat) if backend.HAS_NUMBA else None,
        ))
        rows.append((
            label + " bwd",
            _time(lambda: numpy_ops.conv2d_grads(x, w, g), repeat),
            _time(lambda: numba_ops.conv2d_grads(x, w, g), repeat) if backend.HAS_NUMBA else None,
        ))
    for size, ch in [(120, 16), (60, 32), (30, 64), (14, 80)]:
        x = rng.standard_normal((batch, size, size, ch)).astype(np.float32)
        _, idx = numpy_ops.maxpool2_run(x)
        g = rng.standard_normal((batch, size // 2, size // 2, ch)).astype(np.float32)
        label = f"pool {size}x{size} c{ch}"
        rows.append((
            label + " fwd",
            _time(lambda: numpy_ops.maxpool2_run(x), repeat),
            _time(lambda: numba_ops.maxpool2_run(x), repeat) if backend.HAS_NUMBA else None,
        ))
        rows.append((
            label + " bwd",
            _time(lambda: numpy_ops.maxpool2_grads(idx, g, size, size), repeat),
            _time(lambda: numba_ops.maxpool2_grads(idx, g, size, size), repeat) if backend.HAS_NUMBA else None,
        ))
    return rows


def bench_step(batch, repeat):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((batch, 120, 120, 3)).astype(np.float32)
    grads = {
        "arousal": rng.standard_normal((batch, 1)).astype(np.float32),
        "valence": rng.standard_normal((batch, 1)).astype(np.float32),
        "expression": rng.standard_normal((batch, 7)).astype(np.float32),
    }

    def step():
        graph.forward_frame(x, train=True)
        graph.zero_grads()
        graph.backward_frame(grads)

    rows = []
    for name in ("numpy", "numba") if backend.HAS_NUMBA else ("numpy",):
        backend.set_backend(name)
        graph = model.build_facechannel(seed=0)
        rows.append((name, _time(step, repeat)))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    if not backend.HAS_NUMBA:
        print("numba not importable; timing the numpy backend only\n")

    print(f"{'kernel':<28} {'numpy':>10} {'numba':>10} {'ratio':>7}")
    for label, t_np, t_nb in bench_kernels(args.batch, args.repeat):
        nb = f"{t_nb * 1000:9.1f}m" if t_nb is not None else "      -"
        ratio = f"{t_np / t_nb:6.2f}x" if t_nb else "      -"
        print(f"{label:<28} {t_np * 1000:9.1f}m {nb} {ratio}")

    print(f"\nfull train step, batch {args.batch}:")
    for name, t in bench_step(args.batch, args.repeat):
        print(f"  {name:<8} {t * 1000:9.1f} ms")


if __name__ == "__main__":
    main()
