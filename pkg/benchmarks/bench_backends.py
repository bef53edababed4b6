"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_backends.py [--repeat 20]

Times each hot kernel on tiny-model-sized inputs plus one full forward and
one forward+backward pass of the 0.25-width 32x32 network, single-threaded.
"""

import argparse
import time

import numpy as np
from threadpoolctl import threadpool_limits

from vigil import backend, synth
from vigil import model as M


def best_ms(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter_ns()
        fn()
        times.append((time.perf_counter_ns() - t0) / 1e6)
    return min(times)


def cases(rng):
    x = rng.standard_normal((64, 16, 16, 16)).astype(np.float32)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    w = rng.standard_normal((16, 3, 3)).astype(np.float32)
    g = rng.standard_normal((64, 16, 16, 16)).astype(np.float32)
    spec = M.tiny_spec(synth.DEFAULT_CLASSES)
    weights = M.build_model(spec, 0)
    batch1 = rng.standard_normal((1, 3, 32, 32)).astype(np.float32)
    batch64 = rng.standard_normal((64, 3, 32, 32)).astype(np.float32)

    def train_step():
        tape = M.forward_train(spec, weights, batch64)
        M.backward(spec, weights, tape, np.ones_like(tape.logits) / 64)

    return {
        "im2col 64x16x18x18 k3": lambda k: k.im2col(xp, 3, 3, 1, 16, 16),
        "depthwise fwd k3": lambda k: k.dw_forward(xp, w, 1, 16, 16),
        "depthwise bwd input": lambda k: k.dw_backward_input(g, w, 1, 18, 18),
        "depthwise bwd weight": lambda k: k.dw_backward_weight(g, xp, 3, 3, 1),
        "maxpool 2x2": lambda k: k.maxpool_forward(x, 2, 2, 2, 8, 8),
        "forward batch 1": lambda k: M.forward(spec, weights, batch1),
        "train step batch 64": lambda k: train_step(),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    names = backend.available()
    table = cases(np.random.default_rng(0))
    print(f"{'case':24s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    with threadpool_limits(limits=1):
        for label, fn in table.items():
            row = {}
            for n in names:
                with backend.use(n):
                    row[n] = best_ms(lambda: fn(backend.kernels), args.repeat)
            line = f"{label:24s}" + "".join(f"{row[n]:10.3f}ms" for n in names)
            if "compiled" in row and "python" in row:
                line += f"{row['python'] / row['compiled']:11.1f}x"
            print(line)


if __name__ == "__main__":
    main()
