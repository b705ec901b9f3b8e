"""Time the numba and numpy paths of every hot kernel, plus one training step.

    python benchmarks/bench_kernels.py [--repeat 5]

Both paths run in the same process by toggling ``kernels.USE_NUMBA``; the
first numba call of each kernel is a warm-up and is not timed. Set
STREAMADAPT_DISABLE_NUMBA=1 to check what the fallback alone looks like.
"""

import argparse
import time

import numpy as np

from streamadapt import kernels
from streamadapt.model import Classifier, desk_architecture
from streamadapt.signal import butter_sos


def timed(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases(rng):
    x = rng.standard_normal((512, 4, 256)).astype(np.float32)
    w = rng.standard_normal((8, 4, 5)).astype(np.float32)
    b = np.zeros(8, np.float32)
    y = kernels.conv1d_forward(x, w, b, 1, 2)
    dy = rng.standard_normal(y.shape).astype(np.float32)
    _, arg = kernels.maxpool_forward(y, 2)
    dp = rng.standard_normal((512, 8, 128)).astype(np.float32)
    sig = rng.standard_normal((4, 64 * 3600))
    sos = butter_sos("highpass", 0.5, 64.0)
    clf = Classifier(desk_architecture(4, 256), seed=0).train()
    xb = x[:32]
    yb = rng.integers(0, 2, 32)
    return {
        "conv1d forward (512x4x256)": lambda: kernels.conv1d_forward(x, w, b, 1, 2),
        "conv1d backward (with unfold)": lambda: kernels.conv1d_backward(x, w, dy, 1, 2),
        "maxpool forward": lambda: kernels.maxpool_forward(y, 2),
        "maxpool backward": lambda: kernels.maxpool_backward(dp, arg, 2, 256),
        "sosfilt 4ch x 1h @64Hz": lambda: kernels.sosfilt(sos, sig),
        "ar1 4ch x 1h @64Hz": lambda: kernels.ar1(sig, 0.95),
        "train step (batch 32)": lambda: clf.loss_and_grad(xb, yb),
        "inference (512 windows)": lambda: clf.logits(x),
    }


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        print("numba unavailable or disabled; only the numpy path can be timed")
    rng = np.random.default_rng(0)
    rows = []
    for name, fn in cases(rng).items():
        times = {}
        for use in ([True, False] if kernels.HAVE_NUMBA else [False]):
            kernels.USE_NUMBA = use
            times[use] = timed(fn, args.repeat)
        kernels.USE_NUMBA = kernels.HAVE_NUMBA
        rows.append((name, times.get(True), times[False]))
    print(f"{'kernel':32s}{'numba ms':>12s}{'numpy ms':>12s}{'speedup':>10s}")
    for name, t_nb, t_np in rows:
        nb = f"{t_nb * 1e3:12.2f}" if t_nb is not None else f"{'-':>12s}"
        sp = f"{t_np / t_nb:9.2f}x" if t_nb else f"{'-':>10s}"
        print(f"{name:32s}{nb}{t_np * 1e3:12.2f}{sp}")
    return rows


if __name__ == "__main__":
    main()
