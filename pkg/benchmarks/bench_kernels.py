"""Timing comparison of the numpy and numba hot kernels.

Measures the graph layer forward/backward, the sum-rate gradient, and a
full model gradient step at a few problem sizes.  Run from the repo
root:

    python3 benchmarks/bench_kernels.py [--repeats 30] [--batch 25]

The numba columns appear only when numba imports; the first call per
kernel is excluded (jit compilation).
"""

import argparse
import time

import numpy as np

from statprec.backend import USE_NUMBA, active_backend
from statprec.gnn_precoder import kernels_np
from statprec.gnn_precoder import model as gnn_model
from statprec.gnn_precoder import ops

try:
    from statprec.gnn_precoder import kernels_nb
except ImportError:
    kernels_nb = None

SIZES = (
    ("desk", 16, 4, 64, 3),
    ("mid", 32, 8, 64, 3),
    ("large", 64, 16, 128, 5),
)


def median_time(fn, repeats):
    fn()  # warm up (jit compile / cache touch)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def layer_inputs(rng, batch, n, j, dim):
    feats = rng.standard_normal((batch, n, j, dim))
    s, t, u = (rng.standard_normal((dim, dim)) / np.sqrt(dim)
               for _ in range(3))
    q, k = (rng.standard_normal((dim, dim)) / np.sqrt(dim)
            for _ in range(2))
    return feats, s, t, q, k, u


def bench_case(name, n, j, dim, layers, batch, repeats):
    rng = np.random.default_rng(0)
    feats, s, t, q, k, u = layer_inputs(rng, batch, n, j, dim)
    chans = (rng.standard_normal((batch, j, n))
             + 1j * rng.standard_normal((batch, j, n)))
    precs = (rng.standard_normal((batch, n, j))
             + 1j * rng.standard_normal((batch, n, j)))
    precs /= np.linalg.norm(precs, axis=(1, 2), keepdims=True)
    dout = rng.standard_normal(feats.shape)
    sigma2 = np.full(batch, 0.1)
    model = gnn_model.init_gnn(n, layers, dim, rng)
    rows = (rng.standard_normal((batch, j, n))
            + 1j * rng.standard_normal((batch, j, n)))

    mods = [("numpy", kernels_np)]
    if kernels_nb is not None:
        mods.append(("numba", kernels_nb))

    results = {}
    for label, mod in mods:
        fwd = median_time(
            lambda: mod.gat_layer_forward(feats, s, t, q, k, u, 0.1 / n,
                                          0.1, True), repeats)
        bwd = median_time(
            lambda: mod.gat_layer_backward(dout, feats, s, t, q, k, u,
                                           0.1 / n, 0.1, True), repeats)
        grd = median_time(
            lambda: mod.sum_rate_grad_batch(chans, precs, sigma2), repeats)
        results[label] = (fwd, bwd, grd)
    # full gradient step through the active backend dispatch
    step = median_time(lambda: ops.gradient(model, rows, chans, sigma2), repeats)

    print("%-6s N=%-3d J=%-3d dim=%-4d L=%d  (batch %d)"
          % (name, n, j, dim, layers, batch))
    header = "  %-10s %12s %12s %12s" % ("kernel", "forward", "backward",
                                         "rate-grad")
    print(header)
    for label, (fwd, bwd, grd) in results.items():
        print("  %-10s %10.3f ms %10.3f ms %10.3f ms"
              % (label, 1e3 * fwd, 1e3 * bwd, 1e3 * grd))
    if len(results) == 2:
        a, b = results["numpy"], results["numba"]
        print("  %-10s %11.2fx %11.2fx %11.2fx"
              % ("speedup", a[0] / b[0], a[1] / b[1], a[2] / b[2]))
    print("  full gradient step (%s backend): %.3f ms"
          % (active_backend(), 1e3 * step))
    print()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=30)
    ap.add_argument("--batch", type=int, default=25)
    args = ap.parse_args()
    print("active backend: %s (numba %s)"
          % (active_backend(), "available" if USE_NUMBA else "disabled"))
    print()
    for name, n, j, dim, layers in SIZES:
        bench_case(name, n, j, dim, layers, args.batch, args.repeats)


if __name__ == "__main__":
    main()
