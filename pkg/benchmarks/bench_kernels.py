"""Compares the compiled MLP kernels against the pure-Python (numpy) fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Times one forward + backward pass of the policy and twin-critic shapes used in
training, for several batch sizes, and checks that both backends agree.
"""

import argparse
import timeit

import numpy as np

from taco import _mlp_py

try:
    from taco import _mlpcore
except ImportError:  # extension not built
    _mlpcore = None

SHAPES = {"policy": (8, 64, 64, 4), "critic": (10, 64, 64, 1)}
BATCHES = (1, 10, 64, 256, 512)


def fwd_bwd(mod, params, sizes, x, dout):
    _, cache = mod.mlp_forward(params, sizes, x)
    return mod.mlp_backward(params, sizes, cache, dout, True, True)


def bench(mod, sizes, batch, repeat, rng):
    params = rng.normal(size=_mlp_py.n_params(sizes)) * 0.1
    x = rng.normal(size=(batch, sizes[0]))
    dout = rng.normal(size=(batch, sizes[-1]))
    n = max(1, 2000 // batch)
    t = min(timeit.repeat(lambda: fwd_bwd(mod, params, sizes, x, dout), number=n, repeat=repeat))
    return 1e6 * t / n


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if _mlpcore is None:
        print("compiled extension not available; only the fallback can be timed")
    print(f"{'net':8s} {'batch':>6s} {'python us':>10s} {'compiled us':>12s} {'speedup':>8s}")
    for name, sizes in SHAPES.items():
        p = rng.normal(size=_mlp_py.n_params(sizes))
        x = rng.normal(size=(7, sizes[0]))
        if _mlpcore is not None:
            a, ca = _mlp_py.mlp_forward(p, sizes, x)
            b, cb = _mlpcore.mlp_forward(p, sizes, x)
            d = np.ones_like(a)
            ga, _ = _mlp_py.mlp_backward(p, sizes, ca, d)
            gb, _ = _mlpcore.mlp_backward(p, sizes, cb, d)
            assert np.allclose(a, b, rtol=1e-12, atol=1e-12) and np.allclose(ga, gb, rtol=1e-12, atol=1e-12)
        for batch in BATCHES:
            tp = bench(_mlp_py, sizes, batch, args.repeat, rng)
            if _mlpcore is not None:
                tc = bench(_mlpcore, sizes, batch, args.repeat, rng)
                print(f"{name:8s} {batch:6d} {tp:10.1f} {tc:12.1f} {tp / tc:7.2f}x")
            else:
                print(f"{name:8s} {batch:6d} {tp:10.1f} {'-':>12s} {'-':>8s}")


if __name__ == "__main__":
    main()
