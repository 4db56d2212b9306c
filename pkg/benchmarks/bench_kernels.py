"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from fedncv import _pykernels
from fedncv.numeric import derive_stream

try:
    from fedncv import _ckernels
except ImportError:
    _ckernels = None


def cases():
    rng = derive_stream(0, 0)
    n, d, K, h = 500, 32, 10, 32
    X, y = rng.normal(size=(n, d)), rng.integers(0, K, size=n)
    W, b = rng.normal(size=(K, d)) * 0.1, np.zeros(K)
    W1, b1 = rng.normal(size=(h, d)) * 0.1, np.zeros(h)
    W2, b2 = rng.normal(size=(K, h)) * 0.1, np.zeros(K)
    G = rng.normal(size=(n, K * d + K))
    p = rng.dirichlet(np.ones(5))
    r = rng.uniform(size=5)
    offsets = np.array([0, 4, 8, 12], dtype=np.int64)
    outcomes = rng.integers(0, 5, size=(200_000, 12))
    return {
        "loo_reshape (500 x 330)": lambda k: k.loo_reshape(G, 0.5),
        "softmax_xent_grads (500 x 32, K=10)": lambda k: k.softmax_xent_grads(W, b, X, y),
        "mlp1_grads tanh (500 x 32, h=32)": lambda k: k.mlp1_grads(W1, b1, W2, b2, X, y, False),
        "score_networked_batch (2e5 trials)": lambda k: k.score_networked_batch(outcomes, offsets, r, p, 1.0, 0.5),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not built; only the numpy fallback is available")
    print(f"{'kernel':40s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases().items():
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:40s} {t_py:10.2f} {'-':>10s} {'-':>8s}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:40s} {t_py:10.2f} {t_c:10.2f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
