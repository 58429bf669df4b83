"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both paths are called directly, so the result does not depend on
MESHGAE_NO_NUMBA. The first numba call (compilation) is excluded.
"""
import argparse
import timeit

import numpy as np

from meshgae import _accel


def cases(rng):
    n_nodes, n_edges, width = 2000, 11000, 32
    pos = rng.uniform(0, 1, (n_nodes, 2)) * np.array([6.0, 2.0])
    x = rng.standard_normal((n_edges, width))
    idx = rng.integers(0, n_nodes, n_edges)
    g = rng.standard_normal((n_edges, width))
    gain, bias = rng.standard_normal(width), rng.standard_normal(width)
    _, xhat, inv = _accel._layer_norm_fwd_np(x, gain, bias, 1e-5)
    out = _accel._elu_fwd_np(x, 1.0)
    h = max(0.08, 6.0 / (2.0 * np.sqrt(n_nodes) + 1.0))
    return [
        ("scatter_add_rows", _accel._scatter_add_rows_nb, _accel._scatter_add_rows_np, (x, idx, n_nodes)),
        ("radius_pairs", _accel._radius_pairs_nb, _accel._radius_pairs_np, (pos, 0.08, h, 2**62)),
        ("layer_norm_fwd", _accel._layer_norm_fwd_nb, _accel._layer_norm_fwd_np, (x, gain, bias, 1e-5)),
        ("layer_norm_bwd", _accel._layer_norm_bwd_nb, _accel._layer_norm_bwd_np, (g, xhat, inv, gain)),
        ("elu_fwd", _accel._elu_fwd_nb, _accel._elu_fwd_np, (x, 1.0)),
        ("elu_bwd", _accel._elu_bwd_nb, _accel._elu_bwd_np, (g, out, 1.0)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, nb, nf, a in cases(rng):
        nb(*a)  # compile
        t_nb = min(timeit.repeat(lambda: nb(*a), number=args.number, repeat=args.repeat)) / args.number
        t_np = min(timeit.repeat(lambda: nf(*a), number=args.number, repeat=args.repeat)) / args.number
        print(f"{name:<18}{1e3 * t_nb:>10.3f}{1e3 * t_np:>10.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
