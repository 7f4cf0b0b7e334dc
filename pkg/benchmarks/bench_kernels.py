"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Sizes follow one mini-batch of each experiment: 250 planar chains of 149
atoms on 128 pixels, and 300 spatial chains of 214 atoms on 64 x 64 pixels.
"""
import argparse
import timeit

import numpy as np

from chainspec import _kernels


def _case(dim, P, m, N, seed=0):
    rng = np.random.default_rng(seed)
    th = rng.uniform(-np.pi, np.pi, (P, m - 2))
    ps = rng.uniform(0.3, 2.8, (P, m - 2)) if dim == 3 else None
    zhat = np.zeros((P, dim))
    Fhat = np.tile(np.eye(dim), (P, 1, 1))
    j0 = m // 2
    z, F = _kernels.get_backend("python").synthesize(th, ps, zhat, Fhat, j0, 3.8)
    half = np.abs(z).max() + 10
    axes = [np.linspace(-half, half, N)] * (dim - 1)
    g = rng.normal(size=(P,) + (N,) * (dim - 1))
    gz = rng.normal(size=z.shape)
    return {
        "synthesize": lambda k: k.synthesize(th, ps, zhat, Fhat, j0, 3.8),
        "frenet_backward": lambda k: k.frenet_backward(th, ps, F, j0, 3.8, gz),
        "project": lambda k: k.project(z, axes, 3.0, 1.0),
        "project_backward": lambda k: k.project_backward(z, axes, 3.0, 1.0, g),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    names = sorted(_kernels.BACKENDS)
    if "cython" not in names:
        print("compiled extension not built; timing the fallback only")
    cases = {"2d (250 x 149, N=128)": _case(2, 250, 149, 128),
             "3d (300 x 214, N=64)": _case(3, 300, 214, 64)}
    print(f"{'case':24s} {'kernel':18s} " + " ".join(f"{n + ' ms':>12s}" for n in names) + "   speedup")
    for label, ops in cases.items():
        for op, fn in ops.items():
            ms = {}
            for n in names:
                k = _kernels.get_backend(n)
                fn(k)
                ms[n] = 1e3 * min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
            speed = f"{ms['python'] / ms['cython']:8.1f}x" if "cython" in ms else ""
            print(f"{label:24s} {op:18s} " + " ".join(f"{ms[n]:12.2f}" for n in names) + "  " + speed)


if __name__ == "__main__":
    main()
