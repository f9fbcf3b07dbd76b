"""Time the numba kernels against the numpy fallback at ICT's working sizes.

    python3 benchmarks/bench_kernels.py [--hidden 64] [--repeat 200]

Also times one full ICT subround through each backend. Numba compile time is
excluded (one warm-up call per kernel).
"""
import argparse
import timeit

import numpy as np

from ictmbo import kernels


def cases(d, h, K, N, rng):
    th = 0.2 * rng.standard_normal(kernels.n_params(d, h))
    Xs, ys, w = rng.standard_normal((K, d)), rng.standard_normal(K), np.ones(K)
    Xo, yo = rng.standard_normal((N, d)), rng.standard_normal(N)
    G = rng.standard_normal(th.size)
    return {
        "forward": lambda b: b.forward(th, d, h, Xo),
        "mse_value_and_grad": lambda b: b.mse_value_and_grad(th, d, h, Xo, yo, np.ones(N)),
        "input_grad": lambda b: b.input_grad(th, d, h, Xs[:1]),
        "sample_grad_dots": lambda b: b.sample_grad_dots(th, d, h, Xs, ys, G),
        "meta_finetune": lambda b: b.meta_finetune(th, d, h, Xs, ys, w, Xo, yo, 1e-3, 0.2),
        "adam_update": lambda b: b.adam_update(th, G, G, G * G, 1e-3, 0.9, 0.999, 1e-8, 2.0),
    }


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dim", type=int, default=8)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--K", type=int, default=64)
    ap.add_argument("--offline", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()

    nb = kernels.numba_backend or kernels.load_numba_backend()
    backends = {"numpy": kernels.numpy_backend}
    if nb is not None:
        backends["numba"] = nb
    rng = np.random.default_rng(0)
    table = cases(args.dim, args.hidden, args.K, args.offline, rng)

    print(f"d={args.dim} hidden={args.hidden} K={args.K} offline batch={args.offline}, best of {args.repeat}")
    print(f"{'kernel':<20}" + "".join(f"{name:>12}" for name in backends) + "     speedup")
    for name, fn in table.items():
        times = {}
        for bname, b in backends.items():
            fn(b)  # warm-up / compile
            times[bname] = best_of(lambda: fn(b), args.repeat)
        row = f"{name:<20}" + "".join(f"{times[b] * 1e6:>10.1f}us" for b in backends)
        if "numba" in times:
            row += f"  {times['numpy'] / times['numba']:>8.2f}x"
        print(row)

    subround(args, backends)


def subround(args, backends):
    # a full subround goes through the public API, so swap the module-level dispatch
    from ictmbo import ict, proxy as px
    from ictmbo.tasks import get_task, make_offline_dataset

    task = get_task("quadratic-bowl-8d")
    train, _, _ = make_offline_dataset(task, 1000, 0.2, seed=0).standardized()
    rng = np.random.default_rng(1)
    state = ict.EnsembleState(tuple(px.init_proxy(8, args.hidden, s) for s in (1, 2, 3)), (1, 2, 3))
    cfg = ict.IctConfig(hidden=args.hidden, K=args.K)
    x = train.designs[0] + 0.0 * rng.standard_normal(8)
    saved = {k: getattr(kernels, k) for k in ("forward", "mse_value_and_grad", "input_grad",
                                              "sample_grad_dots", "adam_update", "meta_finetune")}
    try:
        for bname, b in backends.items():
            for k in saved:
                setattr(kernels, k, getattr(b, k))
            ict.ict_subround(state, 0, x, train, cfg)
            t = best_of(lambda: ict.ict_subround(state, 0, x, train, cfg), max(args.repeat // 4, 5))
            print(f"ict_subround ({bname}): {t * 1e3:.2f} ms")
    finally:
        for k, v in saved.items():
            setattr(kernels, k, v)


if __name__ == "__main__":
    main()
