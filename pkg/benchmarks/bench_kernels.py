"""Compare the compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times episode drawing on the default synthetic dataset and AUC ranking on
episode-sized score vectors, checks that both backends return identical
results, and prints one line per kernel.
"""

import argparse
import time
import timeit

import numpy as np

from gfsl import _kernels
from gfsl.episodes import EpisodeSampler, EpisodeSpec
from gfsl.partition import build_class_partition, build_example_pools
from gfsl.synth import SynthConfig, make_synthetic


def _draw_inputs(n_draws):
    ds = make_synthetic(SynthConfig(), seed=0)
    cp = build_class_partition(ds)
    sampler = EpisodeSampler(ds, cp, build_example_pools(ds, cp, seed=0))
    pool = sampler.pool_rows["meta_tst"]
    eps = [sampler.generate(EpisodeSpec.from_way(3, 1, 30, 30, "meta-test"), s) for s in range(n_draws)]
    return [(ds.masks, pool, ds.vocab.encode(e.classes), np.array(e.class_bits, dtype=np.int32), 30, 30, 1, s)
            for s, e in enumerate(eps)]


def _auc_inputs(n, size):
    r = np.random.default_rng(0)
    out = []
    for _ in range(n):
        s = r.normal(size=size)
        s[: size // 4] = np.round(s[: size // 4], 1)  # some ties
        out.append((s, r.integers(0, 2, size=size)))
    return out


def bench(fn, args, repeat):
    best = min(timeit.repeat(lambda: [fn(*a) for a in args], number=1, repeat=repeat))
    return best / len(args)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--draws", type=int, default=200)
    args = ap.parse_args()
    try:
        fast = _kernels.load_backend("cython")
    except ImportError:
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
    pure = _kernels.load_backend("python")

    t0 = time.perf_counter()
    draws = _draw_inputs(args.draws)
    aucs = _auc_inputs(2000, 93)  # 3 classes x 31 test examples
    print(f"inputs ready in {time.perf_counter() - t0:.1f}s; active backend: {_kernels.BACKEND}")

    for a in draws[:50]:
        x, y = pure.draw_episode(*a), fast.draw_episode(*a)
        assert all(np.array_equal(u, v) for u, v in zip(x[:3], y[:3])) and x[3] == y[3]
    for a in aucs[:200]:
        assert pure.auc_rank(*a) == fast.auc_rank(*a)

    for name, args_ in (("draw_episode", draws), ("auc_rank", aucs)):
        tp = bench(getattr(pure, name), args_, args.repeat)
        tf = bench(getattr(fast, name), args_, args.repeat)
        print(f"{name:<13} python {1e6 * tp:9.1f} us/call  cython {1e6 * tf:8.1f} us/call  speedup {tp / tf:6.1f}x")


if __name__ == "__main__":
    main()
