"""Time the numba kernels against their numpy twins and check they agree.

    python3 benchmarks/bench_kernels.py --n 500 --repeats 5 --samples 2000
"""

import argparse
import time

import numpy as np

from heterorobust.attacks import _candidates
from heterorobust.certify import SmoothingScheme, sample_smoothed_votes
from heterorobust.harness import make_splits
from heterorobust.kernels import score_flips_numba, score_flips_numpy, surrogate_state
from heterorobust.models import ModelConfig, TrainConfig, train
from heterorobust.synth import SynthSpec, stylized_graph
from heterorobust.theory import fit_linear_surrogate


def best_of(fn, repeats):
    out, best = None, np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return out, best


def bench_scores(g, repeats):
    splits = make_splits(g)
    sur = fit_linear_surrogate(g, splits.train)
    xw = np.ascontiguousarray(g.features @ sur.weights)
    v = int(splits.test[0])
    A = g.adjacency
    s1, z1, deg, t = surrogate_state(A.indptr, A.indices, xw, v)
    a, u, s, in_old, in_new = _candidates(A.indptr, A.indices, v, g.n, "with_influencers")
    args = (s1, z1, xw, deg, t, v, int(g.labels[v]), a.astype(np.int64), u.astype(np.int64),
            s.astype(np.int64), in_old, in_new)
    score_flips_numba(*args)  # compile outside the timing
    fast, t_fast = best_of(lambda: score_flips_numba(*args), repeats)
    slow, t_slow = best_of(lambda: score_flips_numpy(*args), repeats)
    return a.size, t_fast, t_slow, float(np.max(np.abs(fast - slow)))


def bench_votes(g, arch, samples, repeats):
    splits = make_splits(g)
    m = train(ModelConfig(arch), TrainConfig(50, 50, 0.2), g, splits)
    scheme = SmoothingScheme(0.001, 0.4)
    v = int(splits.test[0])
    run = lambda b: sample_smoothed_votes(m, g, v, scheme, samples, seed=3, backend=b).counts
    run("numba")
    fast, t_fast = best_of(lambda: run("numba"), repeats)
    slow, t_slow = best_of(lambda: run("numpy"), max(1, repeats // 2))
    return t_fast, t_slow, bool(np.array_equal(fast, slow))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--samples", type=int, default=2000)
    args = ap.parse_args()

    g = stylized_graph(SynthSpec(args.n, 10, 0.8, 5, p=0.7, seed=0, class_mix="total"))
    print(f"graph n={g.n} m={g.adjacency.num_edges}")
    m, tf, ts, err = bench_scores(g, args.repeats)
    print(f"score_flips  candidates={m:6d}  numba {tf * 1e3:8.2f} ms  numpy {ts * 1e3:8.2f} ms  "
          f"speedup {ts / tf:6.1f}x  max|diff| {err:.1e}")
    ok = err < 1e-12
    for arch in ("gcn", "sage_separate"):
        tf, ts, same = bench_votes(g, arch, args.samples, args.repeats)
        print(f"votes {arch:13s} samples={args.samples}  numba {tf:7.3f} s  numpy {ts:7.3f} s  "
              f"speedup {ts / tf:6.1f}x  identical {same}")
        ok &= same
    print("agreement OK" if ok else "AGREEMENT FAILED")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
