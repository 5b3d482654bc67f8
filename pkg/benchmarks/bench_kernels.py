"""Time the numba and numpy tree kernels against each other.

Kernel timings run in-process (both implementations are importable side by
side). End-to-end tree and ensemble fits run once per backend in a child
process, because the backend is fixed when ``fedsense._kernels`` is imported.

    python benchmarks/bench_kernels.py [--rows 800] [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from fedsense import _kernels, taskgen

FIT_SNIPPET = """
import json, sys, time
from fedsense import _kernels, ensembles, taskgen
from fedsense.trees import TreeParams, fit_tree
rows, repeat = int(sys.argv[1]), int(sys.argv[2])
d = taskgen.generate(taskgen.GenSpec(n_tasks=rows, rng_seed=0))
X, y = d.features(), d.labels.astype(float)
fit_tree(X, y)  # warm-up (jit compile or cache load)
out = {"backend": _kernels.BACKEND}
t = time.perf_counter()
for _ in range(repeat):
    fit_tree(X, y, TreeParams(max_depth=8))
out["fit_tree"] = (time.perf_counter() - t) / repeat
t = time.perf_counter()
ensembles.fit_arrays(ensembles.gboost_spec(50), X, d.labels)
out["gboost_50"] = time.perf_counter() - t
print(json.dumps(out))
"""


def _problem(rows, seed=0):
    d = taskgen.generate(taskgen.GenSpec(n_tasks=rows, rng_seed=seed))
    X = np.ascontiguousarray(d.features())
    y = d.labels.astype(np.float64)
    return X, y


def bench_kernels(rows, repeat):
    X, y = _problem(rows)
    n, dim = X.shape
    w = np.ones(n)
    idx = np.arange(n, dtype=np.int64)
    feats = np.arange(dim, dtype=np.int64)
    order = _kernels.presort(X)
    in_node = np.ones(n, dtype=np.bool_)
    tree_args = None
    from fedsense.trees import fit_tree

    t = fit_tree(X, y)
    tree_args = (t.feature, t.threshold, t.left, t.right, t.value)

    cases = {
        "best_split": (
            lambda: _kernels.best_split_numpy(X, y, w, idx, feats, 2, order, in_node),
            (lambda: _kernels.best_split_numba(X, y, w, idx, feats, 2, order, in_node))
            if _kernels.HAS_NUMBA else None,
        ),
        "predict_tree": (
            lambda: _kernels.predict_tree_numpy(X, *tree_args),
            (lambda: _kernels.predict_tree_numba(X, *tree_args)) if _kernels.HAS_NUMBA else None,
        ),
    }
    results = {}
    for name, (np_fn, nb_fn) in cases.items():
        row = {}
        for label, fn in (("numpy", np_fn), ("numba", nb_fn)):
            if fn is None:
                continue
            fn()  # warm-up
            loops = 50
            row[label] = min(timeit.repeat(fn, number=loops, repeat=repeat)) / loops
        results[name] = row
    return results


def bench_fits(rows, repeat):
    results = {}
    for flag in ("0", "1"):
        env = dict(os.environ, FEDSENSE_DISABLE_NUMBA=flag)
        out = subprocess.run(
            [sys.executable, "-c", FIT_SNIPPET, str(rows), str(repeat)],
            env=env, capture_output=True, text=True, check=True,
        )
        r = json.loads(out.stdout)
        results[r.pop("backend")] = r
    return results


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=800)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    print(f"rows={args.rows}  numba available: {_kernels.HAS_NUMBA}")
    print(f"{'case':<14}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, row in bench_kernels(args.rows, args.repeat).items():
        a, b = row.get("numpy"), row.get("numba")
        sp = f"{a / b:9.1f}x" if a and b else "       n/a"
        print(f"{name:<14}{a * 1e6:10.1f}us{(b or float('nan')) * 1e6:10.1f}us{sp}")
    fits = bench_fits(args.rows, args.repeat)
    for case in ("fit_tree", "gboost_50"):
        a = fits.get("numpy", {}).get(case)
        b = fits.get("numba", {}).get(case)
        sp = f"{a / b:9.1f}x" if a and b else "       n/a"
        print(f"{case:<14}{a * 1e3:10.1f}ms{(b or float('nan')) * 1e3:10.1f}ms{sp}")


if __name__ == "__main__":
    main()
