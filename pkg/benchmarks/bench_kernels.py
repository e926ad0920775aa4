"""Compare the compiled and NumPy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Times every hot kernel on representative inputs with both backends, then
times one end-to-end dependence estimate per backend in a fresh interpreter
(the backend is chosen at import time).
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from cmidebias._kernels import _pykernels as py

try:
    from cmidebias._kernels import _ckernels as cy
except ImportError:
    cy = None


def cases():
    rng = np.random.default_rng(0)
    n, p = 4096, 9
    dims = np.array([p + 1, 64, 64, 1], dtype=np.intp)
    size = int(sum(a * b + b for a, b in zip(dims[:-1], dims[1:])))
    flat = (rng.standard_normal(size) * 0.1).astype(np.float32)
    zb = rng.standard_normal((n, p)).astype(np.float32)
    c = rng.integers(0, 2, n).astype(np.float32)
    cm = rng.integers(0, 2, n).astype(np.float32)
    perm = rng.permutation(n).astype(np.intp)
    z = np.column_stack([zb, c]).astype(np.float32)
    members = rng.permutation(20_000).astype(np.intp)
    offsets = np.array([0, 4000, 9000, 15000, 20000], dtype=np.intp)
    cum_q = np.cumsum([0.1, 0.2, 0.3, 0.4])
    nbrs = rng.integers(0, 20_000, (20_000, 5)).astype(np.intp)
    xs = rng.integers(0, 50, (5000, 20)).astype(np.float64)
    order = np.argsort(xs, axis=0, kind="stable").astype(np.intp)
    g, h = rng.standard_normal(5000), rng.uniform(0.1, 0.25, 5000)

    def epoch(k):
        f, m, v = flat.copy(), np.zeros_like(flat), np.zeros_like(flat)
        k.critic_epoch(f, m, v, dims, zb, c, cm, perm, 256, 1e-3, 0.99, py.ACT_RELU, 0, -1.0)

    return {
        "uniforms(1e6)": lambda k: k.uniforms(1, 2, 0, 1_000_000),
        "weighted_draws(2e4)": lambda k: k.weighted_draws(1, 3, 20_000, cum_q, offsets, members),
        "knn_donors(2e4)": lambda k: k.knn_donors(1, 4, nbrs),
        "critic_forward(4096)": lambda k: k.critic_forward(flat, dims, z, py.ACT_RELU),
        "critic_epoch(4096)": epoch,
        "best_stump(5000x20)": lambda k: k.best_stump(xs, order, g, h, g.sum(), h.sum(), 1.0),
    }


END_TO_END = (
    "import time, numpy as np;"
    "from cmidebias.cmi import StatNetConfig, estimate_cmi_dv;"
    "from cmidebias.synthetic import SyntheticConfig, generate;"
    "ds, _ = generate(SyntheticConfig(n_users=50, n_items=200, seed=0));"
    "t = time.perf_counter(); estimate_cmi_dv(ds, StatNetConfig(epochs=20)); print(time.perf_counter() - t)"
)


def end_to_end(pure: bool) -> float:
    env = {**os.environ, "CMIDEBIAS_PURE_PYTHON": "1" if pure else "0"}
    out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the timings to this file")
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args(argv)
    backends = {"numpy": py, **({"cython": cy} if cy is not None else {})}
    results = {}
    print(f"{'kernel':24s} " + " ".join(f"{b:>12s}" for b in backends) + ("   speed-up" if cy else ""))
    for name, fn in cases().items():
        row = {b: min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) for b, k in backends.items()}
        results[name] = row
        line = f"{name:24s} " + " ".join(f"{row[b] * 1e3:10.2f}ms" for b in backends)
        if cy is not None:
            line += f"   {row['numpy'] / row['cython']:8.1f}x"
        print(line)
    if not args.skip_end_to_end:
        row = {"numpy": end_to_end(pure=True)}
        if cy is not None:
            row["cython"] = end_to_end(pure=False)
        results["estimate_cmi_dv(20 epochs)"] = row
        print("end-to-end dependence estimate: " + ", ".join(f"{b} {t:.2f}s" for b, t in row.items()))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
