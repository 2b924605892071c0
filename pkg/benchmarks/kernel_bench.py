"""Compare the compiled selective-scan kernel against the numpy fallback.

Times forward and forward+backward passes of the raw scan for a grid of
sequence lengths and prints one JSON line per cell, plus a speedup summary.

Usage: python3 benchmarks/kernel_bench.py [--lengths 256,1024,4096] [--repeats 30]
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from hybenc import kernels


def bench_backend(backend, B, T, Dm, N, repeats, warmups, rng):
    u = rng.standard_normal((B, T, Dm)).astype(np.float32)
    delta = np.log1p(np.exp(rng.standard_normal((B, T, Dm)))).astype(np.float32)
    A = -np.exp(rng.standard_normal((Dm, N))).astype(np.float32)
    b = rng.standard_normal((B, T, N)).astype(np.float32)
    c = rng.standard_normal((B, T, N)).astype(np.float32)
    d_skip = rng.standard_normal(Dm).astype(np.float32)
    g = rng.standard_normal((B, T, Dm)).astype(np.float32)

    def fwd():
        backend.scan_forward(u, delta, A, b, c, d_skip, save_states=False)

    def fwd_bwd():
        y, h_all = backend.scan_forward(u, delta, A, b, c, d_skip, save_states=True)
        backend.scan_backward(u, delta, A, b, c, d_skip, h_all, g)

    out = {}
    for phase, fn in (("forward", fwd), ("forward+backward", fwd_bwd)):
        for _ in range(warmups):
            fn()
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            times.append((time.perf_counter() - t0) * 1e3)
        out[phase] = float(np.median(times))
    return out


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lengths", default="256,1024,4096")
    ap.add_argument("--repeats", type=int, default=30)
    ap.add_argument("--warmups", type=int, default=5)
    ap.add_argument("--dm", type=int, default=128)
    ap.add_argument("--n", type=int, default=16)
    args = ap.parse_args()
    lengths = [int(x) for x in args.lengths.split(",")]

    backends = {}
    for name in ("cython", "numpy"):
        try:
            backends[name] = kernels.get_backend(name)
        except Exception as e:
            print(json.dumps({"backend": name, "available": False, "reason": str(e)}))
    if "cython" not in backends:
        print(json.dumps({"note": "compiled kernel unavailable; timing fallback only"}))

    rng = np.random.default_rng(0)
    results = {}
    for T in lengths:
        for name, backend in backends.items():
            row = bench_backend(backend, 2, T, args.dm, args.n, args.repeats, args.warmups, rng)
            results[(T, name)] = row
            print(json.dumps({"backend": name, "seq_len": T, "batch": 2, "d_m": args.dm,
                              "n_state": args.n, **{k: round(v, 3) for k, v in row.items()}}))
    if len(backends) == 2:
        for T in lengths:
            for phase in ("forward", "forward+backward"):
                ratio = results[(T, "numpy")][phase] / results[(T, "cython")][phase]
                print(json.dumps({"seq_len": T, "phase": phase,
                                  "speedup_cython_over_numpy": round(ratio, 2)}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
