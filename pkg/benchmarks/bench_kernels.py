"""Compiled vs numpy kernels on representative sizes.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each row times one kernel call (best of ``--repeat`` runs of an autoranged
loop) on both backends and checks the two outputs agree.
"""

import argparse
import json
import timeit

import numpy as np

from kan_ntk import _backend, _pykernels
from kan_ntk.basis import BasisSpec, basis_values


def _inputs(N, n, m, nd, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(m, n, nd))
    c = rng.normal(size=(m, nd))
    X = rng.uniform(-0.9, 0.9, size=(N, n))
    B = np.ascontiguousarray(basis_values(BasisSpec.chebyshev(nd), X, 2))
    M = rng.normal(size=(N, n, n))
    return {
        "a": a, "c": c, "B": B, "B0": np.ascontiguousarray(B[0]),
        "e0": rng.normal(size=N), "W": rng.normal(size=(N, n)),
        "M": np.ascontiguousarray(M + M.transpose(0, 2, 1)), "w": rng.normal(size=N),
    }


def cases():
    reg = _inputs(16, 2, 1024, 4)
    big = _inputs(256, 2, 1024, 4, seed=1)
    op = _inputs(80, 2, 512, 4, seed=2)
    sym = np.random.default_rng(3).normal(size=(80, 80))
    sym = sym + sym.T
    yield "forward N=16 m=1024", lambda k: k.kan_forward(reg["a"], reg["c"], reg["B0"], 0, 0)[0]
    yield "forward N=256 m=1024", lambda k: k.kan_forward(big["a"], big["c"], big["B0"], 0, 0)[0]
    yield "vjp N=16 m=1024", lambda k: k.kan_vjp(reg["a"], reg["c"], reg["B0"], reg["w"], 0, 0)[0]
    yield "vjp N=256 m=1024", lambda k: k.kan_vjp(big["a"], big["c"], big["B0"], big["w"], 0, 0)[0]
    yield "operator forward N=80 m=512", lambda k: k.kan_operator_forward(
        op["a"], op["c"], op["B"], op["e0"], op["W"], op["M"], 0, 0)
    yield "operator vjp N=80 m=512", lambda k: k.kan_operator_vjp(
        op["a"], op["c"], op["B"], op["e0"], op["W"], op["M"], op["w"], 0, 0)[0]
    yield "jacobi eigenvalues 80x80", lambda k: k.jacobi_eigenvalues(sym)[0]


def best_time(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="also write the table to this file")
    args = parser.parse_args(argv)

    if "cython" not in _backend.available():
        raise SystemExit("compiled extension not built; run pip install -e . first")
    from kan_ntk import _ckernels

    rows = []
    print(f"{'kernel':32s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speedup':>8s} {'max diff':>10s}")
    for name, call in cases():
        ref, out = call(_pykernels), call(_ckernels)
        diff = float(np.max(np.abs(np.asarray(ref) - np.asarray(out))))
        t_py = best_time(lambda: call(_pykernels), args.repeat)
        t_cy = best_time(lambda: call(_ckernels), args.repeat)
        rows.append({"kernel": name, "numpy_s": t_py, "cython_s": t_cy, "speedup": t_py / t_cy, "max_diff": diff})
        print(f"{name:32s} {1e3 * t_py:11.3f} {1e3 * t_cy:12.3f} {t_py / t_cy:8.1f} {diff:10.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
