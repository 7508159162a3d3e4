"""Compare the numba kernels with their numpy twins.

    python benchmarks/bench_accel.py [--repeat 5] [--end-to-end]

Kernel timings call both twins directly in one process.  ``--end-to-end``
also trains a small model in two subprocesses, one per value of
``GCKM_DISABLE_NUMBA``.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from gckm import _accel


def csr_graph(rng, n, avg_degree):
    deg = rng.poisson(avg_degree, size=n)
    indptr = np.concatenate([[0], np.cumsum(deg)]).astype(np.int64)
    indices = rng.integers(0, n, size=indptr[-1]).astype(np.int64)
    return indptr, indices, rng.random(n), rng.random(indptr[-1])


def cases(rng):
    indptr, indices, self_w, nb_w = csr_graph(rng, 3000, 8)
    F = rng.normal(size=(3000, 32))
    A, B = rng.normal(size=(1500, 64)), rng.normal(size=(1500, 64))
    S = rng.normal(size=(80, 80))
    S = S + S.T
    M = rng.normal(size=(300, 300)) + 20 * np.eye(300)
    rhs = rng.normal(size=(300, 4))
    return {
        "aggregate n=3000 deg=8 k=32": (_accel._aggregate_nb, _accel._aggregate_np, (indptr, indices, self_w, nb_w, F)),
        "rowwise_dot 1500x1500 d=64": (_accel._rowwise_dot_nb, _accel._rowwise_dot_np, (A, B)),
        "jacobi n=80": (_accel._jacobi_nb, _accel._jacobi_np, (S, 1e-15, 60)),
        "gauss n=300 rhs=4": (_accel._gauss_nb, _accel._gauss_np, (M, rhs)),
    }


def bench_kernels(repeat: int) -> list:
    rows = []
    for name, (nb, np_twin, args) in cases(np.random.default_rng(0)).items():
        nb(*args)  # compile outside the timed region
        t_nb = min(timeit.repeat(lambda: nb(*args), number=1, repeat=repeat))
        t_np = min(timeit.repeat(lambda: np_twin(*args), number=1, repeat=repeat))
        rows.append({"kernel": name, "numba_s": t_nb, "numpy_s": t_np, "speedup": t_np / t_nb})
    return rows


TRAIN_SNIPPET = """
import json, time
from gckm.datasets import make_csbm
from gckm.config import ModelConfig
from gckm.model import train
g = make_csbm(n=800, classes=4, d=32, p_in=0.02, p_out=0.002, n_val=40, seed=0)
cfg = ModelConfig.from_dict({"layers": [{"width": 32}, {"width": 16}], "optimizer": {"max_iter": 5}})
train(g, cfg)
t0 = time.perf_counter()
train(g, cfg)
print(json.dumps(time.perf_counter() - t0))
"""


def bench_end_to_end() -> dict:
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, GCKM_DISABLE_NUMBA=flag)
        proc = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], capture_output=True, text=True,
                              env=env, check=True)
        out[label] = json.loads(proc.stdout.strip().splitlines()[-1])
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")
    for r in bench_kernels(args.repeat):
        print(f"{r['kernel']:<30} numba {r['numba_s'] * 1e3:9.2f} ms   numpy {r['numpy_s'] * 1e3:9.2f} ms"
              f"   x{r['speedup']:.1f}")
    if args.end_to_end:
        t = bench_end_to_end()
        print(f"{'train n=800, 5 iterations':<30} numba {t['numba']:9.2f} s    numpy {t['numpy']:9.2f} s")


if __name__ == "__main__":
    main()
