"""Compare the compiled and pure-numpy kernel backends.

Run with ``python3 benchmarks/bench_kernels.py [--repeat R]``.  Each kernel
is timed on both backends over identical inputs and the outputs are checked
to agree before any timing is reported.  A final end-to-end row times a
distributed reachability run on every bundled scenario under each backend in
a fresh interpreter, since the backend is fixed at import time.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from distreach import _kernels as K
from distreach import graph as gr


def _inputs(rng):
    N, n, cols = 6, 12, 8
    sched = gr.GraphSchedule.periodic([gr.cycle_graph(N), gr.random_tree(N, rng)])
    indptr, indices = sched.csr_tables()
    X = rng.standard_normal((N, n, cols))
    Q = np.linalg.qr(rng.standard_normal((N, n, n)))[0]
    P = np.einsum("kij,kj,klj->kil", Q, (rng.random((N, n)) < 0.7).astype(float), Q)
    S, steps, nx, m = 1000, 100, 6, 12
    traj = (rng.standard_normal((S, nx)), rng.standard_normal((S, steps, 3)),
            np.eye(nx) * 0.99, rng.standard_normal((nx, 3)) * 0.01,
            rng.standard_normal((steps + 1, m, nx)), rng.random((steps + 1, m)) + 5.0)
    vals = rng.standard_normal((N, 64))
    ids = np.tile(np.arange(N, dtype=np.int64)[:, None], (1, 64))
    return {
        "dle_round": lambda k: k.dle_round(X, P, indptr[0], indices),
        "dle_iterate(200)": lambda k: k.dle_iterate(X, P, indptr, indices, 0, 0.0, 200, np.zeros(201))[0],
        "consensus_round": lambda k: k.consensus_round(vals, ids, indptr[0], indices)[0],
        "trajectory_margins": lambda k: k.trajectory_margins(*traj),
    }


def _end_to_end(backend: str) -> float:
    code = (
        "import time, warnings\n"
        "from distreach import reach\n"
        "from distreach._kernels import warmup\n"
        "from distreach.scenario import bundled_scenarios, load_scenario\n"
        "warnings.simplefilter('ignore')\n"
        "warmup()\n"
        "scs = [load_scenario(p) for p in bundled_scenarios().values()]\n"
        "t = time.perf_counter()\n"
        "for sc in scs:\n"
        "    reach.reach_distributed(sc.infos(), sc.schedule, sc.config, sc.stacked())\n"
        "print(time.perf_counter() - t)\n"
    )
    env = dict(os.environ, DISTREACH_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", code], env=env, check=True, capture_output=True, text=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args(argv)
    if K.numba_kernels is None:
        print("numba is not installed; nothing to compare")
        return 1
    K.warmup()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, call in _inputs(rng).items():
        np.testing.assert_allclose(call(K.numpy_kernels), call(K.numba_kernels), rtol=1e-10, atol=1e-10)
        t_np = min(timeit.repeat(lambda: call(K.numpy_kernels), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: call(K.numba_kernels), number=1, repeat=args.repeat))
        print(f"{name:<22}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>9.1f}x")
    if not args.skip_end_to_end:
        t_np, t_nb = _end_to_end("numpy"), _end_to_end("numba")
        print(f"{'bundled runs':<22}{1e3 * t_np:>12.1f}{1e3 * t_nb:>12.1f}{t_np / t_nb:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
