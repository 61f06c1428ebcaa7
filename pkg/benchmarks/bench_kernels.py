"""Compare the numba and numpy kernel backends.

Each backend runs in its own subprocess because the backend is chosen at
import time from ``RESPMATCH_NUMBA``.  Timings exclude the first call so
numba compilation is not counted.

    python3 benchmarks/bench_kernels.py [--repeats 5] [--size 2]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _diamond_supercell(size):
    from respmatch import Structure
    from respmatch.structure import make_supercell

    frac = np.array(
        [[0, 0, 0], [0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0], [0.25, 0.25, 0.25], [0.25, 0.75, 0.75], [0.75, 0.25, 0.75], [0.75, 0.75, 0.25]]
    )
    a = (8 * 4.4) ** (1.0 / 3.0)
    s = Structure([6] * 8, frac * a, np.eye(3) * a)
    s = make_supercell(s, size, size, size)
    rng = np.random.default_rng(0)
    return s.copy_with_positions(s.positions + rng.normal(scale=0.05, size=s.positions.shape))


def _best_of(fn, repeats):
    fn()  # warm-up (and compilation)
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def worker(repeats, size):
    from respmatch import _kernels
    from respmatch.analysis import structure_fingerprint
    from respmatch.noise import NoiseSpec, make_training_sample
    from respmatch.potential import Hyper, PotentialParams, evaluate
    from respmatch.trainer import loss_param_gradient

    s = _diamond_supercell(size)
    params = PotentialParams.initialize([6], Hyper(), np.random.default_rng(0))
    sample = make_training_sample(s, NoiseSpec(d_max=0.3, gamma_max=0.05), np.random.default_rng(1))
    out = {
        "backend": _kernels.backend(),
        "atoms": len(s),
        "energy+forces+stress": _best_of(lambda: evaluate(params, [s]), repeats),
        "loss gradient": _best_of(lambda: loss_param_gradient(params, [sample], 1.0), repeats),
        "fingerprint": _best_of(lambda: structure_fingerprint(s), repeats),
    }
    print(json.dumps(out))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--size", type=int, default=2, help="diamond supercell repeats per axis (8 atoms per cell)")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        worker(args.repeats, args.size)
        return 0

    rows = {}
    for flag in ("1", "0"):
        env = dict(os.environ, RESPMATCH_NUMBA=flag)
        cmd = [sys.executable, __file__, "--worker", "--repeats", str(args.repeats), "--size", str(args.size)]
        res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        data = json.loads(res.stdout.strip().splitlines()[-1])
        rows[data.pop("backend")] = data

    atoms = rows["numpy"].pop("atoms")
    rows["numba"].pop("atoms", None)
    print(f"diamond supercell, {atoms} atoms, best of {args.repeats}")
    print(f"{'task':<24}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for task, t_np in rows["numpy"].items():
        t_nb = rows["numba"][task]
        print(f"{task:<24}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
