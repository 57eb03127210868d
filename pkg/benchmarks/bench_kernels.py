"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--batch 1024] [--repeat 5]

Both paths are called directly, so the EPPSIM_DISABLE_NUMBA flag has no
effect here.  The first numba call (JIT compile) is excluded from timings.
"""

import argparse
import time

import numpy as np

from eppsim import _kernels
from eppsim.decoherence import MemoryParams, jump_operators
from eppsim.quantum import random_states_with_fidelity


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=1024)
    ap.add_argument("--substeps", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    if not _kernels.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1

    rng = np.random.default_rng(0)
    rhos = random_states_with_fidelity(0.75, args.batch, rng)
    rhos2 = random_states_with_fidelity(0.75, args.batch, rng)
    jumps = jump_operators(MemoryParams.preset("ca40"))
    dt = 10e-3

    cases = {
        "rk4_evolve": (lambda: _kernels.rk4_evolve_numpy(rhos, jumps, dt, args.substeps),
                       lambda: _kernels.rk4_evolve_numba(rhos, jumps, dt, args.substeps)),
        "bxor_postselect": (lambda: _kernels.bxor_postselect_numpy(rhos, rhos2),
                            lambda: _kernels.bxor_postselect_numba(rhos, rhos2)),
    }

    print(f"batch={args.batch} substeps={args.substeps} best of {args.repeat}")
    print(f"{'kernel':<18}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max |diff|':>12}")
    for name, (np_fn, nb_fn) in cases.items():
        ref, fast = np_fn(), nb_fn()  # also warms the JIT
        if isinstance(ref, tuple):
            diff = max(float(np.max(np.abs(a - b))) for a, b in zip(ref, fast))
        else:
            diff = float(np.max(np.abs(ref - fast)))
        t_np = best_of(np_fn, args.repeat)
        t_nb = best_of(nb_fn, args.repeat)
        print(f"{name:<18}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}x{diff:>12.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
