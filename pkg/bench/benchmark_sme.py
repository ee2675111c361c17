"""Compare the compiled and pure-Python SME kernels.

Runs identical seeded ensembles on both backends, checks that the records
agree and reports wall time per trajectory-step.

    python3 bench/benchmark_sme.py --ntraj 200 --steps 2000
"""
import argparse
import time

import numpy as np

from qctl import feedback
from qctl.core import SIGMA_Z, density_from_bloch, ket, projector
from qctl.feedback import PatchedLawConfig, SMEModel, affine_law, sme_ensemble, spin_operators


def setups():
    fy, fz = spin_operators(2)
    patched = PatchedLawConfig(projector(ket(0, 2)), fy)
    plus = density_from_bloch([1.0, 0.0, 0.0])
    return {
        "open loop": (SMEModel(SIGMA_Z, SIGMA_Z), plus),
        "affine law": (SMEModel(np.zeros((2, 2)), 0.5 * SIGMA_Z, fy, law=affine_law()), np.eye(2) / 2),
        "patched law": (SMEModel(np.zeros((2, 2)), fz, fy, law=patched), np.eye(2) / 2),
    }


def best_time(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--ntraj", type=int, default=200)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args(argv)

    if feedback.DEFAULT_BACKEND != "compiled":
        print("compiled kernel not built; only the Python backend is available")
        return 1
    T = args.steps * args.dt
    work = args.ntraj * args.steps
    print(f"{args.ntraj} trajectories x {args.steps} steps, best of {args.repeat}")
    print(f"{'setup':<12} {'python [s]':>11} {'compiled [s]':>13} {'speedup':>8} {'ns/step (c)':>12} {'max diff':>9}")
    for name, (model, rho0) in setups().items():
        res = {}
        timing = {}
        for backend in ("python", "compiled"):
            def run(b=backend):
                res[b] = sme_ensemble(model, rho0, T, args.dt, args.ntraj, args.seed,
                                      record_every=args.steps, backend=b, threads=1)
            timing[backend] = best_time(run, args.repeat)
        diff = float(np.abs(res["python"].states - res["compiled"].states).max())
        speed = timing["python"] / timing["compiled"]
        print(f"{name:<12} {timing['python']:>11.3f} {timing['compiled']:>13.3f} {speed:>8.1f} "
              f"{1e9 * timing['compiled'] / work:>12.0f} {diff:>9.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
