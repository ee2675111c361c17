"""Sweep the switching threshold of the patched feedback law.

For each gamma, runs a seeded ensemble of the spin-1/2 setup from I/2 and
reports the final mean overlap with the target, the spread across
trajectories and the first recorded time the mean overlap reaches 0.95.

    python3 bench/tune_patched_gamma.py --ntraj 200 --T 30
"""
import argparse

import numpy as np

from qctl.core import ket, projector
from qctl.feedback import PatchedLawConfig, SMEModel, sme_ensemble, spin_operators


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--gammas", type=float, nargs="+", default=[0.2, 0.3, 0.45, 0.6, 0.8])
    p.add_argument("--ntraj", type=int, default=200)
    p.add_argument("--T", type=float, default=30.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=2024)
    args = p.parse_args(argv)

    fy, fz = spin_operators(2)
    rd = projector(ket(0, 2))
    print(f"{args.ntraj} trajectories, T={args.T}, dt={args.dt}, seed={args.seed}")
    print(f"{'gamma':>6} {'mean overlap':>13} {'min overlap':>12} {'t(mean>=0.95)':>14} {'clip frac':>10}")
    for gamma in args.gammas:
        law = PatchedLawConfig(rd, fy, gamma=gamma, u_const=1.0)
        model = SMEModel(np.zeros((2, 2)), fz, fy, law=law)
        res = sme_ensemble(model, np.eye(2) / 2, args.T, args.dt, args.ntraj, args.seed,
                           record_every=100)
        ov = np.real(res.states[..., 0, 0])
        mean = ov.mean(axis=0)
        hit = np.nonzero(mean >= 0.95)[0]
        t_hit = f"{res.times[hit[0]]:.1f}" if len(hit) else "never"
        clip = res.clip_events.sum() / (res.n_traj * res.n_steps)
        print(f"{gamma:>6.2f} {mean[-1]:>13.5f} {ov[:, -1].min():>12.5f} {t_hit:>14} {clip:>10.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
