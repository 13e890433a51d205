"""Empirical strong order of the Euler-Maruyama limit solver.

Coarse solutions reuse summed Brownian increments of a fine reference run, so
the error is pathwise.  Prints the mean sup-norm volume error per step count
and the fitted slope.
"""
import argparse
from dataclasses import dataclass

import numpy as np

from lobsim.limit import LimitGrid, brownian_increments, coarsen, solve_limit
from lobsim.model import ConstantMoves, FrozenPrice, default_model
from lobsim.seeding import task_seed


@dataclass(frozen=True)
class Config:
    moving: bool = False
    R: int = 20
    fine: int = 4096
    steps: tuple = (64, 128, 256, 512)
    h: float = 0.01
    seed: int = 7


def run(cfg: Config):
    law = ConstantMoves(0.1, 0.1, 0.3, 0.3, 0.5) if cfg.moving else FrozenPrice()
    model = default_model(law)
    grid = LimitGrid.around(model, h=cfg.h)
    incr = np.stack([brownian_increments(task_seed(cfg.seed, "strong-order", 0, r), cfg.fine, 1.0 / cfg.fine)
                     for r in range(cfg.R)])
    seeds = tuple(range(cfg.R))
    ref = solve_limit(model, grid, 1.0 / cfg.fine, 1.0, seeds=seeds, increments=incr)
    errs = []
    for s in cfg.steps:
        sol = solve_limit(model, grid, 1.0 / s, 1.0, seeds=seeds, increments=coarsen(incr, cfg.fine // s))
        e = np.maximum(np.abs(sol.vb[-1] - ref.vb[-1]).max(axis=-1), np.abs(sol.va[-1] - ref.va[-1]).max(axis=-1))
        errs.append(float(e.mean()))
        print(f"steps={s:5d}  error={errs[-1]:.3e}")
    slope = -np.polyfit(np.log(cfg.steps), np.log(errs), 1)[0]
    print(f"order {slope:.3f}")
    return slope


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--moving", action="store_true", help="let prices move (constant drift and volatility)")
    ap.add_argument("--R", type=int, default=Config.R)
    a = ap.parse_args()
    run(Config(moving=a.moving, R=a.R))


if __name__ == "__main__":
    main()
