"""KS convergence sweep of discrete paths towards the limit solver.

    python3 scripts/convergence.py --preset imbalance --n 16,32,64,128 --R 500
"""
import argparse
import json
from dataclasses import asdict, dataclass

from lobsim.model import ConstantMoves, default_model, imbalance_model
from lobsim.stats import convergence_sweep

PRESETS = {
    "imbalance": imbalance_model,
    "constant": lambda: default_model(ConstantMoves(0.1, 0.1, 0.3, 0.3, 0.5), coupling="common"),
}


@dataclass(frozen=True)
class Config:
    preset: str = "imbalance"
    n_list: tuple = (16, 32, 64, 128)
    R: int = 500
    t_list: tuple = (0.5, 1.0)
    seed: int = 9
    boot: int = 1000
    alpha: float = 0.01
    jobs: int = 1
    out: str = "convergence.json"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", choices=sorted(PRESETS), default=Config.preset)
    ap.add_argument("--n", type=lambda s: tuple(int(x) for x in s.split(",")), default=Config.n_list)
    ap.add_argument("--R", type=int, default=Config.R)
    ap.add_argument("--seed", type=int, default=Config.seed)
    ap.add_argument("--jobs", type=int, default=Config.jobs)
    ap.add_argument("--out", default=Config.out)
    a = ap.parse_args()
    cfg = Config(preset=a.preset, n_list=a.n, R=a.R, seed=a.seed, jobs=a.jobs, out=a.out)

    rep = convergence_sweep(PRESETS[cfg.preset](), cfg.n_list, cfg.R, cfg.t_list, seed=cfg.seed,
                            boot=cfg.boot, alpha=cfg.alpha, jobs=cfg.jobs)
    for j, t in enumerate(rep.t_list):
        print(f"t={t}")
        for q, name in enumerate(rep.names):
            print(f"  {name:>10s} " + " ".join(f"{rep.ks[i, j, q]:.3f}" for i in range(len(rep.n_list))))
    print(f"KS radius {rep.ks_radius:.3f}; {rep.tests} trend tests; failures: {rep.failures or 'none'}")
    with open(cfg.out, "w") as f:
        json.dump({"config": asdict(cfg), "report": rep.to_dict()}, f, indent=2)


if __name__ == "__main__":
    main()
