"""Scaling of the auxiliary processes with n.

Simulates R paths per n, decomposes each one and prints mean squared norms of
V^1, V^2 at t=1, the Markovization gap ||v - v_hat||^2 and the time-change
deviation, with least-squares log-log slopes against n.  Results go to JSON.

    python3 scripts/moment_bounds.py --n 16,64,256 --R 200 --out moments.json
"""
import argparse
import json
from dataclasses import asdict, dataclass

import numpy as np

from lobsim.auxiliary import barred, decompose, field_diff_l2_sq, markovize
from lobsim.engine import simulate_path
from lobsim.model import SIDES, default_model
from lobsim.seeding import task_seed


@dataclass(frozen=True)
class Config:
    n_list: tuple = (16, 64, 256)
    R: int = 200
    seed: int = 5
    T: float = 1.0
    out: str = "moment_bounds.json"


def run(cfg: Config) -> dict:
    model = default_model()
    rows = {}
    for n in cfg.n_list:
        acc = {"V1": [], "V2": [], "dv": [], "eta": []}
        for r in range(cfg.R):
            p = simulate_path(model, n, task_seed(cfg.seed, "moment-bound", n, r), cfg.T,
                              min_active=int(n * cfg.T), record_active_books=True)
            dec = decompose(p, model)
            bar, hat = barred(p, dec), markovize(p, dec)
            for i in (1, 2):
                acc[f"V{i}"].append(sum(bar.V_l2_sq(i, cfg.T, s) for s in SIDES))
            acc["dv"].append(sum(field_diff_l2_sq(p.snapshot(cfg.T).field(s), hat.v(cfg.T, s)) for s in SIDES))
            acc["eta"].append(bar.tc.sup_deviation(cfg.T))
        rows[n] = {k: (float(np.mean(v)), float(np.std(v, ddof=1) / np.sqrt(len(v)))) for k, v in acc.items()}
        print(n, "  ".join(f"{k}={m:.4g}±{s:.2g}" for k, (m, s) in rows[n].items()), flush=True)
    ln = np.log(cfg.n_list)
    slopes = {k: float(np.polyfit(ln, np.log([rows[n][k][0] for n in cfg.n_list]), 1)[0]) for k in rows[cfg.n_list[0]]}
    print("log-log slopes:", {k: round(v, 3) for k, v in slopes.items()})
    return {"config": asdict(cfg), "by_n": {str(n): v for n, v in rows.items()}, "slopes": slopes}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=lambda s: tuple(int(x) for x in s.split(",")), default=Config.n_list)
    ap.add_argument("--R", type=int, default=Config.R)
    ap.add_argument("--seed", type=int, default=Config.seed)
    ap.add_argument("--out", default=Config.out)
    a = ap.parse_args()
    cfg = Config(n_list=a.n, R=a.R, seed=a.seed, out=a.out)
    with open(cfg.out, "w") as f:
        json.dump(run(cfg), f, indent=2)


if __name__ == "__main__":
    main()
