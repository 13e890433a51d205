"""Experiment orchestration: task fan-out, output files and the run manifest."""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .auxiliary import decompose, field_diff_l2_sq, markovize, reconstruction_error, time_change
from .config import ExperimentConfig
from .engine import simulate_path
from .errors import SeedMismatch
from .io import (
    DECOMP_SCHEMA,
    read_book,
    sha256_file,
    write_book,
    write_limit_csv,
    write_limit_nodes,
    write_path_csv,
    write_rows,
)
from .limit import LimitGrid, solve_limit
from .model import SIDES
from .seeding import task_seed
from .stats import convergence_sweep, default_test_kernels

MODES = ("simulate", "decompose", "limit", "sweep")


@dataclass
class RunManifest:
    mode: str
    config_hash: str
    version: str
    master_seed: int
    started: float
    status: str = "incomplete"
    finished: float | None = None
    tasks: list = field(default_factory=list)  # {"task", "n", "replication", "seed"}
    files: dict = field(default_factory=dict)  # relative path -> sha256
    flags: list = field(default_factory=list)  # e.g. paths with moment-clamp violations
    verdict: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, out: Path) -> None:
        tmp = out / "manifest.json.tmp"
        tmp.write_text(self.to_json())
        os.replace(tmp, out / "manifest.json")

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _simulate_task(args):
    cfg, n, r, seed, out = args
    rec = simulate_path(cfg.model, n, seed, cfg.run.T, cfg.run.snapshots, min_active=cfg.run.min_active)
    files = []
    stem = f"path_n{n}_r{r}"
    if "csv" in cfg.output.formats:
        write_path_csv(rec, out / f"{stem}.csv")
        files.append(f"{stem}.csv")
    if "book" in cfg.output.formats:
        write_book(rec, out / f"{stem}.book", cfg.hash)
        files.append(f"{stem}.book")
    return files, rec.violations


def _decompose_task(args):
    cfg, n, r, seed, out, check = args
    T = cfg.run.T
    rec = simulate_path(cfg.model, n, seed, T, cfg.run.snapshots, min_active=int(n * T), record_active_books=True)
    if check is not None:
        _verify_bundle(rec, check)
    dec = decompose(rec, cfg.model)
    tc = time_change(rec)
    hat = markovize(rec, dec)
    rows = []
    K = min(rec.active.times.size, int(np.floor(n * T + 1e-9)))
    for k in range(0, K + 1):
        t_k = 0.0 if k == 0 else float(rec.active.times[k - 1])
        row = [k / n, t_k]
        for side in SIDES:
            d = dec[side]
            row += [d.l2_sq(1, k=k), d.l2_sq(2, k=k), d.l2_sq(3, k=k), d.sup_norm(3, k=k)]
        row.append(abs(tc.eta(t_k) - t_k))
        rows.append(row)
    recon = reconstruction_error(rec, dec)
    dv = {s: field_diff_l2_sq(rec.snapshot(T).field(s), hat.v(T, s)) for s in SIDES}
    stem = f"decomp_n{n}_r{r}.csv"
    cols = ["u", "tau"] + [f"{s}_{q}" for s in SIDES for q in ("V1_l2sq", "V2_l2sq", "V3_l2sq", "V3_sup")] + ["eta_dev"]
    meta = {"n": n, "seed": seed, "reconstruction_error": f"{recon:.3e}", "sup_eta_dev": f"{tc.sup_deviation(T):.6g}",
            "dv_bid_l2sq": f"{dv['bid']:.6g}", "dv_ask_l2sq": f"{dv['ask']:.6g}"}
    write_rows(out / stem, DECOMP_SCHEMA, meta, cols, rows)
    return [stem], rec.violations


def _verify_bundle(rec, book_path) -> None:
    meta, snaps = read_book(book_path)
    if int(meta["n"]) != rec.n or int(meta["seed"]) != rec.seed:
        raise SeedMismatch(f"bundle {book_path} is for n={meta['n']} seed={meta['seed']}")
    for (t, sides), s in zip(snaps, rec.snapshots):
        for side in SIDES:
            ticks, vals = s.field(side).sparse_items()
            if abs(t - s.t) > 1e-12 or not (np.array_equal(ticks, sides[side][0]) and np.array_equal(vals, sides[side][1])):
                raise SeedMismatch(f"bundle {book_path} disagrees with the replay at t={s.t}")


def _fan_out(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        for t in tasks:
            yield t, fn(t)
        return
    with ProcessPoolExecutor(jobs) as ex:
        for t, res in zip(tasks, ex.map(fn, tasks)):
            yield t, res


def run_experiment(cfg: ExperimentConfig, mode: str, out, *, jobs: int | None = None,
                   inputs: list | None = None) -> RunManifest:
    """Run every task of ``mode`` and write outputs plus ``manifest.json`` under ``out``.

    The manifest is written as incomplete before any task runs and rewritten
    after each finished task, so a killed run leaves a valid partial record.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = (os.cpu_count() or 1) if jobs is None else max(1, int(jobs))
    man = RunManifest(mode, cfg.hash, __version__, cfg.run.seed, time.time())
    (out / "config.json").write_text(json.dumps(cfg.raw, indent=2, sort_keys=True))
    man.files["config.json"] = sha256_file(out / "config.json")
    man.write(out)

    if mode in ("simulate", "decompose"):
        tasks = []
        for n in cfg.run.n_list:
            for r in range(cfg.run.replications):
                seed = task_seed(cfg.run.seed, "simulate", n, r)
                man.tasks.append({"task": mode, "n": n, "replication": r, "seed": str(seed)})
                if mode == "simulate":
                    tasks.append((cfg, n, r, seed, out))
                else:
                    check = None
                    if inputs:
                        check = next((p for p in inputs if Path(p).name == f"path_n{n}_r{r}.book"), None)
                    tasks.append((cfg, n, r, seed, out, check))
        fn = _simulate_task if mode == "simulate" else _decompose_task
        for task, (files, violations) in _fan_out(fn, tasks, jobs):
            for f in files:
                man.files[f] = sha256_file(out / f)
            if violations:
                man.flags.append({"n": task[1], "replication": task[2], "moment_violations": violations})
            man.write(out)

    elif mode == "limit":
        grid = LimitGrid.around(cfg.model, h=cfg.limit.h, margin=cfg.limit.margin)
        seeds = [task_seed(cfg.run.seed, "limit", 0, r) for r in range(cfg.limit.replications)]
        man.tasks += [{"task": "limit", "n": 0, "replication": r, "seed": str(s)} for r, s in enumerate(seeds)]
        series = solve_limit(cfg.model, grid, cfg.limit.dt, cfg.run.T, seeds, _on_dt(cfg.run.snapshots, cfg.limit.dt))
        write_limit_csv(series, out / "limit.csv")
        man.files["limit.csv"] = sha256_file(out / "limit.csv")
        for i, t in enumerate(series.times):
            name = f"limit_nodes_{i:03d}.csv"
            write_limit_nodes(series, i, out / name)
            man.files[name] = sha256_file(out / name)
        crossed = int(np.sum(~np.isnan(series.crossing)))
        if crossed:
            man.flags.append({"limit_paths_crossed": crossed})

    else:
        kernels = list(cfg.sweep.test_kernels) if cfg.sweep.test_kernels else default_test_kernels()
        snaps = [t for t in cfg.run.snapshots if t > 0]
        grid = LimitGrid.around(cfg.model, h=cfg.limit.h, margin=cfg.limit.margin)
        for n in cfg.run.n_list:
            man.tasks += [{"task": "sweep", "n": n, "replication": r, "seed": str(task_seed(cfg.run.seed, "sweep", n, r))}
                          for r in range(cfg.run.replications)]
        rep = convergence_sweep(cfg.model, cfg.run.n_list, cfg.run.replications, snaps, kernels,
                                seed=cfg.run.seed, R_limit=cfg.limit.replications, grid=grid, dt=cfg.limit.dt,
                                boot=cfg.sweep.bootstrap, alpha=cfg.sweep.alpha, jobs=jobs)
        (out / "report.json").write_text(json.dumps(rep.to_dict(), indent=2))
        rows = []
        for i, n in enumerate(rep.n_list):
            for j, t in enumerate(rep.t_list):
                for q, name in enumerate(rep.names):
                    rows.append([n, t, name, float(rep.ks[i, j, q]), float(rep.means[i, j, q]), float(rep.variances[i, j, q])])
        write_rows(out / "ks.csv", "lobsim.sweep/1", {"R": rep.R, "R_limit": rep.R_limit},
                   ["n", "t", "quantity", "ks", "mean", "var"], rows)
        for f in ("report.json", "ks.csv"):
            man.files[f] = sha256_file(out / f)
        man.verdict = {"passed": rep.passed, "failures": [list(map(str, f)) for f in rep.failures],
                       "tests": rep.tests}

    man.status = "complete"
    man.finished = time.time()
    man.write(out)
    return man


def _on_dt(snaps, dt):
    """Snap requested times to the solver's step grid."""
    return sorted({round(t / dt) * dt for t in snaps})
