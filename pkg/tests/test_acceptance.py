"""Acceptance suite: ten end-to-end checks at their stated tolerances.

Run alone with ``pytest tests/test_acceptance.py -v -s``; a PASS/FAIL line per
criterion is printed and repeated in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from conftest import ZERO, with_sizes
from lobsim.auxiliary import barred, decompose, field_diff_l2_sq, markovize, reconstruction_error, time_change
from lobsim.engine import simulate_path
from lobsim.limit import LimitGrid, brownian_increments, coarsen, frozen_ode_solution, solve_limit
from lobsim.model import SIDES, FrozenPrice, default_kernel, default_model, imbalance_model
from lobsim.seeding import task_seed
from lobsim.stats import (
    NBOracle,
    beta_gap_moments,
    chi2_against,
    convergence_sweep,
    count_before_kth,
    falling_factorial,
    noise_variance_oracle,
    pairing,
    simulate_beta_gap,
)

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

N_MOMENT = (16, 64, 256)
T_MOMENT = (0.25, 0.5, 1.0)
R_MOMENT = 200
_moment_cache = {}


def _moment_runs():
    """One batch of paths shared by criteria 5, 6 and 10 (R=200 per n)."""
    if _moment_cache:
        return _moment_cache
    model = default_model()
    for n in N_MOMENT:
        V = np.empty((R_MOMENT, 2, 2, len(T_MOMENT)))  # replication, side, V1/V2, time
        dv = np.empty((R_MOMENT, 2))
        eta = np.empty(R_MOMENT)
        for r in range(R_MOMENT):
            p = simulate_path(model, n, task_seed(5, "moment-bound", n, r), 1.0, min_active=n, record_active_books=True)
            dec = decompose(p, model)
            bar, hat = barred(p, dec), markovize(p, dec)
            for si, side in enumerate(SIDES):
                for i in (1, 2):
                    V[r, si, i - 1] = [bar.V_l2_sq(i, u, side) for u in T_MOMENT]
                dv[r, si] = field_diff_l2_sq(p.snapshot(1.0).field(side), hat.v(1.0, side))
            eta[r] = bar.tc.sup_deviation(1.0)
        _moment_cache[n] = {"V": V, "dv": dv, "eta": eta}
    return _moment_cache


def test_c1_negative_binomial(record):
    start = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(1, spawn_key=(1,)))
    ok, notes = True, []
    for alpha, l1, l2 in ((1, 16.0, 256.0), (3, 64.0, 4096.0)):
        orc = NBOracle(alpha, l1, l2)
        x = count_before_kth(alpha, l1, l2, 100_000, rng)
        _, pval, _ = chi2_against(orc.pmf, x)
        z = []
        for k, m in enumerate(orc.factorial_moments(4), start=1):
            ff = falling_factorial(x, k)
            z.append((ff.mean() - m) / (ff.std(ddof=1) / math.sqrt(x.size)))
        ok &= pval > 0.01 and max(abs(v) for v in z) <= 3.0
        notes.append(f"({alpha},{l1:g},{l2:g}) p={pval:.3f} max|z|={max(map(abs, z)):.2f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 10
    assert record(1, ok, "; ".join(notes) + f"; {elapsed:.1f}s")


def test_c2_beta_gap(record):
    start = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(2, spawn_key=(1,)))
    l1, l2, t = 10.0, 100.0, 1.0
    g = simulate_beta_gap(l1, l2, t, 100_000, rng).astype(float)
    m1, m2 = beta_gap_moments(l1, l2, t)
    f2 = g * (g - 1)
    z1 = (g.mean() - m1) / (g.std(ddof=1) / math.sqrt(g.size))
    z2 = (f2.mean() - m2) / (f2.std(ddof=1) / math.sqrt(g.size))
    elapsed = time.perf_counter() - start
    ok = abs(z1) <= 3 and abs(z2) <= 3 and elapsed < 10
    assert record(2, ok, f"E[G] {g.mean():.3f} vs {m1:.3f} (z={z1:.2f}); E[G(G-1)] {f2.mean():.2f} vs {m2:.2f} "
                         f"(z={z2:.2f}); {elapsed:.1f}s")


def test_c3_reconstruction(record):
    start = time.perf_counter()
    model = default_model()
    worst = 0.0
    for r in range(20):
        p = simulate_path(model, 16, task_seed(3, "reconstruction", 16, r), 1.0, record_active_books=True)
        worst = max(worst, reconstruction_error(p, decompose(p, model)))
    elapsed = time.perf_counter() - start
    assert record(3, worst <= 1e-9 and elapsed < 30, f"max relative error {worst:.2e} over 20 paths; {elapsed:.1f}s")


def test_c4_noise_martingale(record):
    model = default_model()
    kernel = default_kernel()
    inc, lagged = [], []
    r = 0
    while len(inc) < 10_000:
        p = simulate_path(model, 64, task_seed(4, "martingale", 64, r), 1.0)
        dec = decompose(p, model)
        for side in SIDES:
            d = dec[side].increments(3, kernel)
            past = np.concatenate([[0.0], np.cumsum(d)[:-1]])
            inc.extend(d.tolist())
            lagged.extend((d * np.sign(past)).tolist())
        r += 1
    inc, lagged = np.asarray(inc), np.asarray(lagged)
    z0 = inc.mean() / (inc.std(ddof=1) / math.sqrt(inc.size))
    z1 = lagged.mean() / (lagged.std(ddof=1) / math.sqrt(lagged.size))
    ok = abs(z0) <= 3 and abs(z1) <= 3
    assert record(4, ok, f"{inc.size} increments from {r} paths: z(mean)={z0:.2f}, z(mean x past sign)={z1:.2f}")


def test_c5_moment_bound_scaling(record):
    start = time.perf_counter()
    runs = _moment_runs()
    ok, notes = True, []
    for si, side in enumerate(SIDES):
        for i in (1, 2):
            X, y = [], []
            for n in N_MOMENT:
                means = runs[n]["V"][:, si, i - 1].mean(axis=0)
                for t, m in zip(T_MOMENT, means):
                    X.append([t * t, t / n])
                    y.append(m)
            X, y = np.asarray(X), np.asarray(y)
            coef, *_ = np.linalg.lstsq(X, y, rcond=None)
            res = y - X @ coef
            r2 = 1.0 - res @ res / np.sum((y - y.mean()) ** 2)
            ok &= bool(np.all(coef >= 0)) and r2 >= 0.9
            notes.append(f"{side} V{i}: coef=({coef[0]:.3g},{coef[1]:.3g}) R2={r2:.4f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 300
    assert record(5, ok, "; ".join(notes) + f"; {elapsed:.0f}s")


def test_c6_markov_gap_shrinks(record):
    runs = _moment_runs()
    ok, notes = True, []
    for si, side in enumerate(SIDES):
        e = [runs[n]["dv"][:, si].mean() for n in N_MOMENT]
        ratios = [e[k] / e[k + 1] for k in range(len(e) - 1)]
        ok &= all(2.5 <= q <= 6 for q in ratios)
        notes.append(f"{side}: " + ", ".join(f"{v:.3g}" for v in e) + " ratios " + ", ".join(f"{q:.2f}" for q in ratios))
    assert record(6, ok, "; ".join(notes))


def test_c7_limit_solver_exactness(record):
    grid_frozen = default_model(FrozenPrice())
    quiet = with_sizes(grid_frozen, noise=ZERO)
    grid = LimitGrid.around(quiet)
    dt, T = 1.0 / 2048, 1.0
    snaps = [k / 16 for k in range(1, 17)]
    sol = solve_limit(quiet, grid, dt, T, seeds=0, snapshot_times=snaps)
    err = 0.0
    for t in snaps:
        i = sol.at(t)
        for side in SIDES:
            exact = frozen_ode_solution(quiet, side, grid.nodes, t)
            err = max(err, float(np.max(np.abs(sol.volume(side)[i, 0] - exact))))

    def order(model, R):
        fine = 4096
        incr = np.stack([brownian_increments(task_seed(7, "strong-order", 0, r), fine, T / fine) for r in range(R)])
        ref = solve_limit(model, grid, T / fine, T, seeds=tuple(range(R)), increments=incr)
        steps = [64, 128, 256, 512]
        errs = []
        for s in steps:
            sol = solve_limit(model, grid, T / s, T, seeds=tuple(range(R)), increments=coarsen(incr, fine // s))
            d = np.maximum(np.abs(sol.vb[-1] - ref.vb[-1]).max(axis=-1), np.abs(sol.va[-1] - ref.va[-1]).max(axis=-1))
            errs.append(d.mean())
        return -np.polyfit(np.log(steps), np.log(errs), 1)[0]

    p_quiet = order(quiet, 1)
    p_noisy = order(grid_frozen, 20)
    ok = err <= 5 * dt and p_quiet >= 0.8 and p_noisy >= 0.8
    assert record(7, ok, f"sup error {err:.2e} (bound {5 * dt:.2e}); strong order {p_quiet:.2f} noise-free, "
                         f"{p_noisy:.2f} with noise")


def test_c8_fluctuation_variance(record):
    model = with_sizes(default_model(FrozenPrice()), cancel=ZERO, place=ZERO)
    kernel = default_kernel(center=0.1)
    n, R = 256, 1000
    y = np.array([pairing(simulate_path(model, n, task_seed(8, "fluctuation", n, r), 1.0).snapshot(1.0).bid, kernel)
                  for r in range(R)])
    c = y - y.mean()
    s2 = c @ c / (R - 1)
    m4 = np.mean(c**4)
    se = math.sqrt(max(m4 - s2 * s2 * (R - 3) / (R - 1), 0.0) / R)
    target = noise_variance_oracle(model, kernel, "bid", 1.0)
    z = (s2 - target) / se
    assert record(8, abs(z) <= 3, f"Var {s2:.5g} vs oracle {target:.5g} (se {se:.2g}, z={z:.2f})")


def test_c9_weak_convergence(record):
    start = time.perf_counter()
    rep = convergence_sweep(imbalance_model(), [16, 32, 64, 128], 500, [0.5, 1.0], seed=9, boot=1000, alpha=0.01)
    elapsed = time.perf_counter() - start
    j = rep.t_list.index(1.0)
    table = " | ".join(f"{name}: " + ",".join(f"{rep.ks[i, j, q]:.3f}" for i in range(len(rep.n_list)))
                       for q, name in enumerate(rep.names))
    fails = ", ".join(f"{a}->{b} t={t} {q}" for a, b, t, q in rep.failures) or "none"
    assert record(9, rep.passed and elapsed < 1800,
                  f"{rep.tests} paired tests, failures: {fails}; KS at t=1 over n: {table}; {elapsed:.0f}s")


def test_c10_time_change(record):
    med = [float(np.median(_moment_runs()[n]["eta"])) for n in N_MOMENT]
    ok = all(a > b for a, b in zip(med, med[1:]))
    assert record(10, ok, "median sup|eta-u|: " + ", ".join(f"n={n}: {m:.4f}" for n, m in zip(N_MOMENT, med)))
