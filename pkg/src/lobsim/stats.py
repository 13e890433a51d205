"""Analytic oracles and the machinery for distributional convergence checks."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .engine import simulate_path
from .errors import EmptySample
from .grid import kernel_weights
from .limit import LimitGrid, solve_limit
from .model import SIDES, Kernel, ModelSpec, derive_scaling
from .seeding import task_seed

# ---------------------------------------------------------------------------
# negative binomial oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NBOracle:
    """Law of N2(T_alpha): arrivals of a rate-lam2 clock before the alpha-th tick of a rate-lam1 clock."""

    alpha: int
    lam1: float
    lam2: float

    def __post_init__(self):
        if self.alpha < 1 or self.lam1 <= 0 or self.lam2 <= 0:
            raise ValueError("NB oracle needs alpha >= 1 and positive rates")

    @property
    def p(self) -> float:
        return self.lam2 / (self.lam1 + self.lam2)

    def logpmf(self, l):
        l = np.asarray(l, dtype=float)
        a, p = self.alpha, self.p
        logc = special.gammaln(l + a) - special.gammaln(a) - special.gammaln(l + 1)
        return logc + l * math.log(p) + a * math.log1p(-p)

    def pmf(self, l):
        return np.exp(self.logpmf(l))

    def factorial_moments(self, k_max: int = 4) -> np.ndarray:
        """E[N(N-1)...(N-k+1)] = alpha (alpha+1) ... (alpha+k-1) (lam2/lam1)^k for k = 1..k_max."""
        r = self.lam2 / self.lam1
        return np.array([special.poch(self.alpha, k) * r**k for k in range(1, k_max + 1)])

    def tail_bound(self, L: int) -> float:
        """P(N > L) (regularised incomplete beta)."""
        return float(special.betainc(L + 1, self.alpha, self.p))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Two-clock simulation: T_alpha as a sum of exponential gaps, then the lam2 clock's count on [0, T_alpha]."""
        t_alpha = rng.exponential(1.0 / self.lam1, (size, self.alpha)).sum(axis=1)
        return rng.poisson(self.lam2 * t_alpha)


def count_before_kth(alpha: int, lam1: float, lam2: float, size: int, rng: np.random.Generator,
                     chunk: int = 4096) -> np.ndarray:
    """Brute force: build both clocks from exponential gaps and count rate-lam2 arrivals before T_alpha."""
    out = np.empty(size, dtype=np.int64)
    for lo in range(0, size, chunk):
        m = min(chunk, size - lo)
        t_alpha = np.cumsum(rng.exponential(1.0 / lam1, (m, alpha)), axis=1)[:, -1]
        counts = np.zeros(m, dtype=np.int64)
        start = np.zeros(m)
        live = np.arange(m)
        width = int(lam2 / lam1 * alpha * 2 + 16)
        while live.size:
            times = start[live, None] + np.cumsum(rng.exponential(1.0 / lam2, (live.size, width)), axis=1)
            counts[live] += np.sum(times <= t_alpha[live, None], axis=1)
            done = times[:, -1] > t_alpha[live]
            start[live] = times[:, -1]
            live = live[~done]
        out[lo : lo + m] = counts
    return out


def nb_pmf_and_moments(oracle: NBOracle):
    return oracle.pmf, oracle.factorial_moments(4)


def falling_factorial(x: np.ndarray, k: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    for j in range(k):
        out = out * (x - j)
    return out


def chi2_against(pmf, sample: np.ndarray, min_expected: float = 5.0):
    """Pearson chi-square of integer ``sample`` against ``pmf`` on 0, 1, ..., pooling sparse cells.

    Returns (statistic, p-value, number of cells).
    """
    sample = np.asarray(sample, dtype=np.int64)
    N = sample.size
    top = int(sample.max())
    ls = np.arange(top + 1)
    expected = N * np.asarray(pmf(ls))
    observed = np.bincount(sample, minlength=top + 1).astype(float)
    # pool from the left until each cell has enough mass; the last cell takes the tail
    edges, acc = [], 0.0
    for i, e in enumerate(expected):
        acc += e
        if acc >= min_expected:
            edges.append(i + 1)
            acc = 0.0
    if not edges:
        return 0.0, 1.0, 1
    edges[-1] = top + 1
    starts = np.r_[0, edges[:-1]]
    obs = np.add.reduceat(observed, starts)
    exp = np.add.reduceat(expected, starts)
    exp[-1] += N - expected.sum()  # tail beyond the sample maximum
    chi2 = float(np.sum((obs - exp) ** 2 / exp))
    dof = obs.size - 1
    return chi2, float(stats.chi2.sf(chi2, dof)), obs.size


# ---------------------------------------------------------------------------
# gap between the last slow arrival and t
# ---------------------------------------------------------------------------


def beta_gap_moments(lam1: float, lam2: float, t: float) -> tuple[float, float]:
    """(E[G], E[G(G-1)]) for G = N2(t) - N2(T_{N1(t)}).

    G counts fast-clock arrivals since the last slow-clock arrival (or since 0).
    E[G] = (lam2/lam1)(1 - e^{-lam1 t}) and
    E[G(G-1)] = 2 (lam2/lam1)^2 (1 - (1 + lam1 t) e^{-lam1 t}).
    """
    r = lam2 / lam1
    x = lam1 * t
    return r * -math.expm1(-x), 2.0 * r * r * (-math.expm1(-x) - x * math.exp(-x))


def simulate_beta_gap(lam1: float, lam2: float, t: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """G by brute force: both clocks from exponential gaps."""
    def arrivals(rate):
        m = int(rate * t + 10 * math.sqrt(rate * t + 1) + 10)
        times = np.cumsum(rng.exponential(1.0 / rate, (size, m)), axis=1)
        if np.any(times[:, -1] <= t):
            raise RuntimeError("gap buffer too short")
        return times

    slow = arrivals(lam1)
    last = np.max(np.where(slow <= t, slow, 0.0), axis=1)
    fast = arrivals(lam2)
    return np.sum((fast > last[:, None]) & (fast <= t), axis=1)


# ---------------------------------------------------------------------------
# samples and KS
# ---------------------------------------------------------------------------


def pairing(fld, kernel: Kernel) -> float:
    """<v, phi> in absolute coordinates by the midpoint rule on the field's grid."""
    k0, w = kernel_weights(kernel, fld.dx)
    return fld.pair(w, k0)


def functional_sample(paths, t: float, kernel: Kernel, side: str) -> np.ndarray:
    """Sorted per-path values of <v^n(t), phi>."""
    return np.sort(np.array([pairing(p.snapshot(t).field(side), kernel) for p in paths]))


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b| (exact)."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptySample("KS distance needs two non-empty samples")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_critical(alpha: float, n: int, m: int) -> float:
    """Asymptotic two-sample KS critical value c(alpha) sqrt((n + m) / (n m))."""
    return math.sqrt(-0.5 * math.log(alpha / 2.0)) * math.sqrt((n + m) / (n * m))


def _ks_sorted(a: np.ndarray, b: np.ndarray) -> float:
    pts = np.concatenate([a, b])
    return float(np.max(np.abs(np.searchsorted(a, pts, side="right") / a.size
                               - np.searchsorted(b, pts, side="right") / b.size)))


# ---------------------------------------------------------------------------
# convergence sweep
# ---------------------------------------------------------------------------


def default_test_kernels() -> list[Kernel]:
    """Three Gaussian bumps at distinct centres and widths (absolute coordinates)."""
    return [
        Kernel("bump", center=-0.5, width=0.3, radius=0.9),
        Kernel("bump", center=0.6, width=0.25, radius=0.75),
        Kernel("bump", center=1.6, width=0.4, radius=1.0),
    ]


def quantity_names(n_kernels: int) -> list[str]:
    names = ["B", "A"]
    for s in SIDES:
        names += [f"{s}_phi{k + 1}" for k in range(n_kernels)]
    return names


def _discrete_task(args):
    model, n, seeds, T, t_list, kernels = args
    out = np.empty((len(seeds), len(t_list), 2 + 2 * len(kernels)))
    for r, seed in enumerate(seeds):
        p = simulate_path(model, n, seed, T, t_list)
        for j, t in enumerate(t_list):
            s = p.snapshot(t)
            row = [s.B, s.A] + [pairing(s.field(side), k) for side in SIDES for k in kernels]
            out[r, j] = row
    return out


def discrete_quantities(model, n, seeds, T, t_list, kernels, jobs: int = 1) -> np.ndarray:
    """(R, len(t_list), Q) array of B, A and <v_side, phi_k> at each time."""
    seeds = list(seeds)
    if jobs <= 1 or len(seeds) < 2 * jobs:
        return _discrete_task((model, n, seeds, T, t_list, kernels))
    chunks = [seeds[i::jobs] for i in range(jobs)]
    with ProcessPoolExecutor(jobs) as ex:
        parts = list(ex.map(_discrete_task, [(model, n, c, T, t_list, kernels) for c in chunks]))
    out = np.empty((len(seeds), len(t_list), parts[0].shape[-1]))
    for i, part in enumerate(parts):
        out[i::jobs] = part
    return out


def limit_quantities(model, seeds, T, t_list, kernels, grid: LimitGrid, dt: float) -> np.ndarray:
    series = solve_limit(model, grid, dt, T, seeds=list(seeds), snapshot_times=t_list)
    R = len(series.seeds)
    out = np.empty((R, len(t_list), 2 + 2 * len(kernels)))
    for j, t in enumerate(t_list):
        i = series.at(t)
        cols = [series.B[i], series.A[i]] + [series.pairing(t, k, side) for side in SIDES for k in kernels]
        out[:, j, :] = np.stack(cols, axis=-1)
    return out


@dataclass
class ConvergenceReport:
    n_list: list
    t_list: list
    names: list
    R: int
    R_limit: int
    ks: np.ndarray  # (len(n_list), len(t_list), Q)
    means: np.ndarray  # (len(n_list) + 1, len(t_list), Q); last row is the limit
    variances: np.ndarray
    ks_radius: float  # 1% KS critical value for the sample sizes used
    diff_lower: np.ndarray  # (len(n_list) - 1, len(t_list), Q) bootstrap lower bounds of KS_{k+1} - KS_k
    alpha: float
    boot: int
    samples: dict = field(default_factory=dict, repr=False)

    @property
    def tests(self) -> int:
        return int(self.diff_lower.size)

    @property
    def failures(self) -> list[tuple]:
        bad = np.argwhere(self.diff_lower > 0)
        return [(self.n_list[i], self.n_list[i + 1], self.t_list[j], self.names[q]) for i, j, q in bad]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "n_list": list(self.n_list), "t_list": list(self.t_list), "quantities": list(self.names),
            "R": self.R, "R_limit": self.R_limit, "alpha": self.alpha, "bootstrap": self.boot,
            "ks_radius": self.ks_radius,
            "ks": self.ks.tolist(), "mean": self.means.tolist(), "var": self.variances.tolist(),
            "diff_lower": self.diff_lower.tolist(),
            "failures": [list(f) for f in self.failures], "passed": self.passed,
        }


def paired_bootstrap(disc: list[np.ndarray], lim: np.ndarray, boot: int, q: float, rng) -> np.ndarray:
    """Lower q-quantiles of KS_{k+1} - KS_k under joint resampling.

    ``disc[k]`` and ``lim`` are 1-d samples; each bootstrap replicate resamples
    every discrete sample and the shared limit sample once.
    """
    K = len(disc)
    draws = np.empty((boot, K))
    for b in range(boot):
        L = np.sort(lim[rng.integers(0, lim.size, lim.size)])
        for k, d in enumerate(disc):
            draws[b, k] = _ks_sorted(np.sort(d[rng.integers(0, d.size, d.size)]), L)
    diffs = draws[:, 1:] - draws[:, :-1]
    return np.quantile(diffs, q, axis=0)


def convergence_sweep(
    model: ModelSpec,
    n_list,
    R: int,
    t_list,
    kernels=None,
    *,
    seed: int = 0,
    R_limit: int | None = None,
    grid: LimitGrid | None = None,
    dt: float | None = None,
    boot: int = 1000,
    alpha: float = 0.01,
    jobs: int | None = None,
    discrete: dict | None = None,
    limit: np.ndarray | None = None,
) -> ConvergenceReport:
    """KS distances between discrete and limit samples per (n, t, quantity) with a trend verdict.

    A consecutive pair (n_k, n_{k+1}) fails when the bootstrap lower
    alpha/m-quantile of KS_{k+1} - KS_k is positive, m being the number of
    (pair, t, quantity) tests (Bonferroni).  ``discrete`` / ``limit`` accept
    precomputed quantity arrays.
    """
    kernels = default_test_kernels() if kernels is None else list(kernels)
    n_list, t_list = [int(n) for n in n_list], [float(t) for t in t_list]
    T = max(t_list)
    R_limit = R if R_limit is None else R_limit
    jobs = (os.cpu_count() or 1) if jobs is None else jobs
    names = quantity_names(len(kernels))
    if discrete is None:
        discrete = {
            n: discrete_quantities(model, n, [task_seed(seed, "sweep", n, r) for r in range(R)], T, t_list, kernels, jobs)
            for n in n_list
        }
    if limit is None:
        grid = LimitGrid.around(model) if grid is None else grid
        dt = T / 2048 if dt is None else dt
        limit = limit_quantities(model, [task_seed(seed, "limit", 0, r) for r in range(R_limit)], T, t_list, kernels, grid, dt)

    Q = len(names)
    ks = np.empty((len(n_list), len(t_list), Q))
    means = np.empty((len(n_list) + 1, len(t_list), Q))
    var = np.empty_like(means)
    for i, n in enumerate(n_list):
        d = discrete[n]
        means[i], var[i] = d.mean(axis=0), d.var(axis=0, ddof=1)
        for j in range(len(t_list)):
            for q in range(Q):
                ks[i, j, q] = ks_distance(d[:, j, q], limit[:, j, q])
    means[-1], var[-1] = limit.mean(axis=0), limit.var(axis=0, ddof=1)

    m = max(1, (len(n_list) - 1) * len(t_list) * Q)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(7,)))
    lower = np.zeros((max(len(n_list) - 1, 0), len(t_list), Q))
    if len(n_list) > 1:
        for j in range(len(t_list)):
            for q in range(Q):
                lower[:, j, q] = paired_bootstrap([discrete[n][:, j, q] for n in n_list], limit[:, j, q], boot, alpha / m, rng)
    return ConvergenceReport(
        n_list=n_list, t_list=t_list, names=names, R=R, R_limit=int(limit.shape[0]), ks=ks, means=means,
        variances=var, ks_radius=ks_critical(alpha, R, int(limit.shape[0])), diff_lower=lower, alpha=alpha,
        boot=boot, samples={"discrete": discrete, "limit": limit},
    )


def noise_variance_oracle(model: ModelSpec, kernel: Kernel, side: str, t: float, P: float | None = None) -> float:
    """2 t E[w^N]^2 (int f^N(x - P) phi(x) dx)^2 for a frozen price P."""
    from scipy import integrate

    ic = model.initial
    P = (ic.B0 if side == "bid" else ic.A0) if P is None else P
    ev = model.flow.side(side).noise
    lo, hi = kernel.support
    c = integrate.quad(lambda x: float(ev.location.pdf(x - P)) * float(kernel(x)), lo, hi, limit=200, epsabs=1e-13)[0]
    return 2.0 * t * ev.size.mean**2 * c * c


def poisson_count_band(rate: float, T: float, k: float = 4.0) -> tuple[float, float]:
    mean = rate * T
    return mean - k * math.sqrt(mean), mean + k * math.sqrt(mean)


def expected_event_count(n: int, T: float = 1.0) -> float:
    p = derive_scaling(n)
    return (p.mu + 2 * p.lam) * T
