import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import ZERO, with_sizes
from lobsim.engine import simulate_path
from lobsim.errors import EmptySample, SnapshotMissing
from lobsim.model import ConstantMoves, ConstantProfile, FrozenPrice, InitialCondition, Kernel, default_model
from lobsim.seeding import task_seed
from lobsim.stats import (
    NBOracle,
    beta_gap_moments,
    chi2_against,
    convergence_sweep,
    default_test_kernels,
    discrete_quantities,
    count_before_kth,
    falling_factorial,
    functional_sample,
    ks_critical,
    ks_distance,
    poisson_count_band,
    quantity_names,
    simulate_beta_gap,
)


def test_nb_examples():
    geo = NBOracle(1, 1.0, 1.0)
    assert geo.pmf(0) == pytest.approx(0.5) and geo.pmf(1) == pytest.approx(0.25)
    assert NBOracle(1, 10.0, 100.0).factorial_moments(1)[0] == pytest.approx(10.0)
    for o in (geo, NBOracle(1, 10.0, 100.0), NBOracle(3, 64.0, 4096.0)):
        assert o.pmf(np.arange(1_000_001)).sum() == pytest.approx(1.0, abs=1e-10)


@given(st.integers(1, 6), st.floats(0.5, 50), st.floats(0.5, 500))
def test_nb_moments_match_pmf(alpha, l1, l2):
    o = NBOracle(alpha, l1, l2)
    top = int(o.factorial_moments(1)[0] * 40 + 200)
    while o.tail_bound(top) > 1e-14:
        top *= 2
    ls = np.arange(top + 1)
    pm = o.pmf(ls)
    for k, m in enumerate(o.factorial_moments(3), start=1):
        assert np.dot(pm, falling_factorial(ls, k)) == pytest.approx(m, rel=1e-8)
    assert o.tail_bound(10) == pytest.approx(1.0 - pm[:11].sum(), abs=1e-12)


def test_nb_rejects_bad_parameters():
    with pytest.raises(ValueError):
        NBOracle(0, 1.0, 1.0)


def test_two_clock_simulation_matches_nb():
    rng = np.random.default_rng(3)
    o = NBOracle(2, 5.0, 40.0)
    brute = count_before_kth(2, 5.0, 40.0, 20_000, rng)
    assert chi2_against(o.pmf, brute)[1] > 1e-3
    assert chi2_against(o.pmf, o.sample(rng, 20_000))[1] > 1e-3


def test_chi2_flags_wrong_law():
    rng = np.random.default_rng(0)
    x = rng.poisson(8.0, 20_000)  # same mean as NB(1, 1, 8) but far lighter tail
    assert chi2_against(NBOracle(1, 1.0, 8.0).pmf, x)[1] < 1e-6


def test_beta_gap_formulas():
    m1, m2 = beta_gap_moments(10.0, 100.0, 1.0)
    assert m1 == pytest.approx(10 * (1 - math.exp(-10)), rel=1e-15)
    assert m1 == pytest.approx(9.99955, abs=1e-5)
    assert m2 == pytest.approx(2 * 100 * (1 - 11 * math.exp(-10)), rel=1e-14)
    s1, s2 = beta_gap_moments(10.0, 100.0, 1e-9)
    assert s1 < 1e-6 and s2 < 1e-12


def test_beta_gap_second_moment_factor():
    """Simulation pins the factorial second moment to the factor 2 and rejects 4."""
    rng = np.random.default_rng(11)
    l1, l2, t = 10.0, 100.0, 1.0
    g = simulate_beta_gap(l1, l2, t, 50_000, rng).astype(float)
    f2 = g * (g - 1)
    se = f2.std(ddof=1) / math.sqrt(g.size)
    _, m2 = beta_gap_moments(l1, l2, t)
    assert abs(f2.mean() - m2) <= 3 * se
    assert abs(f2.mean() - 2 * m2) > 20 * se


@settings(max_examples=25, deadline=None)
@given(st.floats(1, 20), st.floats(5, 200), st.floats(0.05, 2))
def test_beta_gap_first_moment_property(l1, l2, t):
    rng = np.random.default_rng(int(l1 * 1000 + l2 * 10 + t * 100))
    g = simulate_beta_gap(l1, l2, t, 4000, rng)
    m1, _ = beta_gap_moments(l1, l2, t)
    assert abs(g.mean() - m1) <= 4.5 * g.std(ddof=1) / math.sqrt(g.size) + 1e-12


def test_ks_examples():
    a = np.array([0.1, 0.5, 2.0])
    assert ks_distance(a, a) == 0.0
    assert ks_distance(a, a + 10) == 1.0
    with pytest.raises(EmptySample):
        ks_distance([], a)
    assert ks_critical(0.01, 1000, 1000) == pytest.approx(1.628 * math.sqrt(2 / 1000), rel=1e-3)


@pytest.mark.filterwarnings("ignore:divide by zero:RuntimeWarning")  # scipy p-value at tiny n; only the statistic is used
@settings(max_examples=60)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=40), st.lists(st.floats(-5, 5), min_size=1, max_size=40))
def test_ks_matches_scipy(a, b):
    assert ks_distance(a, b) == pytest.approx(stats.ks_2samp(a, b, method="asymp").statistic, abs=1e-12)
    assert 0.0 <= ks_distance(a, b) <= 1.0


def test_ks_null_calibration():
    rng = np.random.default_rng(5)
    crit = ks_critical(0.01, 1000, 1000)
    below = [ks_distance(rng.standard_normal(1000), rng.standard_normal(1000)) < crit for _ in range(200)]
    assert np.mean(below) >= 0.95


def test_functional_sample_trivial_cases():
    m = with_sizes(default_model(FrozenPrice()), cancel=ZERO, place=ZERO, noise=ZERO)
    m = replace(m, initial=InitialCondition(0.0, 1.0, ConstantProfile(0.0), ConstantProfile(0.0)))
    paths = [simulate_path(m, 16, s, 1.0) for s in range(5)]
    k = Kernel("bump", center=0.0, width=0.3, radius=0.9)
    assert functional_sample(paths, 1.0, k, "bid").tolist() == [0.0] * 5
    busy = [simulate_path(default_model(), 16, s, 1.0) for s in range(5)]
    assert functional_sample(busy, 1.0, Kernel("zero"), "ask").tolist() == [0.0] * 5
    s = functional_sample(busy, 1.0, k, "bid")
    assert np.all(np.diff(s) >= 0)
    with pytest.raises(SnapshotMissing):
        functional_sample(busy, 0.5, k, "bid")


def test_sweep_split_sample_self_consistency():
    """Two halves of one discrete sample stand in for discrete and limit; no KS may look significant."""
    m = default_model()
    q = discrete_quantities(m, 16, [task_seed(2, "split", 16, r) for r in range(400)], 1.0, [0.5, 1.0],
                            default_test_kernels())
    rep = convergence_sweep(m, [16], 200, [0.5, 1.0], discrete={16: q[:200]}, limit=q[200:], boot=10)
    Q = len(quantity_names(3))
    assert rep.ks.shape == (1, 2, Q) and rep.tests == 0 and rep.passed
    assert np.all(rep.ks <= ks_critical(0.01 / (2 * Q), 200, 200))


def test_price_marginal_approaches_gaussian():
    b, s = 0.3, 0.4
    m = with_sizes(default_model(ConstantMoves(b, b, s, s)), cancel=ZERO, place=ZERO, noise=ZERO)
    limit = stats.norm(loc=1.25 + b, scale=s)
    ks = []
    for n in (4, 16, 64):
        A = np.array([simulate_path(m, n, 1000 * n + r, 1.0).snapshot(1.0).A for r in range(400)])
        ks.append(stats.kstest(A, limit.cdf).statistic)
    assert ks[0] > ks[1] > ks[2]


def test_poisson_band():
    lo, hi = poisson_count_band(100.0, 1.0, 3.0)
    assert (lo, hi) == (70.0, 130.0)
