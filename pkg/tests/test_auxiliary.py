import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobsim.auxiliary import (
    TimeChange,
    barred,
    decompose,
    markovize,
    reconstruction_error,
    time_change,
)
from lobsim.engine import EventStream, PassiveMarks, build_event_stream, simulate_path
from lobsim.errors import NotEnoughActiveEvents, SeedMismatch
from lobsim.model import SIDES, default_kernel, default_model, derive_scaling


def marks(times=(), wC=(), wP=(), wN=(), piC=(), piP=(), piN=(), dx=0.1):
    arr = lambda v: np.asarray(v, dtype=float)  # noqa: E731
    pis = [arr(piC), arr(piP), arr(piN)]
    return PassiveMarks(arr(times), arr(wC), arr(wP), arr(wN), *pis,
                        *[np.floor(p / dx).astype(np.int64) for p in pis])


def hand_stream(params, bid=None, ask=None, active=(), T=1.0):
    act = np.asarray(active, dtype=float)
    empty = marks(dx=params.dx)
    signs = np.ones((act.size + 1, 2), dtype=np.int8)
    return EventStream(params, 0, T, max(T, act[-1] if act.size else 0.0), act, np.full(act.size, 0.5), signs,
                       bid or empty, ask or empty)


def test_no_passive_events_gives_zero_fields():
    p = derive_scaling(16, lam=0.0)
    m = default_model()
    rec = simulate_path(m, 16, 1, 1.0, params=p, record_active_books=True)
    dec = decompose(rec, m)
    for side in SIDES:
        for i in (1, 2, 3):
            ticks, vals = dec[side].field(i, t=1.0)
            assert ticks.size == 0
            assert dec[side].l2_sq(i, t=1.0) == 0.0
        lo, hi = rec.snapshots[0].field(side).origin, rec.snapshots[0].field(side).end
        assert np.array_equal(rec.snapshot(1.0).field(side).copy().window(lo, hi),
                              rec.snapshots[0].field(side).copy().window(lo, hi))


def test_single_placement_hand_value():
    p = derive_scaling(100)
    m = default_model()
    stream = hand_stream(p, bid=marks([0.5], [0.0], [1.0], [0.0], [0.0], [0.25], [0.0], dx=p.dx))
    rec = simulate_path(m, 100, 0, 1.0, stream=stream, params=p)
    dec = decompose(rec, m, stream=stream)
    ticks, vals = dec["bid"].field(1, t=1.0)
    assert ticks.tolist() == [rec.bt0 + 2]
    assert vals[0] == pytest.approx(1e-3, rel=1e-12)
    assert not np.any(dec["bid"].field(2, t=1.0)[1])
    assert not np.any(dec["bid"].field(3, t=1.0)[1])
    assert dec["ask"].field(1, t=1.0)[0].size == 0


def test_v2_accumulates_proportions():
    p = derive_scaling(100)
    m = default_model()
    stream = hand_stream(p, bid=marks([0.2, 0.4], [0.5, 0.25], [0, 0], [0, 0], [0.0, 0.0], [0, 0], [0, 0], dx=p.dx))
    rec = simulate_path(m, 100, 0, 1.0, stream=stream, params=p)
    _, vals = decompose(rec, m, stream=stream)["bid"].field(2, t=1.0)
    assert vals.tolist() == pytest.approx([0.75 * p.dv_over_dx])


@pytest.mark.parametrize("seed", range(5))
def test_reconstruction_identity(seed):
    m = default_model()
    rec = simulate_path(m, 16, seed, 1.0, record_active_books=True)
    assert reconstruction_error(rec, decompose(rec, m)) <= 1e-9


def test_replay_with_wrong_seed_is_detected():
    m = default_model()
    rec = simulate_path(m, 16, 3, 1.0)
    wrong = build_event_stream(rec.params, m.flow, 4, 1.0)
    with pytest.raises(SeedMismatch):
        decompose(rec, m, stream=wrong)


def test_v1_v2_monotone_and_v3_sign_constancy():
    m = default_model()
    rec = simulate_path(m, 64, 8, 1.0, min_active=64)
    dec = decompose(rec, m)
    stream = build_event_stream(rec.params, m.flow, rec.seed, rec.T, rec.active.times.size)
    for j, side in enumerate(SIDES):
        d = dec[side]
        assert np.all(d.h1 >= 0) and np.all(d.h2 >= 0)
        # the noise sign of a passive event is the one drawn at the last active time
        wN = stream.side(side).wN
        nz = wN > 0
        signs = np.sign(d.h3[nz])
        assert np.array_equal(signs, stream.signs[d.epoch[nz], j].astype(float))
        prev = None
        for u in (0.25, 0.5, 0.75, 1.0):
            b = barred(rec, dec)
            cur = {i: dict(zip(*b.V(i, u, side))) for i in (1, 2)}
            if prev is not None:
                for i in (1, 2):
                    assert all(cur[i].get(c, 0.0) >= v - 1e-15 for c, v in prev[i].items())
            prev = cur


def test_hat_series_conventions():
    m = default_model()
    rec = simulate_path(m, 16, 2, 1.0, record_active_books=True)
    hat = markovize(rec, decompose(rec, m))
    tau = rec.active.times
    assert hat.v(tau[0] / 2, "bid") is rec.snapshots[0].bid
    assert hat.index(tau[1]) == 2  # right-continuous at the jump
    assert hat.v(tau[1], "ask") is rec.books_at_active[1][1]
    assert hat.v(np.nextafter(tau[1], 0), "ask") is rec.books_at_active[0][1]
    assert hat.prices(tau[1]) == (rec.active.bt[1] * rec.params.dx, rec.active.at[1] * rec.params.dx)


def test_noise_increments_have_no_drift_small():
    m = default_model()
    k = default_kernel()
    inc = np.concatenate([decompose(r, m)["bid"].increments(3, k)
                          for r in (simulate_path(m, 16, s, 1.0) for s in range(60))])
    assert abs(inc.mean()) <= 4 * inc.std(ddof=1) / math.sqrt(inc.size)


def test_time_change_needs_active_events():
    p = derive_scaling(16, mu=0.0)
    rec = simulate_path(default_model(), 16, 0, 1.0, params=p)
    with pytest.raises(NotEnoughActiveEvents):
        time_change(rec)
    tc = TimeChange.from_times([0.5], 4)
    assert tc.eta_bar(0.1) == 0.0 and tc.eta_bar(0.25) == 0.5
    with pytest.raises(NotEnoughActiveEvents):
        tc.eta_bar(0.5)


@given(st.sampled_from([4, 16, 64, 256]))
def test_time_change_identity_for_grid_jumps(n):
    tc = TimeChange.from_times(np.arange(1, 4 * n + 1) / n, n)
    u = np.linspace(0, 2, 401)
    assert np.all(np.abs(tc.eta(u) - u) <= 1.0 / n + 1e-12)
    assert tc.sup_deviation(1.0) <= 1.0 / n + 1e-12
    for k in range(0, 2 * n):
        assert tc.eta_bar(k / n) == pytest.approx(k / n)


@settings(max_examples=50)
@given(st.lists(st.floats(0.001, 3.0), min_size=1, max_size=60, unique=True), st.integers(1, 50))
def test_time_change_inverse_relation(raw, n):
    times = np.sort(np.asarray(raw))
    tc = TimeChange.from_times(times, n)
    for k in range(1, times.size + 1):
        assert tc.eta(tc.eta_bar(k / n)) == pytest.approx(k / n)
        assert tc.eta_bar(tc.eta(times[k - 1])) == times[k - 1]
    # brute-force sup over a fine grid never exceeds the jump-based value
    u = np.linspace(0, 1, 2001)
    assert np.max(np.abs(tc.eta(u) - u)) <= tc.sup_deviation(1.0) + 1e-12


def test_barred_identities():
    m = default_model()
    n = 16
    rec = simulate_path(m, n, 6, 1.0, min_active=3 * n, record_active_books=True)
    dec = decompose(rec, m)
    bar, hat = barred(rec, dec), markovize(rec, dec)
    tc = bar.tc
    assert bar.prices(0.5 / n) == (rec.bt0 * rec.params.dx, rec.at0 * rec.params.dx)
    assert bar.v(0.5 / n, "bid") is rec.snapshots[0].bid
    for u in np.linspace(0, 1, 50):
        e = float(tc.eta(u))
        assert hat.v(u, "bid") is bar.v(e, "bid")
        assert hat.prices(u) == bar.prices(e)
    A = np.array([bar.prices(k / n)[1] for k in range(3 * n + 1)])
    assert set(np.round(np.diff(A) / rec.params.dx).astype(int)) <= {-1, 0, 1}
    with pytest.raises(NotEnoughActiveEvents):
        bar.k(10.0)
