"""Event-by-event simulation of the n-th discrete order book model.

Three independent Poisson clocks drive the book: active orders at rate mu
move the best prices by at most one tick, and passive events at rate lambda
per side perturb the volume density through a placement, a cancellation and
a noise mark.  All randomness is drawn up front from per-slot substreams of
one seed, so replaying a stream (for instrumentation) reproduces a path
bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from numba import njit

from .errors import CrossedBook
from .grid import StepField, kernel_weights
from .model import (
    SIDES,
    ModelSpec,
    OrderFlowSpec,
    PriceMoveSpec,
    ScalingParams,
    derive_scaling,
    joint_move_pmf,
    sample_index,
    snap_to_grid,
)

# substream slots; never renumber, only append
SLOT = {
    "active_clock": 0,
    "bid_clock": 1,
    "ask_clock": 2,
    "active_u": 3,
    "signs": 4,
}
for _i, _side in enumerate(SIDES):
    for _j, _mark in enumerate(("wC", "wP", "wN", "piC", "piP", "piN")):
        SLOT[f"{_side}_{_mark}"] = 10 + 10 * _i + _j

CHUNK = 8192


def substream(seed: int, slot: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(SLOT[slot],)))


def _arrival_times(rng, rate: float, horizon: float, min_count: int = 0) -> np.ndarray:
    """Arrival times of a rate-``rate`` Poisson process on [0, horizon], extended to ``min_count`` points."""
    if rate <= 0.0:
        return np.empty(0)
    parts, t, total = [], 0.0, 0
    while t <= horizon or total < min_count:
        c = t + np.cumsum(rng.exponential(1.0 / rate, CHUNK))
        parts.append(c)
        t, total = c[-1], total + CHUNK
    times = np.concatenate(parts)
    keep = max(int(np.searchsorted(times, horizon, side="right")), min_count)
    return times[:keep]


@dataclass(frozen=True)
class PassiveMarks:
    times: np.ndarray
    wC: np.ndarray
    wP: np.ndarray
    wN: np.ndarray
    piC: np.ndarray
    piP: np.ndarray
    piN: np.ndarray
    offC: np.ndarray  # floor(pi / dx): cell offsets from the anchor tick
    offP: np.ndarray
    offN: np.ndarray

    def __len__(self):
        return self.times.size


@dataclass(frozen=True)
class EventDraw:
    """One event with its marks.

    Passive draws carry ``omega`` = (w^C, w^P, w^N) and ``pi`` = (pi^C, pi^P, pi^N).
    Active draws carry the uniform ``u`` used to sample the joint move (or a
    forced ``xi``) and the noise signs for the following interval.
    """

    kind: str  # "active" | "passive-bid" | "passive-ask"
    time: float
    index: int
    omega: tuple = (0.0, 0.0, 0.0)
    pi: tuple = (0.0, 0.0, 0.0)
    u: float = 0.5
    xi: tuple | None = None
    signs: tuple = (1, 1)


@dataclass(frozen=True)
class EventStream:
    params: ScalingParams
    seed: int
    T: float
    horizon: float  # last time covered (>= T; larger when min_active forces extension)
    active_times: np.ndarray
    active_u: np.ndarray
    signs: np.ndarray  # (K + 1, 2) int8; row 0 holds the signs drawn at t = 0
    bid: PassiveMarks
    ask: PassiveMarks

    def side(self, side: str) -> PassiveMarks:
        return self.bid if side == "bid" else self.ask

    @property
    def n_active(self) -> int:
        return self.active_times.size

    def counts(self, upto: float | None = None) -> dict:
        t = self.T if upto is None else upto
        return {
            "active": int(np.searchsorted(self.active_times, t, side="right")),
            "passive_bid": int(np.searchsorted(self.bid.times, t, side="right")),
            "passive_ask": int(np.searchsorted(self.ask.times, t, side="right")),
        }

    def draws(self) -> Iterator[EventDraw]:
        """All events in time order (slow; for tests and small streams)."""
        kinds = [("active", self.active_times), ("passive-bid", self.bid.times), ("passive-ask", self.ask.times)]
        tagged = sorted(
            ((float(t), k, i) for k, ts in kinds for i, t in enumerate(ts)), key=lambda r: r[0]
        )
        for t, kind, i in tagged:
            if kind == "active":
                yield EventDraw(kind, t, i, u=float(self.active_u[i]), signs=tuple(int(s) for s in self.signs[i + 1]))
            else:
                m = self.bid if kind == "passive-bid" else self.ask
                yield EventDraw(
                    kind, t, i,
                    omega=(float(m.wC[i]), float(m.wP[i]), float(m.wN[i])),
                    pi=(float(m.piC[i]), float(m.piP[i]), float(m.piN[i])),
                )


def build_event_stream(
    params: ScalingParams, spec: OrderFlowSpec, seed: int, T: float, min_active: int = 0
) -> EventStream:
    """Merged active/passive event stream on [0, T] with all marks drawn.

    ``min_active`` extends the horizon until at least that many active events
    exist; passive events are generated up to the same extended horizon.
    """
    if not T >= 0:
        raise ValueError(f"horizon must be non-negative, got {T}")
    act = _arrival_times(substream(seed, "active_clock"), params.mu, T, min_active)
    horizon = max(T, float(act[-1]) if act.size else 0.0)
    K = act.size
    u = substream(seed, "active_u").random(K)
    signs = (2 * substream(seed, "signs").integers(0, 2, size=(K + 1, 2)) - 1).astype(np.int8)
    sides = {}
    for side in SIDES:
        times = _arrival_times(substream(seed, f"{side}_clock"), params.lam, horizon)
        m = times.size
        sf = spec.side(side)
        marks = {}
        for key, ev in (("C", sf.cancel), ("P", sf.place), ("N", sf.noise)):
            marks["w" + key] = ev.size.sample(substream(seed, f"{side}_w{key}"), m)
            pi = ev.location.sample(substream(seed, f"{side}_pi{key}"), m)
            marks["pi" + key] = pi
            marks["off" + key] = np.floor(pi / params.dx).astype(np.int64)
        sides[side] = PassiveMarks(times=times, **marks)
    return EventStream(params, int(seed), float(T), horizon, act, u, signs, sides["bid"], sides["ask"])


# ---------------------------------------------------------------------------
# book state
# ---------------------------------------------------------------------------


class BookState:
    """Prices as integer ticks plus the two volume density step functions.

    ``anchor`` holds each side's best-price tick at the last active time and
    ``signs`` the noise signs held since then.  Operations mutate in place
    and return the state for chaining.
    """

    __slots__ = ("params", "t", "bt", "at", "bid", "ask", "anchor", "signs")

    def __init__(self, params: ScalingParams, bt: int, at: int, bid: StepField, ask: StepField, signs=(1, 1), t=0.0):
        if bt > at:
            raise CrossedBook(f"bid tick {bt} above ask tick {at}")
        self.params = params
        self.t = float(t)
        self.bt, self.at = int(bt), int(at)
        self.bid, self.ask = bid, ask
        self.anchor = {"bid": self.bt, "ask": self.at}
        self.signs = {"bid": int(signs[0]), "ask": int(signs[1])}

    @classmethod
    def initial(cls, model: ModelSpec, params: ScalingParams, signs=(1, 1)) -> "BookState":
        ic = model.initial
        bt, at = snap_to_grid(ic.B0, params), snap_to_grid(ic.A0, params)
        reach = int(math.ceil(model.flow.M / params.dx)) + 2
        bid = StepField(params.dx, ic.v_b0, bt - reach, bt + reach)
        ask = StepField(params.dx, ic.v_a0, at - reach, at + reach)
        return cls(params, bt, at, bid, ask, signs)

    @property
    def B(self) -> float:
        return self.bt * self.params.dx

    @property
    def A(self) -> float:
        return self.at * self.params.dx

    def field(self, side: str) -> StepField:
        return self.bid if side == "bid" else self.ask

    def tick(self, side: str) -> int:
        return self.bt if side == "bid" else self.at

    def copy(self) -> "BookState":
        out = BookState(self.params, self.bt, self.at, self.bid.copy(), self.ask.copy(), t=self.t)
        out.anchor, out.signs = dict(self.anchor), dict(self.signs)
        return out


def volume_statistic(state: BookState, kernel, side: str, params: ScalingParams | None = None) -> float:
    """Y = sum_j v(x_j) phi(x_j - P) dx with x_j the midpoint of tick j, P the side's best price."""
    params = state.params if params is None else params
    k0, w = kernel_weights(kernel, params.dx)
    return state.field(side).pair(w, state.tick(side) + k0)


def apply_active(state: BookState, draw: EventDraw, spec: PriceMoveSpec, params: ScalingParams,
                 Y: tuple | None = None) -> BookState:
    """Move both prices by the sampled ticks and store the new noise signs."""
    if draw.xi is not None:
        xb, xa = draw.xi
    else:
        if Y is None:
            Y = (volume_statistic(state, spec.phi_b, "bid", params), volume_statistic(state, spec.phi_a, "ask", params))
        P, _ = joint_move_pmf((state.B, state.A, Y[0], Y[1]), spec, params)
        idx = sample_index(P.ravel(), draw.u)
        xb, xa = idx // 3 - 1, idx % 3 - 1
    bt, at = state.bt + int(xb), state.at + int(xa)
    if bt > at:
        raise CrossedBook(f"active event at t={draw.time:.6g} crossed the book ({bt} > {at})")
    state.bt, state.at, state.t = bt, at, draw.time
    state.anchor = {"bid": bt, "ask": at}
    state.signs = {"bid": int(draw.signs[0]), "ask": int(draw.signs[1])}
    return state


def apply_passive(state: BookState, draw: EventDraw, params: ScalingParams) -> BookState:
    """Placement, cancellation and noise updates of one passive event, all from pre-event values."""
    side = "bid" if draw.kind == "passive-bid" else "ask"
    fld = state.field(side)
    P = state.anchor[side]
    wC, wP, wN = draw.omega
    jc, jp, jn = (P + int(math.floor(pi / params.dx)) for pi in draw.pi)
    vc = fld.get(jc)
    fld.set(jc, vc - wC * params.dv_over_dx * vc)
    fld.set(jp, fld.get(jp) + wP * params.dv_over_dx)
    fld.set(jn, fld.get(jn) + wN * state.signs[side] * params.sqrt_dv)
    state.t = draw.time
    return state


@njit(cache=True)
def _passive_run(vals, touched, origin, anchor, offC, offP, offN, wC, wP, wN, sign, dvdx, sqdv, i0, i1):
    for i in range(i0, i1):
        jc = anchor + offC[i] - origin
        jp = anchor + offP[i] - origin
        jn = anchor + offN[i] - origin
        vals[jc] -= wC[i] * dvdx * vals[jc]
        vals[jp] += wP[i] * dvdx
        vals[jn] += wN[i] * sign * sqdv
        touched[jc] = True
        touched[jp] = True
        touched[jn] = True


# ---------------------------------------------------------------------------
# path simulation
# ---------------------------------------------------------------------------


@dataclass
class Snapshot:
    t: float
    bt: int
    at: int
    B: float
    A: float
    Yb: float
    Ya: float
    bid: StepField
    ask: StepField

    def field(self, side: str) -> StepField:
        return self.bid if side == "bid" else self.ask


@dataclass
class ActiveLog:
    """Per active event k = 1..K: time, pre-event Y, moves, post-event ticks."""

    times: np.ndarray
    Yb: np.ndarray
    Ya: np.ndarray
    xi_b: np.ndarray
    xi_a: np.ndarray
    bt: np.ndarray
    at: np.ndarray


@dataclass
class PathRecord:
    n: int
    seed: int
    T: float
    params: ScalingParams
    snapshots: list
    active: ActiveLog
    counts: dict
    violations: int
    bt0: int
    at0: int
    horizon: float
    books_at_active: list | None = None  # (bid, ask) copies at tau_1, tau_2, ...
    final: BookState | None = None
    meta: dict = field(default_factory=dict)

    @property
    def snapshot_times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def snapshot(self, t: float, tol: float = 1e-12) -> Snapshot:
        from .errors import SnapshotMissing

        for s in self.snapshots:
            if abs(s.t - t) <= tol:
                return s
        raise SnapshotMissing(f"no snapshot at t={t} (have {list(self.snapshot_times)})")

    @property
    def flagged(self) -> bool:
        return self.violations > 0


class _Stepper:
    """Drives one path: advances passive runs between breakpoints and applies active events."""

    def __init__(self, model: ModelSpec, params: ScalingParams, stream: EventStream):
        self.model, self.params, self.stream = model, params, stream
        self.state = BookState.initial(model, params, signs=tuple(stream.signs[0]))
        self.ptr = {"bid": 0, "ask": 0}
        self.reach = (int(math.floor(-model.flow.M / params.dx)) - 1, int(math.floor(model.flow.M / params.dx)) + 1)
        self.wts = {s: kernel_weights(model.moves.kernel(s), params.dx) for s in SIDES}
        law = model.moves.law
        self.state_free = bool(getattr(law, "state_free", False))
        self.violations = 0
        self._cache = {}

    def Y(self, side: str) -> float:
        k0, w = self.wts[side]
        return self.state.field(side).pair(w, self.state.tick(side) + k0)

    def advance(self, t: float, strict: bool) -> None:
        """Apply passive events with time < t (strict) or <= t."""
        st = self.state
        how = "left" if strict else "right"
        for side in SIDES:
            m = self.stream.side(side)
            i0 = self.ptr[side]
            i1 = int(np.searchsorted(m.times, t, side=how))
            if i1 <= i0:
                continue
            fld = st.field(side)
            a = st.anchor[side]
            fld.ensure(a + self.reach[0], a + self.reach[1])
            _passive_run(fld.vals, fld.touched, fld.origin, a, m.offC, m.offP, m.offN, m.wC, m.wP, m.wN,
                         float(st.signs[side]), self.params.dv_over_dx, self.params.sqrt_dv, i0, i1)
            self.ptr[side] = i1

    def pmf(self, Yb: float, Ya: float) -> np.ndarray:
        st = self.state
        if self.state_free:
            key = (st.at - st.bt) * self.params.dx <= self.model.moves.guard(self.params) + 1e-12
            if key not in self._cache:
                self._cache[key] = joint_move_pmf((st.B, st.A, Yb, Ya), self.model.moves, self.params)
            P, clamped = self._cache[key]
        else:
            P, clamped = joint_move_pmf((st.B, st.A, Yb, Ya), self.model.moves, self.params)
        self.violations += int(clamped)
        return P

    def active(self, k: int) -> tuple:
        s = self.stream
        t = float(s.active_times[k])
        Yb, Ya = self.Y("bid"), self.Y("ask")
        P = self.pmf(Yb, Ya)
        idx = sample_index(P.ravel(), float(s.active_u[k]))
        xb, xa = idx // 3 - 1, idx % 3 - 1
        draw = EventDraw("active", t, k, xi=(xb, xa), signs=tuple(int(v) for v in s.signs[k + 1]))
        apply_active(self.state, draw, self.model.moves, self.params)
        return t, Yb, Ya, xb, xa

    def snapshot(self, t: float) -> Snapshot:
        st = self.state
        return Snapshot(t, st.bt, st.at, st.B, st.A, self.Y("bid"), self.Y("ask"), st.bid.copy(), st.ask.copy())


def simulate_path(
    model: ModelSpec,
    n: int,
    seed: int,
    T: float,
    snapshot_times: Sequence[float] | None = None,
    *,
    min_active: int = 0,
    record_active_books: bool = False,
    stream: EventStream | None = None,
    params: ScalingParams | None = None,
) -> PathRecord:
    """Simulate one path of the n-th model on [0, T].

    Snapshots default to {0, T}.  With ``min_active`` the simulation runs past
    T until that many active events have occurred (needed by time-changed
    processes); snapshots are still restricted to [0, T].
    """
    params = derive_scaling(n) if params is None else params
    if stream is None:
        stream = build_event_stream(params, model.flow, seed, T, min_active)
    snaps = np.unique(np.asarray([0.0, T] if snapshot_times is None else snapshot_times, dtype=float))
    if snaps.size and (snaps[0] < 0 or snaps[-1] > T + 1e-12):
        raise ValueError(f"snapshot times must lie in [0, {T}]")
    if not snaps.size or snaps[0] != 0.0:
        snaps = np.concatenate([[0.0], snaps])

    step = _Stepper(model, params, stream)
    K = stream.n_active
    log = np.zeros((K, 7))
    books = [] if record_active_books else None
    records = []
    k = 0
    for ts in snaps:
        while k < K and stream.active_times[k] <= ts:
            step.advance(float(stream.active_times[k]), strict=True)
            log[k] = (*step.active(k), step.state.bt, step.state.at)
            if books is not None:
                books.append((step.state.bid.copy(), step.state.ask.copy()))
            k += 1
        step.advance(float(ts), strict=False)
        step.state.t = float(ts)
        records.append(step.snapshot(float(ts)))
    while k < K:
        step.advance(float(stream.active_times[k]), strict=True)
        log[k] = (*step.active(k), step.state.bt, step.state.at)
        if books is not None:
            books.append((step.state.bid.copy(), step.state.ask.copy()))
        k += 1
    step.advance(stream.horizon, strict=False)
    step.state.t = stream.horizon

    active = ActiveLog(
        times=log[:, 0].copy(), Yb=log[:, 1].copy(), Ya=log[:, 2].copy(),
        xi_b=log[:, 3].astype(np.int8), xi_a=log[:, 4].astype(np.int8),
        bt=log[:, 5].astype(np.int64), at=log[:, 6].astype(np.int64),
    )
    s0 = records[0]
    return PathRecord(
        n=params.n, seed=int(seed), T=float(T), params=params, snapshots=records, active=active,
        counts=stream.counts(), violations=step.violations, bt0=s0.bt, at0=s0.at,
        horizon=stream.horizon, books_at_active=books, final=step.state,
    )
