"""Instrumentation processes computed by replaying a path's event stream.

* :func:`decompose` splits the volume dynamics into cumulative placement (V1),
  cancellation-proportion (V2) and noise (V3) fields and rebuilds the book
  multiplicatively, event by event.
* :func:`markovize` freezes the book between active order times.
* :func:`time_change` and :func:`barred` move everything onto the active-order
  clock u = k/n.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import PathRecord, build_event_stream
from .errors import NotEnoughActiveEvents, SeedMismatch
from .grid import StepField
from .model import SIDES, ModelSpec


def _count_index(k: float) -> int:
    """floor(k) robust to k = n*u landing a hair below an integer."""
    r = round(k)
    return int(r) if abs(k - r) <= 1e-9 * max(1.0, abs(k)) else int(math.floor(k))


@dataclass
class Decomposition:
    """Event-level record of one side's passive updates.

    ``epoch[i]`` is the number of active events strictly before passive event i.
    ``h1``/``h2``/``h3`` are the placement, cancellation-proportion and noise
    increments, hitting cells ``cellP``/``cellC``/``cellN``.
    """

    side: str
    dx: float
    v0: object
    times: np.ndarray
    epoch: np.ndarray
    cellC: np.ndarray
    cellP: np.ndarray
    cellN: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray

    def _select(self, t: float | None = None, k: int | None = None) -> slice:
        if k is not None:
            return slice(0, int(np.searchsorted(self.epoch, k, side="left")))
        return slice(0, int(np.searchsorted(self.times, t, side="right")))

    def _role(self, i: int):
        return {1: (self.cellP, self.h1), 2: (self.cellC, self.h2), 3: (self.cellN, self.h3)}[i]

    def field(self, i: int, t: float | None = None, k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """V^i as (ticks, values) at time t, or at the k-th active time when k is given."""
        sel = self._select(t, k)
        cells, h = self._role(i)
        cells, h = cells[sel], h[sel]
        if cells.size == 0:
            return np.empty(0, np.int64), np.empty(0)
        ticks, inv = np.unique(cells, return_inverse=True)
        return ticks, np.bincount(inv, weights=h, minlength=ticks.size)

    def l2_sq(self, i: int, t: float | None = None, k: int | None = None) -> float:
        _, vals = self.field(i, t, k)
        return float(self.dx * np.dot(vals, vals))

    def sup_norm(self, i: int, t: float | None = None, k: int | None = None) -> float:
        _, vals = self.field(i, t, k)
        return float(np.max(np.abs(vals))) if vals.size else 0.0

    def increments(self, i: int, kernel, upto: int | None = None) -> np.ndarray:
        """<V^i(tau_k) - V^i(tau_{k-1}), phi> for k = 1..upto (absolute coordinates)."""
        cells, h = self._role(i)
        K = int(self.epoch[-1]) + 1 if upto is None and self.epoch.size else (upto or 0)
        w = np.asarray(kernel((cells + 0.5) * self.dx)) * self.dx * h
        mask = self.epoch < K
        return np.bincount(self.epoch[mask], weights=w[mask], minlength=K)[:K]

    def reconstruct(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Book at the k-th active time rebuilt from the h-increments alone.

        Per cell, with P_i the running product of (1 - h2) over the cell's
        events: v = P_K * (v0 + sum_i (h1_i + h3_i) / P_i).
        """
        m = int(np.searchsorted(self.epoch, k, side="left"))
        if m == 0:
            return np.empty(0, np.int64), np.empty(0)
        order = np.arange(m)
        cells = np.concatenate([self.cellC[:m], self.cellP[:m], self.cellN[:m]])
        evt = np.concatenate([order, order, order])
        fac = np.concatenate([np.log1p(-self.h2[:m]), np.zeros(m), np.zeros(m)])
        add = np.concatenate([np.zeros(m), self.h1[:m], self.h3[:m]])
        idx = np.lexsort((evt, cells))
        cells, evt, fac, add = cells[idx], evt[idx], fac[idx], add[idx]
        # collapse entries of one event on one cell: v <- exp(fac) v + add
        g0 = np.flatnonzero(np.r_[True, (cells[1:] != cells[:-1]) | (evt[1:] != evt[:-1])])
        cells, fac, add = cells[g0], np.add.reduceat(fac, g0), np.add.reduceat(add, g0)
        first = np.flatnonzero(np.r_[True, cells[1:] != cells[:-1]])
        seg = np.repeat(np.arange(first.size), np.diff(np.r_[first, cells.size]))
        logP = np.cumsum(fac)
        logP -= (logP[first] - fac[first])[seg]
        term = add * np.exp(-logP)
        S = np.cumsum(term)
        S -= (S[first] - term[first])[seg]
        last = np.r_[first[1:] - 1, cells.size - 1]
        ticks = cells[last]
        v0 = np.asarray(self.v0((ticks + 0.5) * self.dx), dtype=float)
        return ticks, np.exp(logP[last]) * (v0 + S[last])


def _stream_for(path: PathRecord, model: ModelSpec):
    extra = path.active.times.size if path.horizon > path.T else 0
    return build_event_stream(path.params, model.flow, path.seed, path.T, extra)


def decompose(path: PathRecord, model: ModelSpec, stream=None) -> dict:
    """Replay the path's stream and return ``{"bid": Decomposition, "ask": Decomposition}``."""
    stream = _stream_for(path, model) if stream is None else stream
    if stream.active_times.size != path.active.times.size or not np.array_equal(stream.active_times, path.active.times):
        raise SeedMismatch("replayed active times differ from the recorded path")
    params = path.params
    out = {}
    for j, side in enumerate(SIDES):
        m = stream.side(side)
        epoch = np.searchsorted(stream.active_times, m.times, side="left")
        ticks_after = path.active.bt if side == "bid" else path.active.at
        start = path.bt0 if side == "bid" else path.at0
        if ticks_after.size:
            anchor = np.where(epoch > 0, ticks_after[np.maximum(epoch - 1, 0)], start)
        else:
            anchor = np.full(epoch.size, start, dtype=np.int64)
        sign = stream.signs[epoch, j].astype(float)
        out[side] = Decomposition(
            side=side, dx=params.dx, v0=path.snapshots[0].field(side).v0,
            times=m.times, epoch=epoch,
            cellC=anchor + m.offC, cellP=anchor + m.offP, cellN=anchor + m.offN,
            h1=m.wP * params.dv_over_dx, h2=m.wC * params.dv_over_dx, h3=m.wN * sign * params.sqrt_dv,
        )
    _check_replay(path, out)
    return out


def _check_replay(path: PathRecord, dec: dict) -> None:
    """The replay must touch exactly the cells the recorded path touched."""
    snap = path.snapshots[-1]
    for side in SIDES:
        d = dec[side]
        m = int(np.searchsorted(d.times, snap.t, side="right"))
        cells = np.unique(np.concatenate([d.cellC[:m], d.cellP[:m], d.cellN[:m]]))
        ticks, _ = snap.field(side).sparse_items()
        if not np.array_equal(cells, ticks):
            raise SeedMismatch(f"{side} cells touched by the replay differ from the recorded path")


def reconstruction_error(path: PathRecord, dec: dict) -> float:
    """Max relative error of the multiplicative rebuild over all recorded active-time books."""
    if path.books_at_active is None:
        raise ValueError("simulate with record_active_books=True to check the reconstruction")
    worst = 0.0
    for k, books in enumerate(path.books_at_active, start=1):
        for side, fld in zip(SIDES, books):
            ticks, vals = dec[side].reconstruct(k)
            if ticks.size == 0:
                continue
            eng = np.array([fld.get(int(j)) for j in ticks])
            err = np.abs(vals - eng) / np.maximum(1.0, np.abs(eng))
            worst = max(worst, float(err.max()))
    return worst


# ---------------------------------------------------------------------------
# hat (markovized) processes
# ---------------------------------------------------------------------------


@dataclass
class HatSeries:
    """Book and V-fields frozen at the most recent active time (right-continuous)."""

    path: PathRecord
    dec: dict

    def index(self, t: float) -> int:
        """k with tau_k <= t < tau_{k+1} (tau_0 = 0)."""
        return int(np.searchsorted(self.path.active.times, t, side="right"))

    def v(self, t: float, side: str) -> StepField:
        k = self.index(t)
        if k == 0:
            return self.path.snapshots[0].field(side)
        if self.path.books_at_active is None:
            raise ValueError("simulate with record_active_books=True to evaluate the hat book")
        return self.path.books_at_active[k - 1][0 if side == "bid" else 1]

    def V(self, i: int, t: float, side: str):
        return self.dec[side].field(i, k=self.index(t))

    def prices(self, t: float) -> tuple[float, float]:
        k = self.index(t)
        dx = self.path.params.dx
        if k == 0:
            return self.path.bt0 * dx, self.path.at0 * dx
        return self.path.active.bt[k - 1] * dx, self.path.active.at[k - 1] * dx


def markovize(path: PathRecord, dec: dict) -> HatSeries:
    return HatSeries(path, dec)


# ---------------------------------------------------------------------------
# time change
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeChange:
    """eta_bar(u) = tau_{floor(n u)} and its generalised inverse eta(u) = N(u)/n."""

    n: int
    times: np.ndarray

    @classmethod
    def from_times(cls, times, n: int, T: float | None = None) -> "TimeChange":
        times = np.asarray(times, dtype=float)
        if times.size == 0 or (T is not None and times[0] > T):
            raise NotEnoughActiveEvents("no active events in the horizon; the time change is undefined")
        return cls(int(n), times)

    def eta_bar(self, u: float) -> float:
        k = _count_index(self.n * u)
        if k == 0:
            return 0.0
        if k > self.times.size:
            raise NotEnoughActiveEvents(f"eta_bar({u}) needs {k} active events, only {self.times.size} simulated")
        return float(self.times[k - 1])

    def count(self, t) -> np.ndarray:
        return np.searchsorted(self.times, t, side="right")

    def eta(self, u):
        return self.count(u) / self.n

    def sup_deviation(self, T: float) -> float:
        """sup_{u <= T} |eta_u - u|, attained at a jump (either side) or at T."""
        tau = self.times[self.times <= T]
        k = np.arange(1, tau.size + 1)
        cands = [abs(self.eta(T) - T), 0.0]
        if tau.size:
            cands.append(float(np.max(np.abs((k - 1) / self.n - tau))))
            cands.append(float(np.max(np.abs(k / self.n - tau))))
        return float(max(cands))


def time_change(path: PathRecord) -> TimeChange:
    return TimeChange.from_times(path.active.times, path.n, path.T)


# ---------------------------------------------------------------------------
# barred processes
# ---------------------------------------------------------------------------


@dataclass
class BarredSeries:
    """Processes evaluated on the active-order clock: X_bar(u) = X(tau_{floor(n u)})."""

    path: PathRecord
    dec: dict
    tc: TimeChange

    def k(self, u: float) -> int:
        k = _count_index(self.path.n * u)
        if k > self.path.active.times.size:
            raise NotEnoughActiveEvents(
                f"u={u} needs {k} active events; simulate with min_active >= {k}"
            )
        return k

    def prices(self, u: float) -> tuple[float, float]:
        k, dx = self.k(u), self.path.params.dx
        if k == 0:
            return self.path.bt0 * dx, self.path.at0 * dx
        return self.path.active.bt[k - 1] * dx, self.path.active.at[k - 1] * dx

    def v(self, u: float, side: str) -> StepField:
        k = self.k(u)
        if k == 0:
            return self.path.snapshots[0].field(side)
        if self.path.books_at_active is None:
            raise ValueError("simulate with record_active_books=True to evaluate the barred book")
        return self.path.books_at_active[k - 1][0 if side == "bid" else 1]

    def V(self, i: int, u: float, side: str):
        return self.dec[side].field(i, k=self.k(u))

    def V_l2_sq(self, i: int, u: float, side: str) -> float:
        return self.dec[side].l2_sq(i, k=self.k(u))


def barred(path: PathRecord, dec: dict, tc: TimeChange | None = None) -> BarredSeries:
    return BarredSeries(path, dec, time_change(path) if tc is None else tc)


def field_diff_l2_sq(f: StepField, g: StepField) -> float:
    """dx * sum_j (f_j - g_j)^2 over the union of both windows."""
    lo, hi = min(f.origin, g.origin), max(f.end, g.end)
    a, b = f.copy(), g.copy()
    d = a.window(lo, hi) - b.window(lo, hi)
    return float(f.dx * np.dot(d, d))
