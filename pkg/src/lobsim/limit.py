"""Euler-Maruyama solver for the limiting price SDE coupled to the volume SDEs.

For each side with best price P (bid: B, ask: A) and node x of a fixed grid,

    dv(x) = (E[w^P] f^P(x - P) - E[w^C] f^C(x - P) v(x)) dt + sqrt(2) E[w^N] f^N(x - P) dW_side
    dB = b_b dt + sigma_b . dW~,   dA = b_a dt + sigma_a . dW~,

with Y = <v, phi(. - P)> by the trapezoid rule.  W~ (2-d), W_b and W_a are
independent.  Paths are integrated as a batch: every array carries a leading
path axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import GridBreach
from .model import SIDES, FrozenPrice, ModelSpec

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class LimitGrid:
    x_lo: float
    x_hi: float
    h: float = 0.01

    def __post_init__(self):
        if not (self.h > 0 and self.x_hi > self.x_lo):
            raise ValueError("grid needs h > 0 and x_hi > x_lo")

    @property
    def size(self) -> int:
        return int(round((self.x_hi - self.x_lo) / self.h)) + 1

    @property
    def nodes(self) -> np.ndarray:
        return self.x_lo + self.h * np.arange(self.size)

    @classmethod
    def around(cls, model: ModelSpec, h: float = 0.01, margin: float = 2.0) -> "LimitGrid":
        """Grid covering both initial prices, the order-flow reach M and a safety margin."""
        M = model.flow.M
        lo = model.initial.B0 - M - margin
        hi = model.initial.A0 + M + margin
        lo = h * math.floor(lo / h)
        hi = h * math.ceil(hi / h)
        return cls(lo, hi, h)


@dataclass
class LimitState:
    """Batched state; scalars have shape (R,), volume profiles (R, N)."""

    t: float
    B: np.ndarray
    A: np.ndarray
    Yb: np.ndarray
    Ya: np.ndarray
    vb: np.ndarray
    va: np.ndarray

    def prices(self, side: str) -> np.ndarray:
        return self.B if side == "bid" else self.A

    def volume(self, side: str) -> np.ndarray:
        return self.vb if side == "bid" else self.va

    def copy(self) -> "LimitState":
        return LimitState(self.t, self.B.copy(), self.A.copy(), self.Yb.copy(), self.Ya.copy(),
                          self.vb.copy(), self.va.copy())


FINE = 512  # table points per grid cell


def _tabulate(fn, lo: float, hi: float, h: float):
    step = h / FINE
    m = int(math.ceil((hi - lo) / step)) + 1
    xs = lo + step * np.arange(m)
    return float(lo), float(step), np.ascontiguousarray(np.asarray(fn(xs), dtype=np.float64))


@njit(cache=True)
def _lookup(tab, t0, ts, x):
    u = (x - t0) / ts
    r = round(u)
    if abs(u - r) < 1e-6:  # on a table point: read it, so jumps follow the pdf's closed support
        j = int(r)
        return tab[j] if 0 <= j < tab.size else 0.0
    j = int(math.floor(u))
    if j < 0 or j >= tab.size - 1:
        return 0.0
    w = u - j
    return (1.0 - w) * tab[j] + w * tab[j + 1]


@njit(cache=True)
def _volume_step(v, P, x_lo, h, left, width, tP, tC, tN, t0, ts, dt, dW):
    """In-place update of the band of nodes around each path's price; returns False on grid breach."""
    R, N = v.shape
    for r in range(R):
        i0 = int(math.floor((P[r] - left - x_lo) / h))
        if i0 < 0 or i0 + width > N:
            return False
        for k in range(width):
            i = i0 + k
            rel = x_lo + i * h - P[r]
            gP = _lookup(tP, t0, ts, rel)
            gC = _lookup(tC, t0, ts, rel)
            gN = _lookup(tN, t0, ts, rel)
            v[r, i] += (gP - gC * v[r, i]) * dt + gN * dW[r]
    return True


@njit(cache=True)
def _pairing(v, P, x_lo, h, left, width, tK, t0, ts, out):
    R, N = v.shape
    for r in range(R):
        i0 = int(math.floor((P[r] + left - x_lo) / h))
        if i0 < 0 or i0 + width > N:
            return False
        acc = 0.0
        for k in range(width):
            i = i0 + k
            acc += _lookup(tK, t0, ts, x_lo + i * h - P[r]) * v[r, i]
        out[r] = h * acc
    return True


class _Band:
    """Density and kernel tables plus the node bands they touch.

    Densities and kernels are tabulated at spacing h/512 and read by linear
    interpolation, which keeps per-step cost independent of the density family.
    """

    def __init__(self, model: ModelSpec, grid: LimitGrid):
        self.model, self.grid = model, grid
        self.x = grid.nodes
        M, h = model.flow.M, grid.h
        self.flow_width = int(math.ceil(2 * M / h)) + 3
        self.flow_left = M + h
        self.flow = {}
        for s in SIDES:
            sf = model.flow.side(s)
            tabs = []
            for ev, scale in ((sf.place, 1.0), (sf.cancel, 1.0), (sf.noise, SQRT2)):
                t0, ts, tab = _tabulate(ev.location.pdf, -M - 3 * h, M + 3 * h, h)
                tabs.append(scale * ev.size.mean * tab)
            self.flow[s] = (tabs[0], tabs[1], tabs[2], t0, ts)
        self.kern = {}
        for s in SIDES:
            k = model.moves.kernel(s)
            lo, hi = k.support
            t0, ts, tab = _tabulate(k, lo - 3 * h, hi + 3 * h, h)
            self.kern[s] = (lo - h, int(math.ceil((hi - lo) / h)) + 3, tab, t0, ts)

    def update(self, side: str, v: np.ndarray, P: np.ndarray, dt: float, dW: np.ndarray) -> None:
        tP, tC, tN, t0, ts = self.flow[side]
        ok = _volume_step(v, np.ascontiguousarray(P, dtype=np.float64), self.grid.x_lo, self.grid.h,
                          self.flow_left, self.flow_width, tP, tC, tN, t0, ts, dt,
                          np.ascontiguousarray(dW, dtype=np.float64))
        if not ok:
            raise GridBreach(f"{side} price came within reach of the grid edge [{self.grid.x_lo}, {self.grid.x_hi}]")

    def Y(self, side: str, P: np.ndarray, v: np.ndarray) -> np.ndarray:
        left, width, tab, t0, ts = self.kern[side]
        out = np.empty(P.shape)
        if not _pairing(v, np.ascontiguousarray(P, dtype=np.float64), self.grid.x_lo, self.grid.h,
                        left, width, tab, t0, ts, out):
            raise GridBreach(f"{side} kernel window left the grid")
        return out


def initial_state(model: ModelSpec, grid: LimitGrid, R: int = 1, band: _Band | None = None) -> LimitState:
    band = _Band(model, grid) if band is None else band
    x = grid.nodes
    ic = model.initial
    B = np.full(R, float(ic.B0))
    A = np.full(R, float(ic.A0))
    vb = np.tile(np.asarray(ic.v_b0(x), dtype=float), (R, 1))
    va = np.tile(np.asarray(ic.v_a0(x), dtype=float), (R, 1))
    return LimitState(0.0, B, A, band.Y("bid", B, vb), band.Y("ask", A, va), vb, va)


def em_step(state: LimitState, dt: float, noise: np.ndarray, model: ModelSpec, grid: LimitGrid,
            band: _Band | None = None, inplace: bool = False) -> LimitState:
    """One Euler-Maruyama step.

    ``noise`` has shape (R, 4): columns (dW~_1, dW~_2, dW_b, dW_a).  Returns a
    new state unless ``inplace``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    band = _Band(model, grid) if band is None else band
    noise = np.atleast_2d(np.asarray(noise, dtype=float))
    if noise.shape != (state.B.size, 4):
        raise ValueError(f"noise must have shape ({state.B.size}, 4), got {noise.shape}")
    new = state if inplace else state.copy()
    B0, A0 = state.B, state.A
    bb, ba, S = model.moves.coefficients(state.B, state.A, state.Yb, state.Ya)
    S = np.broadcast_to(S, state.B.shape + (2, 2))
    dWt = noise[:, :2]
    for side, col, P in (("bid", 2, B0), ("ask", 3, A0)):
        band.update(side, new.volume(side), P, dt, noise[:, col])
    new.B = B0 + bb * dt + np.einsum("rj,rj->r", S[:, 0, :], dWt)
    new.A = A0 + ba * dt + np.einsum("rj,rj->r", S[:, 1, :], dWt)
    new.Yb = band.Y("bid", new.B, new.vb)
    new.Ya = band.Y("ask", new.A, new.va)
    new.t = state.t + dt
    return new


# ---------------------------------------------------------------------------
# driving noise
# ---------------------------------------------------------------------------


def brownian_increments(seed: int, steps: int, dt: float) -> np.ndarray:
    """(steps, 4) independent N(0, dt) increments for one path."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(99,)))
    return rng.standard_normal((steps, 4)) * math.sqrt(dt)


def coarsen(incr: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` increments along the step axis (axis -2)."""
    steps = incr.shape[-2]
    if steps % factor:
        raise ValueError("step count must be divisible by the coarsening factor")
    shape = incr.shape[:-2] + (steps // factor, factor, incr.shape[-1])
    return incr.reshape(shape).sum(axis=-2)


@dataclass
class LimitSeries:
    times: np.ndarray
    B: np.ndarray  # (S, R)
    A: np.ndarray
    Yb: np.ndarray
    Ya: np.ndarray
    vb: np.ndarray  # (S, R, N)
    va: np.ndarray
    grid: LimitGrid
    seeds: tuple
    dt: float
    crossing: np.ndarray = field(default=None)  # first time A < B per path (nan if never)

    def volume(self, side: str) -> np.ndarray:
        return self.vb if side == "bid" else self.va

    def prices(self, side: str) -> np.ndarray:
        return self.B if side == "bid" else self.A

    def at(self, t: float, tol: float = 1e-9) -> int:
        hit = np.flatnonzero(np.abs(self.times - t) <= tol)
        if not hit.size:
            from .errors import SnapshotMissing

            raise SnapshotMissing(f"limit series has no snapshot at t={t}")
        return int(hit[0])

    def pairing(self, t: float, kernel, side: str) -> np.ndarray:
        """<v(t), phi> per path, trapezoid rule."""
        v = self.volume(side)[self.at(t)]
        w = np.asarray(kernel(self.grid.nodes), dtype=float)
        g = v * w
        return self.grid.h * (g.sum(axis=-1) - 0.5 * (g[..., 0] + g[..., -1]))


def solve_limit(
    model: ModelSpec,
    grid: LimitGrid,
    dt: float,
    T: float,
    seeds=0,
    snapshot_times=None,
    increments: np.ndarray | None = None,
) -> LimitSeries:
    """Integrate one path per seed on [0, T] with step dt.

    ``increments`` (R, steps, 4) overrides the seeded Brownian increments,
    which is how dyadic refinement studies share one driving path.
    """
    seeds = (seeds,) if np.isscalar(seeds) else tuple(seeds)
    steps = int(round(T / dt))
    if steps and abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a multiple of dt")
    snaps = np.asarray([0.0, T] if snapshot_times is None else snapshot_times, dtype=float)
    snaps = np.unique(np.concatenate([[0.0], snaps]))
    snap_steps = np.rint(snaps / dt).astype(int) if steps else np.zeros(snaps.size, int)
    if steps and np.any(np.abs(snap_steps * dt - snaps) > 1e-9):
        raise ValueError("snapshot times must be multiples of dt")
    R = len(seeds)
    if increments is None:
        incr = np.stack([brownian_increments(s, steps, dt) for s in seeds]) if steps else np.zeros((R, 0, 4))
    else:
        incr = np.asarray(increments, dtype=float)
        if incr.shape != (R, steps, 4):
            raise ValueError(f"increments must have shape {(R, steps, 4)}, got {incr.shape}")

    band = _Band(model, grid)
    state = initial_state(model, grid, R, band)
    out = {k: [] for k in ("B", "A", "Yb", "Ya", "vb", "va")}
    crossing = np.full(R, np.nan)

    def record(s: LimitState):
        for k in out:
            out[k].append(getattr(s, k).copy())

    j = 0
    if snap_steps[0] == 0:
        record(state)
        j = 1
    for i in range(steps):
        state = em_step(state, dt, incr[:, i, :], model, grid, band, inplace=True)
        crossed = (state.A < state.B) & np.isnan(crossing)
        crossing[crossed] = state.t
        while j < snap_steps.size and snap_steps[j] == i + 1:
            record(state)
            j += 1
    return LimitSeries(
        times=snaps, grid=grid, seeds=seeds, dt=dt, crossing=crossing,
        **{k: np.stack(v) for k, v in out.items()},
    )


def relative_volume(series: LimitSeries, side: str, x_rel: np.ndarray) -> np.ndarray:
    """U(t, x) = v(t, x + P_t) by linear interpolation; shape (S, R, len(x_rel))."""
    x_rel = np.asarray(x_rel, dtype=float)
    nodes = series.grid.nodes
    P = series.prices(side)
    v = series.volume(side)
    out = np.empty(P.shape + x_rel.shape)
    for s in range(P.shape[0]):
        for r in range(P.shape[1]):
            xs = x_rel + P[s, r]
            if xs.min() < nodes[0] - 1e-12 or xs.max() > nodes[-1] + 1e-12:
                raise GridBreach(f"shifted grid leaves [{nodes[0]}, {nodes[-1]}]")
            out[s, r] = np.interp(xs, nodes, v[s, r])
    return out


def relative_spde(model: ModelSpec, side: str, x_rel: np.ndarray, dt: float, T: float,
                  increments: np.ndarray, P0: float | None = None) -> np.ndarray:
    """Direct Euler-Maruyama solve of the relative-volume SPDE on a uniform grid x_rel.

    dU = [E w^P f^P - E w^C f^C U + b DU + (1/2)|sigma_side|^2 D^2 U] dt
         + DU sigma_side . dW~ + sqrt(2) E w^N f^N dW_side,

    with D, D^2 central differences and U held at its initial values at the two
    boundary nodes.  Only state-free price laws are supported (b, sigma
    constant).  ``increments`` is one path's (steps, 4) array.  Returns U(T).
    """
    law = model.moves.law
    if not getattr(law, "state_free", False):
        raise ValueError("the direct relative solver supports state-free price laws only")
    x = np.asarray(x_rel, dtype=float)
    h = x[1] - x[0]
    ic = model.initial
    P0 = (ic.B0 if side == "bid" else ic.A0) if P0 is None else P0
    i = 0 if side == "bid" else 1
    bb, ba, S = model.moves.coefficients(0.0, 1.0, 0.0, 0.0)
    b = float(bb if i == 0 else ba)
    s_row = np.asarray(S)[i]
    sf = model.flow.side(side)
    gP = sf.place.size.mean * sf.place.location.pdf(x)
    gC = sf.cancel.size.mean * sf.cancel.location.pdf(x)
    gN = SQRT2 * sf.noise.size.mean * sf.noise.location.pdf(x)
    U = np.asarray(ic.profile(side)(x + P0), dtype=float).copy()
    col = 2 if side == "bid" else 3
    half_var = 0.5 * float(s_row @ s_row)
    for k in range(increments.shape[0]):
        dW = increments[k]
        D = np.zeros_like(U)
        D2 = np.zeros_like(U)
        D[1:-1] = (U[2:] - U[:-2]) / (2 * h)
        D2[1:-1] = (U[2:] - 2 * U[1:-1] + U[:-2]) / (h * h)
        dU = (gP - gC * U + b * D + half_var * D2) * dt + D * float(s_row @ dW[:2]) + gN * dW[col]
        dU[0] = dU[-1] = 0.0
        U = U + dU
    return U


def frozen_ode_solution(model: ModelSpec, side: str, x: np.ndarray, t: float) -> np.ndarray:
    """Closed form of the noise-free volume equation at a frozen price.

    v(t, x) = v0 e^{-ct} + (p/c)(1 - e^{-ct}) with c = E[w^C] f^C(x - P),
    p = E[w^P] f^P(x - P); where c = 0 it reduces to v0 + p t.
    """
    ic = model.initial
    P = ic.B0 if side == "bid" else ic.A0
    sf = model.flow.side(side)
    rel = np.asarray(x, dtype=float) - P
    c = sf.cancel.size.mean * sf.cancel.location.pdf(rel)
    p = sf.place.size.mean * sf.place.location.pdf(rel)
    v0 = np.asarray(ic.profile(side)(x), dtype=float)
    e = np.exp(-c * t)
    with np.errstate(divide="ignore", invalid="ignore"):
        relax = np.where(c > 0, (p / np.where(c > 0, c, 1.0)) * (1.0 - e), p * t)
    return v0 * e + relax


def is_frozen(model: ModelSpec) -> bool:
    return isinstance(model.moves.law, FrozenPrice)
