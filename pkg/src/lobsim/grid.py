"""Step-function volume densities on the tick lattice.

A :class:`StepField` is conceptually a map tick -> value over all of Z that
reads the initial profile (sampled at the tick midpoint) wherever it has not
been written.  Internally it keeps a dense window that grows on demand, plus a
``touched`` mask recording every tick ever written.
"""
from __future__ import annotations

from typing import Callable

import numpy as np


class StepField:
    __slots__ = ("dx", "v0", "origin", "vals", "touched")

    def __init__(self, dx: float, v0: Callable, lo: int = 0, hi: int = 0):
        self.dx = float(dx)
        self.v0 = v0
        self.origin = int(lo)
        self.vals = self._fresh(lo, hi)
        self.touched = np.zeros(self.vals.size, dtype=np.bool_)

    def _fresh(self, lo: int, hi: int) -> np.ndarray:
        ticks = np.arange(lo, hi + 1)
        return np.asarray(self.v0((ticks + 0.5) * self.dx), dtype=np.float64).copy()

    @property
    def end(self) -> int:
        """Last tick held in the window (inclusive)."""
        return self.origin + self.vals.size - 1

    def ensure(self, lo: int, hi: int) -> None:
        """Grow the window so that ticks lo..hi are addressable."""
        if lo >= self.origin and hi <= self.end:
            return
        pad = max(16, self.vals.size // 2)
        new_lo = min(lo - pad, self.origin) if lo < self.origin else self.origin
        new_hi = max(hi + pad, self.end) if hi > self.end else self.end
        left = self._fresh(new_lo, self.origin - 1) if new_lo < self.origin else np.empty(0)
        right = self._fresh(self.end + 1, new_hi) if new_hi > self.end else np.empty(0)
        self.vals = np.concatenate([left, self.vals, right])
        self.touched = np.concatenate(
            [np.zeros(left.size, np.bool_), self.touched, np.zeros(right.size, np.bool_)]
        )
        self.origin = new_lo

    def get(self, tick: int) -> float:
        if self.origin <= tick <= self.end:
            return float(self.vals[tick - self.origin])
        return float(self.v0((tick + 0.5) * self.dx))

    def window(self, lo: int, hi: int) -> np.ndarray:
        """Values at ticks lo..hi (inclusive), read-only view when in range."""
        self.ensure(lo, hi)
        return self.vals[lo - self.origin : hi - self.origin + 1]

    def set(self, tick: int, value: float) -> None:
        self.ensure(tick, tick)
        self.vals[tick - self.origin] = value
        self.touched[tick - self.origin] = True

    def copy(self) -> "StepField":
        out = StepField.__new__(StepField)
        out.dx, out.v0, out.origin = self.dx, self.v0, self.origin
        out.vals = self.vals.copy()
        out.touched = self.touched.copy()
        return out

    def sparse_items(self) -> tuple[np.ndarray, np.ndarray]:
        """(ticks, values) of every tick ever written, ascending."""
        idx = np.flatnonzero(self.touched)
        return idx + self.origin, self.vals[idx].copy()

    def pair(self, weights: np.ndarray, first_tick: int) -> float:
        """sum_k vals[first_tick + k] * weights[k]."""
        w = self.window(first_tick, first_tick + weights.size - 1)
        return float(w @ weights)

    def l2_sq(self, lo: int | None = None, hi: int | None = None) -> float:
        """dx * sum of squares over ticks lo..hi (default: the whole window)."""
        lo = self.origin if lo is None else lo
        hi = self.end if hi is None else hi
        w = self.window(lo, hi)
        return float(self.dx * (w @ w))

    def __repr__(self):
        return f"StepField(dx={self.dx:g}, ticks={self.origin}..{self.end}, touched={int(self.touched.sum())})"


def kernel_weights(kernel, dx: float) -> tuple[int, np.ndarray]:
    """Midpoint-rule weights phi((k + 1/2) dx) dx for the ticks k covering the kernel support.

    Returns the first relative tick and the weight vector; pairing a field at
    price tick P is ``field.pair(w, P + first)``.
    """
    lo, hi = kernel.support
    k0 = int(np.floor(lo / dx)) - 1
    k1 = int(np.ceil(hi / dx)) + 1
    ks = np.arange(k0, k1 + 1)
    return k0, np.asarray(kernel((ks + 0.5) * dx), dtype=float) * dx
