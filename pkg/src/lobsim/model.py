"""Model ingredients: scaling constants, order-flow laws, price-move laws, initial data.

Prices live on the tick lattice ``x_j = j * dx``.  All densities, kernels and
profiles are vectorised callables so the same objects drive the event engine
(scalar calls) and the limit solver (batched calls).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import integrate, special

from .errors import InfeasibleMoments

SIDES = ("bid", "ask")


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingParams:
    n: int
    lam: float  # passive arrivals per side per unit time
    mu: float  # active arrivals per unit time
    dx: float  # tick size
    dv: float  # per-order volume impact

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"scale index must be a positive integer, got {self.n!r}")

    @property
    def dv_over_dx(self) -> float:
        return self.dv / self.dx

    @property
    def sqrt_dv(self) -> float:
        return math.sqrt(self.dv)


def derive_scaling(n: int, *, lam: float | None = None, mu: float | None = None) -> ScalingParams:
    """Scaling constants of the n-th model: lam = n**2, mu = n, dx = n**-1/2, dv = n**-2.

    ``lam`` / ``mu`` overrides exist only to build degenerate test cases.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    return ScalingParams(
        n=n,
        lam=float(n * n) if lam is None else float(lam),
        mu=float(n) if mu is None else float(mu),
        dx=1.0 / math.sqrt(n),
        dv=1.0 / (n * n),
    )


def snap_to_grid(price: float, params: ScalingParams) -> int:
    """Tick index ``floor(price / dx)``.

    Quotients within 1e-9 (relative) of an integer snap to it so that
    ``0.3`` on a ``0.1`` grid lands on tick 3 rather than 2.
    """
    q = price / params.dx
    r = round(q)
    if abs(q - r) <= 1e-9 * max(1.0, abs(q)):
        return int(r)
    return int(math.floor(q))


# ---------------------------------------------------------------------------
# order sizes
# ---------------------------------------------------------------------------

_SIZE_PARAMS = {
    "zero": (),
    "constant": ("value",),
    "uniform": ("low", "high"),
    "beta": ("a", "b"),
    "exponential": ("scale",),
    "gamma": ("shape", "scale"),
}


@dataclass(frozen=True)
class SizeDist:
    """Law of an order-size mark omega."""

    family: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in _SIZE_PARAMS:
            raise ValueError(f"unknown size family {self.family!r}")
        missing = [k for k in _SIZE_PARAMS[self.family] if k not in self.params]
        if missing:
            raise ValueError(f"size family {self.family!r} needs {missing}")

    def _p(self, key):
        return float(self.params[key])

    def support(self) -> tuple[float, float]:
        f = self.family
        if f == "zero":
            return (0.0, 0.0)
        if f == "constant":
            return (self._p("value"), self._p("value"))
        if f == "uniform":
            return (self._p("low"), self._p("high"))
        if f == "beta":
            return (0.0, 1.0)
        return (0.0, math.inf)

    def raw_moment(self, k: int) -> float:
        f = self.family
        if k == 0:
            return 1.0
        if f == "zero":
            return 0.0
        if f == "constant":
            return self._p("value") ** k
        if f == "uniform":
            lo, hi = self._p("low"), self._p("high")
            if hi == lo:
                return lo**k
            return (hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * (hi - lo))
        if f == "beta":
            a, b = self._p("a"), self._p("b")
            return math.prod((a + r) / (a + b + r) for r in range(k))
        if f == "exponential":
            return math.factorial(k) * self._p("scale") ** k
        shape, scale = self._p("shape"), self._p("scale")
        return scale**k * math.exp(special.gammaln(shape + k) - special.gammaln(shape))

    @property
    def mean(self) -> float:
        return self.raw_moment(1)

    @property
    def second_moment(self) -> float:
        return self.raw_moment(2)

    @property
    def fourth_moment(self) -> float:
        return self.raw_moment(4)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        f = self.family
        if f == "zero":
            return np.zeros(size)
        if f == "constant":
            return np.full(size, self._p("value"))
        if f == "uniform":
            return rng.uniform(self._p("low"), self._p("high"), size)
        if f == "beta":
            return rng.beta(self._p("a"), self._p("b"), size)
        if f == "exponential":
            return rng.exponential(self._p("scale"), size)
        return rng.gamma(self._p("shape"), self._p("scale"), size)

    def validate(self) -> list[str]:
        errs = []
        for k, v in self.params.items():
            if not math.isfinite(float(v)):
                errs.append(f"parameter {k} must be finite")
        if errs:
            return errs
        f = self.family
        if f == "uniform" and self._p("high") < self._p("low"):
            errs.append("uniform needs low <= high")
        if f == "beta" and (self._p("a") <= 0 or self._p("b") <= 0):
            errs.append("beta needs a > 0 and b > 0")
        if f in ("exponential", "gamma") and self._p("scale") <= 0:
            errs.append("scale must be positive")
        if f == "gamma" and self._p("shape") <= 0:
            errs.append("gamma needs shape > 0")
        if not math.isfinite(self.fourth_moment):
            errs.append("fourth moment must be finite")
        return errs


# ---------------------------------------------------------------------------
# location densities
# ---------------------------------------------------------------------------

_DENSITY_KINDS = ("uniform", "triangular", "truncated-gaussian", "piecewise-linear-table")


@dataclass(frozen=True)
class EventDensity:
    """Density of a relative placement level pi, supported in ``support`` within [-M, M].

    params by kind: triangular ``mode``; truncated-gaussian ``mean``, ``sd``;
    piecewise-linear-table ``xs``, ``ys`` (linear interpolation, zero outside).
    """

    kind: str
    support: tuple[float, float]
    params: Mapping[str, object] = field(default_factory=dict)
    M: float = 1.0

    def __post_init__(self):
        if self.kind not in _DENSITY_KINDS:
            raise ValueError(f"unknown density kind {self.kind!r}")
        lo, hi = self.support
        object.__setattr__(self, "support", (float(lo), float(hi)))
        if self.kind == "piecewise-linear-table":
            xs = np.asarray(self.params["xs"], dtype=float)
            ys = np.asarray(self.params["ys"], dtype=float)
            object.__setattr__(self, "support", (float(xs[0]), float(xs[-1])))
            self.__dict__["_xs"] = xs
            self.__dict__["_ys"] = ys
            # cumulative mass at the table nodes
            self.__dict__["_cum"] = np.concatenate(
                [[0.0], np.cumsum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs))]
            )

    # -- truncated gaussian helpers
    def _tg(self):
        mu, sd = float(self.params["mean"]), float(self.params["sd"])
        lo, hi = self.support
        a, b = special.ndtr((lo - mu) / sd), special.ndtr((hi - mu) / sd)
        return mu, sd, a, b

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))  # closed support, robust to rounding of x - P
        inside = (x >= lo - tol) & (x <= hi + tol)
        if self.kind == "uniform":
            out = np.where(inside, 1.0 / (hi - lo), 0.0)
        elif self.kind == "triangular":
            c = float(self.params["mode"])
            left = 2.0 * (x - lo) / ((hi - lo) * (c - lo)) if c > lo else np.full_like(x, 2.0 / (hi - lo))
            right = 2.0 * (hi - x) / ((hi - lo) * (hi - c)) if hi > c else np.full_like(x, 2.0 / (hi - lo))
            out = np.where(inside, np.where(x < c, left, right), 0.0)
        elif self.kind == "truncated-gaussian":
            mu, sd, a, b = self._tg()
            z = (x - mu) / sd
            out = np.where(inside, np.exp(-0.5 * z * z) / (sd * math.sqrt(2 * math.pi) * (b - a)), 0.0)
        else:
            out = np.interp(x, self._xs, self._ys, left=0.0, right=0.0)
        return out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        xc = np.clip(x, lo, hi)
        if self.kind == "uniform":
            out = (xc - lo) / (hi - lo)
        elif self.kind == "triangular":
            c = float(self.params["mode"])
            with np.errstate(divide="ignore", invalid="ignore"):
                left = (xc - lo) ** 2 / ((hi - lo) * (c - lo)) if c > lo else np.zeros_like(xc)
                right = 1.0 - (hi - xc) ** 2 / ((hi - lo) * (hi - c)) if hi > c else np.ones_like(xc)
            out = np.where(xc < c, left, right)
        elif self.kind == "truncated-gaussian":
            mu, sd, a, b = self._tg()
            out = (special.ndtr((xc - mu) / sd) - a) / (b - a)
        else:
            xs, ys, cum = self._xs, self._ys, self._cum
            i = np.clip(np.searchsorted(xs, xc, side="right") - 1, 0, len(xs) - 2)
            h = xc - xs[i]
            slope = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
            out = cum[i] + ys[i] * h + 0.5 * slope * h * h
        return np.where(x < lo, 0.0, np.where(x > hi, 1.0, out))

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        lo, hi = self.support
        if self.kind == "uniform":
            return lo + u * (hi - lo)
        if self.kind == "triangular":
            c = float(self.params["mode"])
            fc = (c - lo) / (hi - lo)
            return np.where(
                u < fc,
                lo + np.sqrt(u * (hi - lo) * (c - lo)),
                hi - np.sqrt((1.0 - u) * (hi - lo) * (hi - c)),
            )
        if self.kind == "truncated-gaussian":
            mu, sd, a, b = self._tg()
            x = mu + sd * special.ndtri(a + u * (b - a))
            return np.clip(x, lo, hi)
        xs, ys, cum = self._xs, self._ys, self._cum
        target = u * cum[-1]
        i = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, len(xs) - 2)
        r = target - cum[i]
        slope = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
        y0 = ys[i]
        # solve y0*h + slope*h^2/2 = r on the segment
        disc = np.sqrt(np.maximum(y0 * y0 + 2.0 * slope * r, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            h = np.where(np.abs(slope) > 1e-14, (disc - y0) / slope, r / np.where(y0 > 0, y0, 1.0))
        return np.clip(xs[i] + h, lo, hi)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.ppf(rng.random(size))

    def mass(self) -> float:
        lo, hi = self.support
        pts = None
        if self.kind == "triangular":
            pts = [float(self.params["mode"])]
        elif self.kind == "piecewise-linear-table":
            pts = list(self._xs[1:-1])
        val, _ = integrate.quad(lambda t: float(self.pdf(t)), lo, hi, points=pts, epsabs=1e-14, epsrel=1e-13, limit=200)
        return val

    def lipschitz(self) -> float:
        """Lipschitz constant of the density restricted to [-M, M] (inf if it jumps inside)."""
        lo, hi = self.support
        M = self.M
        tol = 1e-12
        edge_jump = lambda x0, inner: inner and float(self.pdf(x0)) > 0.0  # noqa: E731
        jumps_lo = lo > -M + tol
        jumps_hi = hi < M - tol
        if self.kind == "uniform":
            return math.inf if (jumps_lo or jumps_hi) else 0.0
        if self.kind == "triangular":
            c = float(self.params["mode"])
            height = 2.0 / (hi - lo)
            slopes = []
            if c > lo:
                slopes.append(height / (c - lo))
            elif jumps_lo:
                return math.inf
            if hi > c:
                slopes.append(height / (hi - c))
            elif jumps_hi:
                return math.inf
            return max(slopes) if slopes else 0.0
        if self.kind == "truncated-gaussian":
            mu, sd, a, b = self._tg()
            if edge_jump(lo, jumps_lo) or edge_jump(hi, jumps_hi):
                return math.inf
            # |pdf'| peaks at mu +- sd; otherwise at the support end nearest to it
            cands = [x for x in (mu - sd, mu + sd) if lo <= x <= hi] + [lo, hi]
            z = (np.asarray(cands) - mu) / sd
            d = np.abs(z) * np.exp(-0.5 * z * z) / (sd * sd * math.sqrt(2 * math.pi) * (b - a))
            return float(d.max())
        xs, ys = self._xs, self._ys
        if (jumps_lo and ys[0] > 0) or (jumps_hi and ys[-1] > 0):
            return math.inf
        return float(np.max(np.abs(np.diff(ys) / np.diff(xs))))

    def validate(self) -> list[str]:
        errs = []
        lo, hi = self.support
        if not (hi > lo):
            errs.append("support must have positive length")
            return errs
        if lo < -self.M - 1e-12 or hi > self.M + 1e-12:
            errs.append(f"support {self.support} not inside [-M, M] with M={self.M}")
        if self.kind == "triangular" and not (lo <= float(self.params["mode"]) <= hi):
            errs.append("triangular mode must lie in the support")
        if self.kind == "truncated-gaussian" and float(self.params["sd"]) <= 0:
            errs.append("truncated-gaussian needs sd > 0")
        if self.kind == "piecewise-linear-table":
            if np.any(np.diff(self._xs) <= 0):
                errs.append("table xs must be strictly increasing")
            if np.any(self._ys < 0):
                errs.append("table ys must be non-negative")
        if errs:
            return errs
        if abs(self.mass() - 1.0) > 1e-10:
            errs.append(f"density integrates to {self.mass():.12g}, not 1")
        if not math.isfinite(self.lipschitz()):
            errs.append("density is not Lipschitz on [-M, M]")
        return errs

    @classmethod
    def table(cls, xs: Sequence[float], ys: Sequence[float], M: float = 1.0) -> "EventDensity":
        """Piecewise-linear density from unnormalised node values."""
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        area = float(np.sum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs)))
        return cls("piecewise-linear-table", (xs[0], xs[-1]), {"xs": tuple(xs), "ys": tuple(ys / area)}, M)


# ---------------------------------------------------------------------------
# order flow
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EventFlow:
    size: SizeDist
    location: EventDensity


@dataclass(frozen=True)
class SideFlow:
    cancel: EventFlow
    place: EventFlow
    noise: EventFlow


@dataclass(frozen=True)
class OrderFlowSpec:
    bid: SideFlow
    ask: SideFlow
    M: float = 1.0

    def side(self, side: str) -> SideFlow:
        return self.bid if side == "bid" else self.ask

    def validate(self) -> list[tuple[str, str]]:
        errs = []
        for s in SIDES:
            sf = self.side(s)
            for kind in ("cancel", "place", "noise"):
                ev = getattr(sf, kind)
                path = f"model.flow.{s}.{kind}"
                for e in ev.size.validate():
                    errs.append((path + ".size", e))
                lo, hi = ev.size.support()
                if kind == "cancel" and (lo < 0 or hi > 1):
                    errs.append((path + ".size", f"cancellation proportions must lie in [0, 1], support is [{lo}, {hi}]"))
                if kind != "cancel" and lo < 0:
                    errs.append((path + ".size", f"sizes must be non-negative, support is [{lo}, {hi}]"))
                if ev.location.M != self.M:
                    errs.append((path + ".location", "density M differs from model M"))
                for e in ev.location.validate():
                    errs.append((path + ".location", e))
        return errs


# ---------------------------------------------------------------------------
# kernels (volume-statistic weights and test functions)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Kernel:
    """Smooth compactly supported function on [center - radius, center + radius].

    ``bump``: Gaussian of width ``width`` times the C-infinity cutoff
    exp(1 - 1/(1 - r^2)); ``poly``: (1 - r^2)**power.
    """

    kind: str = "bump"
    center: float = 0.0
    width: float = 0.25
    radius: float = 0.75
    scale: float = 1.0
    power: int = 4

    def __post_init__(self):
        if self.kind not in ("bump", "poly", "zero"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        r = (x - self.center) / self.radius
        inside = np.abs(r) < 1.0
        r2 = np.where(inside, r * r, 0.0)
        if self.kind == "bump":
            z = (x - self.center) / self.width
            val = np.exp(-0.5 * z * z) * np.exp(1.0 - 1.0 / (1.0 - r2))
        else:
            val = (1.0 - r2) ** self.power
        return np.where(inside, self.scale * val, 0.0)

    @property
    def support(self) -> tuple[float, float]:
        return (self.center - self.radius, self.center + self.radius)

    def integral(self) -> float:
        lo, hi = self.support
        return integrate.quad(lambda t: float(self(t)), lo, hi, epsabs=1e-13, limit=200)[0]

    def derivative_bound(self, samples: int = 20001) -> float:
        lo, hi = self.support
        x = np.linspace(lo, hi, samples)
        return float(np.max(np.abs(np.gradient(self(x), x))))

    def normalized(self) -> "Kernel":
        from dataclasses import replace

        return replace(self, scale=self.scale / self.integral())


# ---------------------------------------------------------------------------
# price moves
# ---------------------------------------------------------------------------


class FrozenPrice:
    """b = 0, sigma = 0: prices never move."""

    state_free = True

    def drift(self, B, A, Yb, Ya):
        z = np.zeros(np.broadcast(np.asarray(B), np.asarray(A)).shape)
        return z, z.copy()

    def diffusion(self, B, A, Yb, Ya):
        shape = np.broadcast(np.asarray(B), np.asarray(A)).shape
        return np.zeros(shape + (2, 2))

    def __eq__(self, other):
        return type(other) is type(self)

    def __hash__(self):
        return hash(type(self))


@dataclass(frozen=True)
class ConstantMoves:
    """State-independent drift and diffusion; rows of sigma are (bid, ask)."""

    state_free = True

    b_bid: float = 0.0
    b_ask: float = 0.0
    s_bid: float = 0.3
    s_ask: float = 0.3
    rho: float = 0.0

    def drift(self, B, A, Yb, Ya):
        shape = np.broadcast(np.asarray(B), np.asarray(A)).shape
        return np.full(shape, self.b_bid), np.full(shape, self.b_ask)

    def diffusion(self, B, A, Yb, Ya):
        shape = np.broadcast(np.asarray(B), np.asarray(A)).shape
        c = math.sqrt(max(0.0, 1.0 - self.rho**2))
        S = np.array([[self.s_bid, 0.0], [self.rho * self.s_ask, c * self.s_ask]])
        return np.broadcast_to(S, shape + (2, 2)).copy()


@dataclass(frozen=True)
class VolumeImbalance:
    """Both prices drift towards the heavier side of the book.

    With I = tanh((Yb - Ya) / scale): b_bid = b_ask = drift * I and both
    volatilities equal vol * (1 + vol_mod * I**2); rho correlates the moves.
    """

    drift_coef: float = 0.2
    vol: float = 0.3
    vol_mod: float = 0.5
    rho: float = 0.0
    scale: float = 1.0

    def _imbalance(self, Yb, Ya):
        return np.tanh((np.asarray(Yb, dtype=float) - np.asarray(Ya, dtype=float)) / self.scale)

    def drift(self, B, A, Yb, Ya):
        imb = self._imbalance(Yb, Ya)
        shape = np.broadcast(np.asarray(B), np.asarray(A), imb).shape
        b = np.broadcast_to(self.drift_coef * imb, shape)
        return b.copy(), b.copy()

    def diffusion(self, B, A, Yb, Ya):
        imb = self._imbalance(Yb, Ya)
        shape = np.broadcast(np.asarray(B), np.asarray(A), imb).shape
        s = np.broadcast_to(self.vol * (1.0 + self.vol_mod * imb * imb), shape)
        c = math.sqrt(max(0.0, 1.0 - self.rho**2))
        out = np.zeros(shape + (2, 2))
        out[..., 0, 0] = s
        out[..., 1, 0] = self.rho * s
        out[..., 1, 1] = c * s
        return out


PRESETS: dict[str, Callable[..., object]] = {
    "frozen": FrozenPrice,
    "constant": ConstantMoves,
    "volume-imbalance": VolumeImbalance,
}


@dataclass(frozen=True)
class PriceMoveSpec:
    """Drift b = (b_bid, b_ask) and diffusion sigma (2x2, rows bid/ask) of the price chain.

    ``law`` supplies ``drift(B, A, Yb, Ya)`` and ``diffusion(B, A, Yb, Ya)``;
    ``eps`` is the spread guard (None means two ticks of the current grid).
    """

    law: object
    phi_b: Kernel
    phi_a: Kernel
    eps: float | None = None
    coupling: str = "independent"

    def guard(self, params: ScalingParams) -> float:
        # never below one tick: a one-tick spread must block the crossing move
        eps = 2.0 * params.dx if self.eps is None else float(self.eps)
        return max(eps, params.dx)

    def kernel(self, side: str) -> Kernel:
        return self.phi_b if side == "bid" else self.phi_a

    def coefficients(self, B, A, Yb, Ya):
        bb, ba = self.law.drift(B, A, Yb, Ya)
        S = np.asarray(self.law.diffusion(B, A, Yb, Ya), dtype=float)
        return np.asarray(bb, dtype=float), np.asarray(ba, dtype=float), S

    def validate(self) -> list[tuple[str, str]]:
        errs = []
        if self.coupling not in ("independent", "common"):
            errs.append(("model.price_moves.coupling", "must be 'independent' or 'common'"))
        if self.eps is not None and self.eps < 0:
            errs.append(("model.price_moves.eps", "spread guard must be non-negative"))
        probe = [(0.0, 1.0, 0.0, 0.0), (-1.0, 1.0, 2.0, -1.0), (0.0, 0.5, 5.0, 5.0)]
        for state in probe:
            bb, ba, S = self.coefficients(*state)
            if not (np.all(np.isfinite(bb)) and np.all(np.isfinite(ba)) and np.all(np.isfinite(S))):
                errs.append(("model.price_moves", f"non-finite coefficients at {state}"))
                break
            C = S @ S.T
            if not np.allclose(C, C.T) or np.min(np.linalg.eigvalsh(C)) < -1e-12:
                errs.append(("model.price_moves", f"sigma sigma' not PSD at {state}"))
                break
        for name, k in (("phi_b", self.phi_b), ("phi_a", self.phi_a)):
            if k.kind != "zero" and not (k.radius > 0 and math.isfinite(k.radius)):
                errs.append((f"model.kernels.{name}", "kernel needs a finite positive radius"))
        return errs


class SidePmf(NamedTuple):
    down: float
    stay: float
    up: float
    clamped: bool

    def as_array(self) -> np.ndarray:
        return np.array([self.down, self.stay, self.up])


def _moment_pmf(m: float, s2: float) -> tuple[float, float, float, bool]:
    """pmf on (-1, 0, 1) with mean m and second moment s2, clamped at zero."""
    if not (math.isfinite(m) and math.isfinite(s2)):
        raise InfeasibleMoments(f"non-finite moments (mean={m}, second moment={s2})")
    if s2 > 1.0 + 1e-12:
        raise InfeasibleMoments(f"move probability {s2:.6g} exceeds 1; shrink sigma or raise n")
    up = 0.5 * (s2 + m)
    down = 0.5 * (s2 - m)
    clamped = False
    if up < 0.0 or down < 0.0:
        clamped = True
        up, down = max(up, 0.0), max(down, 0.0)
    stay = max(0.0, 1.0 - up - down)
    total = up + down + stay
    return down / total, stay / total, up / total, clamped


def price_move_pmf(state, side: str, spec: PriceMoveSpec, params: ScalingParams) -> SidePmf:
    """Marginal law of the next tick move of one price.

    Matches mean b/sqrt(n) and variance (sigma sigma')_ii whenever feasible.
    When the spread is within the guard the crossing direction is removed and
    the remaining mass renormalised (``clamped`` reports it).
    """
    B, A, Yb, Ya = (float(v) for v in state)
    bb, ba, S = spec.coefficients(B, A, Yb, Ya)
    i = 0 if side == "bid" else 1
    b = float(bb if i == 0 else ba)
    var = float((S @ S.T)[i, i])
    m = b / math.sqrt(params.n)
    down, stay, up, clamped = _moment_pmf(m, var + m * m)
    if A - B <= spec.guard(params) + 1e-12:
        if side == "bid" and up > 0.0:
            up, clamped = 0.0, True
        elif side == "ask" and down > 0.0:
            down, clamped = 0.0, True
        total = up + down + stay
        down, stay, up = down / total, stay / total, up / total
    return SidePmf(down, stay, up, clamped)


def joint_move_pmf(state, spec: PriceMoveSpec, params: ScalingParams) -> tuple[np.ndarray, bool]:
    """3x3 joint pmf of (xi_bid, xi_ask) over {-1, 0, 1}^2 and a clamp flag.

    ``independent`` coupling multiplies the marginals.  ``common`` realises
    the off-diagonal covariance by mixing a shared +-1 shock (weight w) with
    independent idiosyncratic moves.
    """
    B, A, Yb, Ya = (float(v) for v in state)
    if spec.coupling == "independent":
        pb = price_move_pmf(state, "bid", spec, params)
        pa = price_move_pmf(state, "ask", spec, params)
        return np.outer(pb.as_array(), pa.as_array()), pb.clamped or pa.clamped

    bb, ba, S = spec.coefficients(B, A, Yb, Ya)
    C = S @ S.T
    rn = math.sqrt(params.n)
    mb, ma = float(bb) / rn, float(ba) / rn
    Sb, Sa = C[0, 0] + mb * mb, C[1, 1] + ma * ma
    c = float(C[0, 1])
    P = np.zeros((3, 3))
    clamped = False
    if c == 0.0:
        db, sb, ub, cb = _moment_pmf(mb, Sb)
        da, sa, ua, ca = _moment_pmf(ma, Sa)
        P = np.outer([db, sb, ub], [da, sa, ua])
        clamped = cb or ca
    else:
        kappa = 1.0 if c > 0 else -1.0
        mm = mb * ma
        # kappa w^2 - (kappa + c + mm) w + c = 0, smallest root in [0, 1)
        roots = np.roots([kappa, -(kappa + c + mm), c])
        roots = sorted(r.real for r in roots if abs(r.imag) < 1e-12 and -1e-15 <= r.real < 1.0)
        if not roots:
            raise InfeasibleMoments(f"no common-shock weight realises covariance {c:.6g}")
        w = max(roots[0], 0.0)
        hb = _idio(mb, Sb, w)
        ha = _idio(ma, Sa, w)
        P = (1.0 - w) * np.outer(hb, ha)
        P[2, 2 if kappa > 0 else 0] += 0.5 * w
        P[0, 0 if kappa > 0 else 2] += 0.5 * w
    if A - B <= spec.guard(params) + 1e-12:
        removed = P[2, :].sum() + P[:, 0].sum() - P[2, 0]
        if removed > 0.0:
            clamped = True
            P[2, :] = 0.0
            P[:, 0] = 0.0
            P /= P.sum()
    return P, clamped


def _idio(m, s2, w):
    if w >= 1.0:
        raise InfeasibleMoments("common-shock weight reached 1")
    mu, sec = m / (1.0 - w), (s2 - w) / (1.0 - w)
    probs = np.array([0.5 * (sec - mu), 1.0 - sec, 0.5 * (sec + mu)])
    if np.any(probs < -1e-12) or np.any(probs > 1.0 + 1e-12):
        raise InfeasibleMoments(
            f"common coupling infeasible: idiosyncratic mean {mu:.4g}, second moment {sec:.4g}"
        )
    probs = np.clip(probs, 0.0, 1.0)
    return probs / probs.sum()


def sample_index(pmf, u: float) -> int:
    """Inverse-cdf draw of an index from a flat pmf."""
    return int(min(np.searchsorted(np.cumsum(pmf), u, side="right"), len(pmf) - 1))


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantProfile:
    value: float = 0.0

    def __call__(self, x):
        return np.full(np.shape(x), float(self.value))


@dataclass(frozen=True)
class BumpProfile:
    """base + amp * exp(-(x - center)^2 / (2 width^2))."""

    base: float = 1.0
    amp: float = 0.5
    center: float = 0.0
    width: float = 0.5

    def __call__(self, x):
        z = (np.asarray(x, dtype=float) - self.center) / self.width
        return self.base + self.amp * np.exp(-0.5 * z * z)


@dataclass(frozen=True)
class TableProfile:
    """Linear interpolation through (xs, ys), flat beyond the ends."""

    xs: tuple
    ys: tuple

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.xs, self.ys)


@dataclass(frozen=True)
class InitialCondition:
    B0: float
    A0: float
    v_b0: Callable
    v_a0: Callable

    def profile(self, side: str) -> Callable:
        return self.v_b0 if side == "bid" else self.v_a0

    def validate(self, window: tuple[float, float] = (-5.0, 5.0)) -> list[tuple[str, str]]:
        errs = []
        if not (math.isfinite(self.B0) and math.isfinite(self.A0)):
            errs.append(("model.initial", "initial prices must be finite"))
        elif self.B0 > self.A0:
            errs.append(("model.initial", f"B0={self.B0} exceeds A0={self.A0}"))
        lo = min(self.B0, window[0]) - 2.0
        hi = max(self.A0, window[1]) + 2.0
        x = np.linspace(lo, hi, 4001)
        for s in SIDES:
            v = np.asarray(self.profile(s)(x), dtype=float)
            if v.shape != x.shape or not np.all(np.isfinite(v)):
                errs.append((f"model.initial.{s}", "profile must be finite and vectorised"))
        return errs


@dataclass(frozen=True)
class ModelSpec:
    """Everything a simulation or limit solve needs apart from n, seed and horizon."""

    flow: OrderFlowSpec
    moves: PriceMoveSpec
    initial: InitialCondition

    def validate(self) -> list[tuple[str, str]]:
        return self.flow.validate() + self.moves.validate() + self.initial.validate()


def default_kernel(center: float = 0.0, width: float = 0.25, radius: float = 0.75) -> Kernel:
    return Kernel("bump", center=center, width=width, radius=radius).normalized()


def default_model(law: object | None = None, coupling: str = "independent", M: float = 1.0) -> ModelSpec:
    """A small, fully feasible two-sided model used by examples and tests."""
    tg = lambda mean, sd: EventDensity("truncated-gaussian", (-M, M), {"mean": mean, "sd": sd}, M)  # noqa: E731
    side = SideFlow(
        cancel=EventFlow(SizeDist("uniform", {"low": 0.0, "high": 1.0}), tg(0.0, 0.5)),
        place=EventFlow(SizeDist("gamma", {"shape": 2.0, "scale": 0.5}), tg(0.2, 0.4)),
        noise=EventFlow(SizeDist("uniform", {"low": 0.5, "high": 1.5}), tg(0.0, 0.4)),
    )
    flow = OrderFlowSpec(side, side, M)
    moves = PriceMoveSpec(
        law=VolumeImbalance() if law is None else law,
        phi_b=default_kernel(),
        phi_a=default_kernel(),
        coupling=coupling,
    )
    init = InitialCondition(
        B0=0.0, A0=1.25,
        v_b0=BumpProfile(base=1.0, amp=0.5, center=-0.3, width=0.5),
        v_a0=BumpProfile(base=1.0, amp=0.5, center=1.55, width=0.5),
    )
    return ModelSpec(flow, moves, init)


def imbalance_model() -> ModelSpec:
    """State-dependent preset: drift and volatility driven by the book imbalance, common price shocks."""
    return default_model(VolumeImbalance(drift_coef=0.1, vol=0.4, vol_mod=0.5, rho=0.75), coupling="common")
