"""YAML experiment configuration: parsing, defaults and field-path validation.

Every section is optional; an empty file yields the default model with a
single n = 16 run.  See README for the schema.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ParseError, ValidationError
from .model import (
    PRESETS,
    BumpProfile,
    ConstantProfile,
    EventDensity,
    EventFlow,
    InitialCondition,
    Kernel,
    ModelSpec,
    OrderFlowSpec,
    PriceMoveSpec,
    SideFlow,
    SizeDist,
    TableProfile,
)

DEFAULTS = {
    "model": {
        "M": 1.0,
        "flow": {
            "bid": {
                "cancel": {"size": {"family": "uniform", "low": 0.0, "high": 1.0},
                           "location": {"kind": "truncated-gaussian", "mean": 0.0, "sd": 0.5}},
                "place": {"size": {"family": "gamma", "shape": 2.0, "scale": 0.5},
                          "location": {"kind": "truncated-gaussian", "mean": 0.2, "sd": 0.4}},
                "noise": {"size": {"family": "uniform", "low": 0.5, "high": 1.5},
                          "location": {"kind": "truncated-gaussian", "mean": 0.0, "sd": 0.4}},
            },
            "ask": "same-as-bid",
        },
        "price_moves": {"preset": "volume-imbalance", "params": {}, "coupling": "independent", "eps": None},
        "kernels": {
            "phi_b": {"kind": "bump", "center": 0.0, "width": 0.25, "radius": 0.75, "normalize": True},
            "phi_a": {"kind": "bump", "center": 0.0, "width": 0.25, "radius": 0.75, "normalize": True},
        },
        "initial": {
            "B0": 0.0,
            "A0": 1.25,
            "bid": {"profile": "bump", "base": 1.0, "amp": 0.5, "center": -0.3, "width": 0.5},
            "ask": {"profile": "bump", "base": 1.0, "amp": 0.5, "center": 1.55, "width": 0.5},
        },
    },
    "run": {"n_list": [16], "T": 1.0, "snapshots": None, "replications": 1, "seed": 0, "min_active": 0},
    "limit": {"h": 0.01, "margin": 2.0, "dt": None, "replications": None},
    "sweep": {"bootstrap": 1000, "alpha": 0.01, "test_kernels": None},
    "output": {"dir": None, "formats": ["csv", "book"]},
}

_SIZE_KEYS = {"zero": (), "constant": ("value",), "uniform": ("low", "high"), "beta": ("a", "b"),
              "exponential": ("scale",), "gamma": ("shape", "scale")}
_DENSITY_KEYS = {"uniform": (), "triangular": ("mode",), "truncated-gaussian": ("mean", "sd"),
                 "piecewise-linear-table": ("xs", "ys")}


@dataclass(frozen=True)
class RunConfig:
    n_list: tuple
    T: float
    snapshots: tuple
    replications: int
    seed: int
    min_active: int


@dataclass(frozen=True)
class LimitConfig:
    h: float
    margin: float
    dt: float
    replications: int


@dataclass(frozen=True)
class SweepConfig:
    bootstrap: int
    alpha: float
    test_kernels: tuple | None


@dataclass(frozen=True)
class OutputConfig:
    dir: str | None
    formats: tuple


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    run: RunConfig
    limit: LimitConfig
    sweep: SweepConfig
    output: OutputConfig
    raw: dict

    @property
    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _merge(base, over, path, errors):
    if over is None:
        return copy.deepcopy(base)
    if isinstance(base, dict) and isinstance(over, dict):
        for tag in ("family", "kind", "profile", "preset"):
            if tag in over and over[tag] != base.get(tag, over[tag]):
                return copy.deepcopy(over)  # a different family: defaults do not apply
        out = copy.deepcopy(base)
        for k, v in over.items():
            if k not in base:
                # free-form maps: distribution params, preset params, profile fields
                out[k] = copy.deepcopy(v)
            else:
                out[k] = _merge(base[k], v, f"{path}.{k}" if path else k, errors)
        return out
    return copy.deepcopy(over)


class _Collector:
    def __init__(self):
        self.errors: list[tuple[str, str]] = []

    def add(self, path, msg):
        self.errors.append((path, msg))

    def num(self, d, key, path, *, positive=False, nonneg=False, integer=False, default=None):
        if key not in d or d[key] is None:
            if default is not None:
                return default
            self.add(f"{path}.{key}", "required")
            return math.nan
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.add(f"{path}.{key}", f"expected a number, got {v!r}")
            return math.nan
        if integer and int(v) != v:
            self.add(f"{path}.{key}", f"expected an integer, got {v!r}")
        if not math.isfinite(v):
            self.add(f"{path}.{key}", "must be finite")
        elif positive and v <= 0:
            self.add(f"{path}.{key}", f"must be positive, got {v!r}")
        elif nonneg and v < 0:
            self.add(f"{path}.{key}", f"must be non-negative, got {v!r}")
        return int(v) if integer and int(v) == v else float(v)


def _size(d, path, c: _Collector) -> SizeDist | None:
    if not isinstance(d, dict) or "family" not in d:
        c.add(path, "needs a 'family'")
        return None
    fam = d["family"]
    if fam not in _SIZE_KEYS:
        c.add(f"{path}.family", f"unknown family {fam!r}; choose from {sorted(_SIZE_KEYS)}")
        return None
    extra = set(d) - {"family", *_SIZE_KEYS[fam]}
    for k in sorted(extra):
        c.add(f"{path}.{k}", f"unknown parameter for family {fam!r}")
    params = {k: c.num(d, k, path) for k in _SIZE_KEYS[fam]}
    if any(not math.isfinite(v) for v in params.values()):
        return None
    try:
        dist = SizeDist(fam, params)
    except ValueError as e:
        c.add(path, str(e))
        return None
    for e in dist.validate():
        c.add(path, e)
    return dist


def _density(d, path, M, c: _Collector) -> EventDensity | None:
    if not isinstance(d, dict) or "kind" not in d:
        c.add(path, "needs a 'kind'")
        return None
    kind = d["kind"]
    if kind not in _DENSITY_KEYS:
        c.add(f"{path}.kind", f"unknown density {kind!r}; choose from {sorted(_DENSITY_KEYS)}")
        return None
    extra = set(d) - {"kind", "support", *_DENSITY_KEYS[kind]}
    for k in sorted(extra):
        c.add(f"{path}.{k}", f"unknown parameter for density {kind!r}")
    try:
        if kind == "piecewise-linear-table":
            xs, ys = d.get("xs"), d.get("ys")
            if not (isinstance(xs, list) and isinstance(ys, list) and len(xs) == len(ys) >= 2):
                c.add(path, "table needs equal-length lists xs, ys with at least two nodes")
                return None
            dens = EventDensity.table(xs, ys, M)
        else:
            support = d.get("support", [-M, M])
            if not (isinstance(support, list) and len(support) == 2):
                c.add(f"{path}.support", "expected [lo, hi]")
                return None
            params = {k: c.num(d, k, path) for k in _DENSITY_KEYS[kind]}
            dens = EventDensity(kind, (float(support[0]), float(support[1])), params, M)
    except (ValueError, TypeError, ZeroDivisionError) as e:
        c.add(path, str(e))
        return None
    for e in dens.validate():
        c.add(path, e)
    return dens


def _kernel(d, path, c: _Collector) -> Kernel | None:
    if not isinstance(d, dict):
        c.add(path, "expected a mapping")
        return None
    kind = d.get("kind", "bump")
    allowed = {"kind", "center", "width", "radius", "scale", "power", "normalize"}
    for k in sorted(set(d) - allowed):
        c.add(f"{path}.{k}", "unknown kernel field")
    if kind not in ("bump", "poly", "zero"):
        c.add(f"{path}.kind", f"unknown kernel kind {kind!r}")
        return None
    k = Kernel(
        kind,
        center=c.num(d, "center", path, default=0.0),
        width=c.num(d, "width", path, positive=True, default=0.25),
        radius=c.num(d, "radius", path, positive=True, default=0.75),
        scale=c.num(d, "scale", path, default=1.0),
        power=c.num(d, "power", path, positive=True, integer=True, default=4),
    )
    if d.get("normalize", False) and kind != "zero":
        k = k.normalized()
    return k


def _profile(d, path, c: _Collector):
    if not isinstance(d, dict) or "profile" not in d:
        c.add(path, "needs a 'profile' (constant, bump or table)")
        return None
    kind = d["profile"]
    if kind == "constant":
        return ConstantProfile(c.num(d, "value", path, default=0.0))
    if kind == "bump":
        return BumpProfile(
            base=c.num(d, "base", path, default=1.0), amp=c.num(d, "amp", path, default=0.5),
            center=c.num(d, "center", path, default=0.0), width=c.num(d, "width", path, positive=True, default=0.5),
        )
    if kind == "table":
        xs, ys = d.get("xs"), d.get("ys")
        if not (isinstance(xs, list) and isinstance(ys, list) and len(xs) == len(ys) >= 2):
            c.add(path, "table profile needs equal-length xs, ys")
            return None
        return TableProfile(tuple(float(x) for x in xs), tuple(float(y) for y in ys))
    c.add(f"{path}.profile", f"unknown profile {kind!r}")
    return None


def build_model(m: dict, c: _Collector) -> ModelSpec | None:
    M = c.num(m, "M", "model", positive=True)
    flow_raw = m.get("flow", {})
    if flow_raw.get("ask") == "same-as-bid":
        flow_raw = dict(flow_raw, ask=flow_raw["bid"])
    sides = {}
    for side in ("bid", "ask"):
        sd = flow_raw.get(side)
        base = f"model.flow.{side}"
        if not isinstance(sd, dict):
            c.add(base, "expected a mapping with cancel, place and noise")
            continue
        evs = {}
        for kind in ("cancel", "place", "noise"):
            ev = sd.get(kind)
            if not isinstance(ev, dict):
                c.add(f"{base}.{kind}", "expected a mapping with size and location")
                continue
            size = _size(ev.get("size"), f"{base}.{kind}.size", c)
            loc = _density(ev.get("location"), f"{base}.{kind}.location", M, c) if math.isfinite(M) else None
            if size is not None:
                lo, hi = size.support()
                if kind == "cancel" and (lo < 0 or hi > 1):
                    c.add(f"{base}.{kind}.size", f"cancellation proportions must lie in [0, 1], support is [{lo}, {hi}]")
                elif kind != "cancel" and lo < 0:
                    c.add(f"{base}.{kind}.size", f"sizes must be non-negative, support is [{lo}, {hi}]")
            if size is not None and loc is not None:
                evs[kind] = EventFlow(size, loc)
        if len(evs) == 3:
            sides[side] = SideFlow(**evs)

    pm = m.get("price_moves", {})
    preset = pm.get("preset")
    law = None
    if preset not in PRESETS:
        c.add("model.price_moves.preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    else:
        try:
            law = PRESETS[preset](**(pm.get("params") or {}))
        except TypeError as e:
            c.add("model.price_moves.params", str(e))
    coupling = pm.get("coupling", "independent")
    eps = pm.get("eps")
    if eps is not None:
        eps = c.num(pm, "eps", "model.price_moves", nonneg=True)

    kernels = m.get("kernels", {})
    phi_b = _kernel(kernels.get("phi_b"), "model.kernels.phi_b", c)
    phi_a = _kernel(kernels.get("phi_a"), "model.kernels.phi_a", c)

    ini = m.get("initial", {})
    B0 = c.num(ini, "B0", "model.initial")
    A0 = c.num(ini, "A0", "model.initial")
    vb = _profile(ini.get("bid"), "model.initial.bid", c)
    va = _profile(ini.get("ask"), "model.initial.ask", c)

    if len(sides) < 2 or law is None or phi_b is None or phi_a is None or vb is None or va is None:
        return None
    if not (math.isfinite(B0) and math.isfinite(A0)):
        return None
    model = ModelSpec(
        OrderFlowSpec(sides["bid"], sides["ask"], M),
        PriceMoveSpec(law, phi_b, phi_a, eps, coupling),
        InitialCondition(B0, A0, vb, va),
    )
    for path, msg in model.moves.validate() + model.initial.validate():
        c.add(path, msg)
    return model


def parse_config(raw: dict | None) -> ExperimentConfig:
    """Merge ``raw`` over the defaults and validate; raises ValidationError listing every problem."""
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ParseError("top level of the config must be a mapping")
    c = _Collector()
    for k in sorted(set(raw) - set(DEFAULTS)):
        c.add(k, "unknown section")
    merged = _merge(DEFAULTS, raw, "", c.errors)

    model = build_model(merged["model"], c)

    r = merged["run"]
    n_list = r.get("n_list")
    if not isinstance(n_list, list) or not n_list:
        c.add("run.n_list", "expected a non-empty list of positive integers")
        n_list = []
    else:
        for i, n in enumerate(n_list):
            if isinstance(n, bool) or not isinstance(n, int) or n < 1:
                c.add(f"run.n_list[{i}]", f"must be a positive integer, got {n!r}")
    T = c.num(r, "T", "run", positive=True)
    snaps = r.get("snapshots")
    if snaps is None:
        snaps = [0.0, T] if math.isfinite(T) else [0.0]
    elif isinstance(snaps, int) and not isinstance(snaps, bool):
        snaps = [T * i / snaps for i in range(snaps + 1)] if snaps > 0 else [0.0]
    if not isinstance(snaps, list) or any(not isinstance(s, (int, float)) for s in snaps):
        c.add("run.snapshots", "expected a list of times or a count")
        snaps = [0.0]
    elif math.isfinite(T) and any(s < 0 or s > T for s in snaps):
        c.add("run.snapshots", f"snapshot times must lie in [0, T={T}]")
    R = c.num(r, "replications", "run", positive=True, integer=True)
    seed = c.num(r, "seed", "run", nonneg=True, integer=True)
    min_active = c.num(r, "min_active", "run", nonneg=True, integer=True, default=0)

    lim = merged["limit"]
    h = c.num(lim, "h", "limit", positive=True)
    margin = c.num(lim, "margin", "limit", nonneg=True)
    dt = lim.get("dt")
    dt = (T / 2048 if math.isfinite(T) else math.nan) if dt is None else c.num(lim, "dt", "limit", positive=True)
    R_lim = lim.get("replications")
    R_lim = R if R_lim is None else c.num(lim, "replications", "limit", positive=True, integer=True)

    sw = merged["sweep"]
    boot = c.num(sw, "bootstrap", "sweep", positive=True, integer=True)
    alpha = c.num(sw, "alpha", "sweep", positive=True)
    if math.isfinite(alpha) and alpha >= 1:
        c.add("sweep.alpha", "must be below 1")
    tk = sw.get("test_kernels")
    test_kernels = None
    if tk is not None:
        if not isinstance(tk, list) or not tk:
            c.add("sweep.test_kernels", "expected a non-empty list of kernels")
        else:
            test_kernels = tuple(_kernel(k, f"sweep.test_kernels[{i}]", c) for i, k in enumerate(tk))

    out = merged["output"]
    fmts = out.get("formats", [])
    for f in fmts if isinstance(fmts, list) else []:
        if f not in ("csv", "book"):
            c.add("output.formats", f"unknown format {f!r}")

    if c.errors:
        raise ValidationError(c.errors)
    return ExperimentConfig(
        model=model,
        run=RunConfig(tuple(n_list), T, tuple(float(s) for s in snaps), R, seed, min_active),
        limit=LimitConfig(h, margin, dt, R_lim),
        sweep=SweepConfig(boot, alpha, test_kernels),
        output=OutputConfig(out.get("dir"), tuple(fmts)),
        raw=merged,
    )


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ParseError(f"cannot read config {p}: {e}") from e
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ParseError(f"{p}: {e}") from e
    return parse_config(raw)
