"""On-disk formats.

Path time series (CSV)::

    # schema: lobsim.path/1
    # n=16 seed=... T=1.0 violations=0
    time,B,A,Y_b,Y_a
    0.0,0.0,1.25,...

Book snapshots (binary)::

    b"LOBSIM-BOOK/1\\n"
    one line of JSON metadata (n, seed, T, dx, snapshot count, config hash)
    per snapshot: f64 time, then for bid and ask: varint count, then
    count pairs of (zigzag varint tick index, f64 value)

All floats are little-endian IEEE-754 doubles.  Only ticks written by at least
one passive event are stored; every other tick holds the initial profile.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

PATH_SCHEMA = "lobsim.path/1"
LIMIT_SCHEMA = "lobsim.limit/1"
DECOMP_SCHEMA = "lobsim.decompose/1"
BOOK_MAGIC = b"LOBSIM-BOOK/1\n"

_F64 = struct.Struct("<d")


def zigzag(i: int) -> int:
    return 2 * i if i >= 0 else -2 * i - 1


def unzigzag(z: int) -> int:
    return z >> 1 if not z & 1 else -((z + 1) >> 1)


def write_varint(buf, u: int) -> None:
    while True:
        b = u & 0x7F
        u >>= 7
        if u:
            buf.write(bytes((b | 0x80,)))
        else:
            buf.write(bytes((b,)))
            return


def read_varint(buf) -> int:
    shift = out = 0
    while True:
        raw = buf.read(1)
        if not raw:
            raise EOFError("truncated varint")
        b = raw[0]
        out |= (b & 0x7F) << shift
        if not b & 0x80:
            return out
        shift += 7


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _header(path, extra: dict) -> list[str]:
    return [f"# schema: {path}", "# " + " ".join(f"{k}={v}" for k, v in extra.items())]


def write_path_csv(record, dest) -> None:
    meta = {"n": record.n, "seed": record.seed, "T": record.T, "violations": record.violations}
    with open(dest, "w", newline="") as f:
        f.write("\n".join(_header(PATH_SCHEMA, meta)) + "\n")
        w = csv.writer(f)
        w.writerow(["time", "B", "A", "Y_b", "Y_a"])
        for s in record.snapshots:
            w.writerow([repr(s.t), repr(s.B), repr(s.A), repr(s.Yb), repr(s.Ya)])


def read_csv_table(src) -> tuple[dict, dict]:
    """Return (header metadata, {column: array}) for any of the package's CSV files; text columns stay str."""
    meta, rows = {}, []
    with open(src) as f:
        lines = f.read().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    for ln in lines:
        if ln.startswith("# schema:"):
            meta["schema"] = ln.split(":", 1)[1].strip()
        elif ln.startswith("# "):
            for tok in ln[2:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
    reader = csv.reader(body)
    cols = next(reader)
    rows = [r for r in reader if r]
    out = {}
    for i, c in enumerate(cols):
        raw = [r[i] for r in rows]
        try:
            out[c] = np.array([float(v) for v in raw], dtype=float)
        except ValueError:  # label columns such as the sweep's quantity names
            out[c] = np.array(raw, dtype=str)
    return meta, out


def write_book(record, dest, config_hash: str | None = None) -> None:
    meta = {"schema": "lobsim.book/1", "n": record.n, "seed": str(record.seed), "T": record.T,
            "dx": record.params.dx, "snapshots": len(record.snapshots), "config": config_hash}
    buf = io.BytesIO()
    buf.write(BOOK_MAGIC)
    buf.write(json.dumps(meta, sort_keys=True).encode() + b"\n")
    for s in record.snapshots:
        buf.write(_F64.pack(s.t))
        for fld in (s.bid, s.ask):
            ticks, vals = fld.sparse_items()
            write_varint(buf, int(ticks.size))
            for j, v in zip(ticks.tolist(), vals.tolist()):
                write_varint(buf, zigzag(int(j)))
                buf.write(_F64.pack(v))
    Path(dest).write_bytes(buf.getvalue())


def read_book(src) -> tuple[dict, list]:
    """Return (metadata, [(t, {"bid": (ticks, values), "ask": (ticks, values)}), ...])."""
    data = io.BytesIO(Path(src).read_bytes())
    if data.read(len(BOOK_MAGIC)) != BOOK_MAGIC:
        from .errors import ParseError

        raise ParseError(f"{src} is not a book file")
    meta = json.loads(data.readline())
    snaps = []
    for _ in range(int(meta["snapshots"])):
        (t,) = _F64.unpack(data.read(8))
        sides = {}
        for side in ("bid", "ask"):
            m = read_varint(data)
            ticks = np.empty(m, dtype=np.int64)
            vals = np.empty(m)
            for i in range(m):
                ticks[i] = unzigzag(read_varint(data))
                (vals[i],) = _F64.unpack(data.read(8))
            sides[side] = (ticks, vals)
        snaps.append((t, sides))
    return meta, snaps


def write_limit_csv(series, dest) -> None:
    with open(dest, "w", newline="") as f:
        f.write("\n".join(_header(LIMIT_SCHEMA, {"dt": series.dt, "h": series.grid.h, "paths": len(series.seeds)})) + "\n")
        w = csv.writer(f)
        w.writerow(["t", "path", "A", "B", "Y_a", "Y_b"])
        for i, t in enumerate(series.times):
            for r in range(len(series.seeds)):
                w.writerow([repr(float(t)), r, repr(float(series.A[i, r])), repr(float(series.B[i, r])),
                            repr(float(series.Ya[i, r])), repr(float(series.Yb[i, r]))])


def write_limit_nodes(series, i: int, dest) -> None:
    x = series.grid.nodes
    R = len(series.seeds)
    with open(dest, "w", newline="") as f:
        f.write("\n".join(_header(LIMIT_SCHEMA, {"t": float(series.times[i]), "nodes": x.size})) + "\n")
        w = csv.writer(f)
        w.writerow(["x"] + [f"v_b_{r}" for r in range(R)] + [f"v_a_{r}" for r in range(R)])
        for k in range(x.size):
            w.writerow([repr(float(x[k]))] + [repr(float(v)) for v in series.vb[i, :, k]]
                       + [repr(float(v)) for v in series.va[i, :, k]])


def write_rows(dest, schema: str, meta: dict, columns: list[str], rows) -> None:
    with open(dest, "w", newline="") as f:
        f.write("\n".join(_header(schema, meta)) + "\n")
        w = csv.writer(f)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
