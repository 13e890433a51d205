"""Command-line entry point: ``lobsim {simulate,decompose,limit,sweep,validate}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .config import load_config, parse_config
from .errors import LobsimError, ParseError, ValidationError
from .harness import run_experiment

ENV_OUT = "LOBSIM_OUT"


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lobsim", description="Limit order book model simulator and limit solver.")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, run=True):
        sp.add_argument("--config", type=Path, help="YAML experiment config (defaults apply when omitted)")
        if not run:
            return
        sp.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
        sp.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
        sp.add_argument("--out", type=Path, help=f"output directory (default: ${ENV_OUT} or ./lobsim-out)")
        sp.add_argument("--n", type=_ints, metavar="N[,N...]", help="scale indices (overrides run.n_list)")
        sp.add_argument("--T", type=float, help="horizon (overrides run.T)")
        sp.add_argument("--snapshots", type=_floats, metavar="T0,T1,...", help="snapshot times")
        sp.add_argument("--replications", "-R", type=int, help="paths per n (overrides run.replications)")

    common(sub.add_parser("simulate", help="simulate discrete paths"))
    d = sub.add_parser("decompose", help="auxiliary processes of simulated paths")
    common(d)
    d.add_argument("--input", type=Path, nargs="*", help="book bundles to verify against the replay")
    common(sub.add_parser("limit", help="solve the limiting SDE-SPDE system"))
    common(sub.add_parser("sweep", help="KS convergence sweep over n"))
    common(sub.add_parser("validate", help="check a config and print the resolved settings"), run=False)
    return p


def _resolve(args) -> "object":
    raw = {}
    if args.config is not None:
        import yaml

        try:
            raw = yaml.safe_load(args.config.read_text()) or {}
        except OSError as e:
            raise ParseError(f"cannot read {args.config}: {e}") from e
        except yaml.YAMLError as e:
            raise ParseError(str(e)) from e
    if not isinstance(raw, dict):
        raise ParseError("top level of the config must be a mapping")
    run = dict(raw.get("run") or {})
    for flag, key in (("seed", "seed"), ("n", "n_list"), ("T", "T"), ("snapshots", "snapshots"),
                      ("replications", "replications")):
        v = getattr(args, flag, None)
        if v is not None:
            run[key] = v
    if run:
        raw = dict(raw, run=run)
    return parse_config(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "validate":
            cfg = load_config(args.config) if args.config else parse_config({})
            print(f"config ok (hash {cfg.hash[:12]})")
            print(json.dumps({"run": dataclasses.asdict(cfg.run), "limit": dataclasses.asdict(cfg.limit)}, indent=2))
            return 0
        cfg = _resolve(args)
        out = args.out or Path(os.environ.get(ENV_OUT) or cfg.output.dir or "lobsim-out")
        man = run_experiment(cfg, args.cmd, out, jobs=args.jobs, inputs=getattr(args, "input", None))
    except ValidationError as e:
        print(str(e), file=sys.stderr)
        return 2
    except LobsimError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print(f"{args.cmd}: {len(man.files)} files in {out} (manifest.json, status {man.status})")
    for f in man.flags:
        print(f"flag: {f}")
    if man.verdict is not None:
        print(f"verdict: {'pass' if man.verdict['passed'] else 'FAIL'} over {man.verdict['tests']} trend tests")
        for f in man.verdict["failures"]:
            print(f"  KS increased from n={f[0]} to n={f[1]} at t={f[2]} for {f[3]}")
        return 0 if man.verdict["passed"] else 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
