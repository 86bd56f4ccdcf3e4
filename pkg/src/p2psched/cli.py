"""Command-line entry point.

Exit status: 0 on success, 1 on a configuration error, 2 when a
deterministic invariant or queue bound fails, 3 on I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config, read_kv
from .experiment import BoundCheckFailed, run, sweep
from .oracle import gap_curve, optimal_utility, tiny_instance_from_kv
from .scheduler import InvariantViolation

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_IO = 0, 1, 2, 3


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError("--sweep", f"expected a list of numbers, got {text!r}") from None


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p2psched", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one configuration, or a V-sweep with --sweep")
    p.add_argument("config", nargs="?", help="key = value configuration file")
    p.add_argument("--slots")
    p.add_argument("--V")
    p.add_argument("--alpha")
    p.add_argument("--beta")
    p.add_argument("--seed")
    p.add_argument("--out")
    p.add_argument("--sweep", help="comma-separated V values")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key")

    g = sub.add_parser("gap", help="compare simulated utility with the brute-force optimum")
    g.add_argument("instance", help="tiny-instance key = value file")
    g.add_argument("--V", default="1,10,100")
    g.add_argument("--slots", type=int, default=1_000_000)
    g.add_argument("--seed", type=int, default=0)
    return parser


def _run(args) -> int:
    overrides = {k: getattr(args, k) for k in ("slots", "V", "alpha", "beta", "seed", "out")}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(item, "expected KEY=VALUE")
        overrides[key.strip()] = value.strip()
    cfg = load_config(args.config, **overrides)
    if args.sweep:
        rows = sweep(cfg, _floats(args.sweep), cfg.out)
        for row in rows:
            print(json.dumps(row))
        return EXIT_OK
    result = run(cfg)
    checks = result.report["checks"]
    print(json.dumps({"out": str(Path(cfg.out)), "utility": result.report["utility"],
                      "max_Q": result.report["max_Q"], "max_H": result.report["max_H"],
                      "passed": checks["passed"]}))
    return EXIT_OK if checks["passed"] else EXIT_INVARIANT


def _gap(args) -> int:
    try:
        inst = tiny_instance_from_kv(read_kv(args.instance))
    except (KeyError, ValueError) as exc:
        raise ConfigError(args.instance, str(exc)) from None
    phi = optimal_utility(inst)
    for V, achieved, star in gap_curve(inst, _floats(args.V), args.slots, args.seed, phi):
        print(json.dumps({"V": V, "achieved": achieved, "phi_star": star}))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args) if args.command == "run" else _gap(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolation, BoundCheckFailed) as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
