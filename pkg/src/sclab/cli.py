"""``sclab`` command line: resolve a config, run one experiment, report verdicts.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 numerical abort (non-finite state or clamp event).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import SCHEMA, SEED_ENV, ConfigError, parse_config, parse_flag_value, suggest
from .experiments import run_experiment
from .solver import CFLViolation

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sclab",
        description="Simulate stochastic scalar conservation laws and check contraction, "
                    "decay, mixing and invariant-measure properties.",
        epilog=f"Every config key can be given as --KEY VALUE (JSON values, e.g. "
               f"--window '[1, 20]').  The default seed is read from ${SEED_ENV}.",
        allow_abbrev=False,
    )
    p.add_argument("--config", metavar="PATH", help="JSON config file")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                   help="override one key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    keys = p.add_argument_group("config keys")
    for key, spec in SCHEMA.items():
        keys.add_argument(f"--{key}", dest=f"key_{key}", metavar=spec.type.upper(),
                          default=argparse.SUPPRESS,
                          help=f"{spec.doc} (default: {json.dumps(spec.default)})")
    return p


def _overrides(ns: argparse.Namespace) -> dict:
    over = {}
    for item in ns.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}{suggest(key)}")
        over[key] = parse_flag_value(raw)
    for name, raw in vars(ns).items():
        if name.startswith("key_"):
            key = name[4:]
            spec = SCHEMA[key]
            over[key] = raw if spec.type == "str" and not raw.startswith(("[", "{", '"')) \
                else parse_flag_value(raw)
    return over


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    ns, unknown = parser.parse_known_args(argv)
    try:
        if unknown:
            flag = unknown[0].split("=", 1)[0]
            key = flag.lstrip("-")
            raise ConfigError(f"unknown option {flag!r}{suggest(key)}")
        if ns.verbose:
            logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
        cfg = parse_config(ns.config, _overrides(ns))
        result = run_experiment(cfg)
    except (ConfigError, CFLViolation, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for line in (result.out_dir / "summary.txt").read_text().splitlines():
        print(line)
    if result.abort is not None:
        print(f"numerical abort: {result.abort}", file=sys.stderr)
    elif not result.passed:
        print(f"failed check: {result.first_failure}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
