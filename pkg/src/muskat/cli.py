"""Command-line entry point: muskat --config <path> [--mode m] [--out dir]."""

import argparse
import sys

from .driver import MODES, ConfigError, load_config, run


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="muskat",
        description="Two-phase free-boundary solver and verification runs.")
    parser.add_argument("--config", required=True,
                        help="path to an INI-style run configuration")
    parser.add_argument("--mode", default=None, choices=sorted(MODES),
                        help="override run.mode from the config file")
    parser.add_argument("--out", default=None,
                        help="override run.out from the config file")
    ns = parser.parse_args(argv)
    try:
        cfg = load_config(ns.config, mode=ns.mode, out=ns.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    code = run(cfg)
    if code == 2:
        print("config error: see report.json in the output directory",
              file=sys.stderr)
    elif code == 3:
        print("solver failure: see report.json in the output directory",
              file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
