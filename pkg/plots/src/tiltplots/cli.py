"""CLI: `plot <spec.toml>` renders every figure table in the spec file."""

import argparse
import sys

from .render import render
from .spec import PlotError, load_spec


def main(argv=None):
    p = argparse.ArgumentParser(prog="plot",
                                description="render figures from run artifacts")
    p.add_argument("spec", help="TOML plot specification")
    args = p.parse_args(argv)
    try:
        for spec in load_spec(args.spec):
            print("wrote", render(spec))
    except (PlotError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
