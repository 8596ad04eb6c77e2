"""Command-line entry: pyoracle [--model echo|npz:<path>] [shape flags]."""

from __future__ import annotations

import argparse
import sys

from .models import load_model
from .server import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pyoracle", description=__doc__)
    parser.add_argument("--model", default="echo", help="echo (default) or npz:<path>")
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--height", type=int, default=16)
    parser.add_argument("--width", type=int, default=16)
    parser.add_argument("--channels", type=int, default=3)
    args = parser.parse_args(argv)
    try:
        model = load_model(args.model, args.classes, args.height, args.width, args.channels)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"pyoracle: {exc}", file=sys.stderr)
        return 1
    serve(model)
    return 0


if __name__ == "__main__":
    sys.exit(main())
