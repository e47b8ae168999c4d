"""Entry point: planetoid-convert <input_dir> <name> <output_dir>."""

from __future__ import annotations

import argparse
import sys

from . import BundleError, convert


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="planetoid-convert",
        description="Convert an ind.<name>.* bundle to a canonical dataset directory.")
    parser.add_argument("input_dir", help="directory holding the eight bundle files")
    parser.add_argument("name", help="dataset name, e.g. cora")
    parser.add_argument("output_dir", help="canonical directory to create")
    parser.add_argument("--val-size", type=int, default=500,
                        help="validation nodes taken right after the train range")
    args = parser.parse_args(argv)
    try:
        stats = convert(args.input_dir, args.name, args.output_dir,
                        val_size=args.val_size)
    except BundleError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"{stats['name']}: n={stats['n']} d={stats['d']} "
          f"C={stats['num_classes']} undirected_edges={stats['undirected_edges']} "
          f"splits={stats['train']}/{stats['val']}/{stats['test']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
