#!/usr/bin/env python3
"""Generate a synthetic training corpus of textured PNG images.

Usage: python scripts/make_fixture_corpus.py OUT_DIR [--count 50] [--seed 11]
"""

import argparse

from sparseiqa.synthetic import make_corpus


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir")
    parser.add_argument("--count", type=int, default=50)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--height", type=int, default=96)
    parser.add_argument("--width", type=int, default=128)
    args = parser.parse_args()
    paths = make_corpus(args.out_dir, args.count, seed=args.seed,
                        height=args.height, width=args.width)
    print(f"wrote {len(paths)} images to {args.out_dir}")


if __name__ == "__main__":
    main()
