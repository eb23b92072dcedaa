#!/usr/bin/env python3
"""Emit a deterministic synthetic training corpus.

Usage: python scripts/make_corpus.py OUT_PATH [--bytes N] [--seed S]
"""

import argparse
from pathlib import Path

from selfspec.corpus import synthetic_text


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--bytes", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    args.out.write_bytes(synthetic_text(args.bytes, seed=args.seed))
    print(f"wrote {args.bytes} bytes to {args.out}")


if __name__ == "__main__":
    main()
