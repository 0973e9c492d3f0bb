#!/usr/bin/env python3
"""Convert a transaction file to QSET.

Input has one transaction per line with whitespace-separated item tokens,
as in the common frequent-itemset dataset dumps. Integer tokens are kept as
ids unless --remap is given; non-integer tokens always get remapped to
dense ids in order of first appearance. Duplicate items within a line are
dropped and ids are written ascending.

Usage:
  convert_sparse.py INPUT.txt OUTPUT.qset [--remap] [--limit N]
                    [--skip-empty] [--split-queries M QUERIES.qset]
"""

import argparse
import struct
import sys


def parse(path, remap, limit, skip_empty):
    vocab = {}
    sets = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            tokens = line.split()
            if not tokens and skip_empty:
                continue
            ids = set()
            for t in tokens:
                if not remap and t.isdigit():
                    ids.add(int(t))
                    continue
                ids.add(vocab.setdefault(t, len(vocab)))
            if any(i >= 2**32 for i in ids):
                sys.exit(f"item id out of u32 range in line {len(sets) + 1}")
            sets.append(sorted(ids))
            if limit is not None and len(sets) >= limit:
                break
    return sets


def write_qset(path, sets):
    with open(path, "wb") as f:
        f.write(b"QSET")
        f.write(struct.pack("<I", len(sets)))
        for s in sets:
            f.write(struct.pack(f"<I{len(s)}I", len(s), *s))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("input")
    ap.add_argument("output")
    ap.add_argument("--remap", action="store_true", help="assign dense ids to every token")
    ap.add_argument("--limit", type=int, help="keep only the first N transactions")
    ap.add_argument("--skip-empty", action="store_true", help="drop blank lines")
    ap.add_argument("--split-queries", nargs=2, metavar=("M", "QUERIES"))
    args = ap.parse_args()

    sets = parse(args.input, args.remap, args.limit, args.skip_empty)
    if args.split_queries:
        m = int(args.split_queries[0])
        if not 0 < m < len(sets):
            sys.exit("query count must be between 1 and the transaction count minus one")
        write_qset(args.split_queries[1], sets[-m:])
        sets = sets[:-m]
    write_qset(args.output, sets)
    print(f"wrote {len(sets)} transactions to {args.output}")


if __name__ == "__main__":
    main()
