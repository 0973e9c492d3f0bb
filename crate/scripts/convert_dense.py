#!/usr/bin/env python3
"""Convert dense float vectors to QVEC.

Accepted inputs, chosen by extension:
  .npy            2-d array
  .fvecs          int32 dim followed by dim float32, per row
  .csv / .tsv     one row per line, numeric columns only

Usage:
  convert_dense.py INPUT OUTPUT.qvec [--limit N] [--split-queries M QUERIES.qvec]

With --split-queries the last M rows go to a separate query file.
"""

import argparse
import struct
import sys

import numpy as np


def read_fvecs(path):
    raw = np.fromfile(path, dtype=np.int32)
    if raw.size == 0:
        return np.zeros((0, 0), dtype=np.float32)
    dim = int(raw[0])
    rows = raw.reshape(-1, dim + 1)
    if not np.all(rows[:, 0] == dim):
        sys.exit(f"{path}: rows have differing dimensions")
    return rows[:, 1:].copy().view(np.float32)


def read_input(path):
    lower = path.lower()
    if lower.endswith(".npy"):
        return np.load(path)
    if lower.endswith(".fvecs"):
        return read_fvecs(path)
    if lower.endswith(".csv"):
        return np.loadtxt(path, delimiter=",", ndmin=2)
    if lower.endswith(".tsv"):
        return np.loadtxt(path, delimiter="\t", ndmin=2)
    sys.exit(f"{path}: unsupported extension")


def write_qvec(path, data):
    data = np.ascontiguousarray(data, dtype="<f4")
    if not np.all(np.isfinite(data)):
        sys.exit("input contains non-finite values")
    with open(path, "wb") as f:
        f.write(b"QVEC")
        f.write(struct.pack("<II", data.shape[0], data.shape[1]))
        f.write(data.tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("input")
    ap.add_argument("output")
    ap.add_argument("--limit", type=int, help="keep only the first N rows")
    ap.add_argument("--split-queries", nargs=2, metavar=("M", "QUERIES"))
    args = ap.parse_args()

    data = read_input(args.input)
    if data.ndim != 2:
        sys.exit(f"expected a 2-d array, got shape {data.shape}")
    if args.limit is not None:
        data = data[: args.limit]
    if args.split_queries:
        m = int(args.split_queries[0])
        if not 0 < m < len(data):
            sys.exit("query count must be between 1 and the row count minus one")
        write_qvec(args.split_queries[1], data[-m:])
        data = data[:-m]
    write_qvec(args.output, data)
    print(f"wrote {data.shape[0]} x {data.shape[1]} to {args.output}")


if __name__ == "__main__":
    main()
