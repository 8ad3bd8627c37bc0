#!/usr/bin/env python3
"""Assign train/validation/test to a JSONL manifest exactly as `dpguard corpus split` does.

Training code outside the C++ toolkit uses this to reproduce the shared split
from the same manifest and seed.
"""

import argparse
import json
import math
import sys

import numpy as np


class SharedRng:
    """Raw 32-bit mt19937 output of numpy's legacy RandomState(seed)."""

    def __init__(self, seed):
        self._bits = np.random.RandomState(seed)._bit_generator

    def next_u32(self):
        return int(self._bits.random_raw())

    def uniform_below(self, bound):
        if bound == 0:
            raise ValueError("bound must be >= 1")
        limit = 2**32 - (2**32 % bound)
        while True:
            x = self.next_u32()
            if x < limit:
                return x % bound

    def shuffle(self, items):
        for i in range(len(items), 1, -1):
            j = self.uniform_below(i)
            items[i - 1], items[j] = items[j], items[i - 1]


def split_labels(n, ratios, seed):
    train, validation, test = ratios
    if min(ratios) < 0 or abs(train + validation + test - 1.0) > 1e-9:
        raise ValueError("split ratios must be non-negative and sum to 1")
    if n == 0:
        raise ValueError("cannot split an empty corpus")
    order = list(range(n))
    SharedRng(seed).shuffle(order)
    n_val = math.floor(validation * n + 1e-9)
    n_test = math.floor(test * n + 1e-9)
    n_train = n - n_val - n_test
    out = [None] * n
    for k, index in enumerate(order):
        out[index] = "train" if k < n_train else "validation" if k < n_train + n_val else "test"
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("manifest")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--ratios", default="0.6,0.2,0.2", help="train,validation,test")
    parser.add_argument("--output", help="defaults to stdout")
    args = parser.parse_args(argv)

    ratios = [float(x) for x in args.ratios.split(",")]
    if len(ratios) != 3:
        parser.error("--ratios needs three comma-separated values")
    with open(args.manifest, encoding="utf-8") as f:
        records = [json.loads(line) for line in f if line.strip()]
    for record, split in zip(records, split_labels(len(records), ratios, args.seed)):
        record["split"] = split
    text = "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in records)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
