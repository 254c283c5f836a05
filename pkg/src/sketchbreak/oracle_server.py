"""Serve a GapNorm oracle over newline-delimited JSON on stdin/stdout.

Example::

    sketchbreak attack --oracle-cmd "python -m sketchbreak.oracle_server --n 64 --r 16 --seed 7"
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .oracles import make_gapnorm_oracle


def serve(oracle, stdin=sys.stdin, stdout=sys.stdout) -> int:
    served = 0
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        msg = json.loads(line)
        x = np.asarray(msg["query"], dtype=float)
        stdout.write(json.dumps({"answer": int(oracle.query(x))}) + "\n")
        stdout.flush()
        served += 1
    return served


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m sketchbreak.oracle_server")
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--r", type=int, default=16)
    ap.add_argument("--B", type=float, default=8.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    oracle = make_gapnorm_oracle(args.n, args.r, args.B, np.random.default_rng(args.seed))
    serve(oracle)
    return 0


if __name__ == "__main__":
    sys.exit(main())
