"""Throughput benchmark: compiled rank-index backend vs pure-Python
fallback on the streaming admission hot path.

Runs several periods of bucketize -> rank -> ledger -> count-update per
request through each backend and reports requests/second, after
asserting both backends produce identical decision streams.

Usage: python benchmarks/bench_rankcore.py [--requests N] [--periods P]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from rpaf.allocation import backend_module


def run_backend(mod, values_by_period, budget_m, eta):
    core = mod.RankCore(eta)
    out = []
    t0 = time.perf_counter()
    for values in values_by_period:
        actions, _ = core.decide_stream(values, budget_m, 0)
        core.rotate()
        out.append(np.asarray(actions))
    elapsed = time.perf_counter() - t0
    return out, elapsed


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--requests", type=int, default=200_000,
                    help="requests per period")
    ap.add_argument("--periods", type=int, default=10)
    ap.add_argument("--budget", type=int, default=4500)
    ap.add_argument("--eta", type=float, default=0.001)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    periods = [rng.uniform(0.0, 1.0, size=args.requests)
               for _ in range(args.periods)]
    total = args.requests * args.periods

    results = {}
    for name in ("pure", "compiled"):
        try:
            mod = backend_module(name)
        except ImportError:
            print(f"{name:9s} not available (extension not built)")
            continue
        actions, elapsed = run_backend(mod, periods, args.budget, args.eta)
        results[name] = (actions, elapsed)
        print(f"{name:9s} {total / elapsed:12.0f} req/s "
              f"({elapsed:.3f} s for {total} requests)")

    if len(results) == 2:
        for a, b in zip(results["pure"][0], results["compiled"][0]):
            assert np.array_equal(a, b), "backend decision streams diverge"
        speedup = results["pure"][1] / results["compiled"][1]
        print(f"identical decision streams; compiled speedup {speedup:.1f}x")


if __name__ == "__main__":
    main()
