"""Compare the compiled and pure-Python FTL kernels on the same write stream.

    python3 benchmarks/bench_kernels.py [--writes N] [--repeat R]

Each backend gets an identical seeded sequence of host writes with GC run
whenever the host runs out of room; the final erase counts must agree, so
the timing compares equal work.
"""

import argparse
import random
import time

from racksim.kernels import backends


def drive(cls, writes: int, seed: int):
    n_blocks, ppb = 256, 64
    n_logical = int(n_blocks * ppb * 0.7)
    ftl = cls(n_blocks, ppb, n_logical, 2, 0)
    rng = random.Random(seed)
    keys = [rng.randrange(n_logical) for _ in range(writes)]
    t0 = time.perf_counter()
    ftl.prefill(n_logical)
    for k in keys:
        while ftl.host_room() < 1:
            ftl.gc_step()
        ftl.write(k)
    dt = time.perf_counter() - t0
    return dt, sum(ftl.erase_counts())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--writes", type=int, default=400_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)

    found = backends()
    if "cython" not in found:
        print("compiled kernel not built; only the python backend is available")
    results = {}
    for name, cls in found.items():
        best, erases = min(drive(cls, args.writes, args.seed) for _ in range(args.repeat))
        results[name] = (best, erases)
        print(f"{name:7s} {best:8.3f} s  {args.writes / best:12,.0f} writes/s  erases {erases}")
    if len(results) == 2:
        (tp, ep), (tc, ec) = results["python"], results["cython"]
        if ep != ec:
            raise SystemExit(f"backends disagree: {ep} vs {ec} erases")
        print(f"speedup {tp / tc:.1f}x")


if __name__ == "__main__":
    main()
