"""Latency histograms, percentiles, and the run report."""

from __future__ import annotations

import bisect
import csv
import json
import math
from array import array
from fractions import Fraction

from .engine import SEC, US

PERCENTILES = (50.0, 95.0, 99.0, 99.9)


def _bucket_edges(lo: int = US, hi: int = 10 * SEC, width: float = 0.05) -> list[int]:
    edges = [0, lo]
    x = float(lo)
    while x < hi:
        x *= 1.0 + width
        edges.append(int(math.ceil(x)))
    return edges


EDGES = _bucket_edges()


def nearest_rank(sorted_vals, p: float) -> int:
    """Nearest-rank percentile of already sorted values."""
    if not len(sorted_vals):
        raise ValueError("no samples")
    if not 0.0 < p <= 100.0:
        raise ValueError("percentile must lie in (0, 100]")
    # exact rank: 99.9 * 1000 / 100 must be 999, not 999.0000000000001
    k = math.ceil(Fraction(repr(float(p))) * len(sorted_vals) / 100)
    return sorted_vals[max(0, k - 1)]


class LatencyHistogram:
    """Log-bucketed histogram (1 us to 10 s, 5% buckets) that also keeps raw samples.

    Percentiles are exact nearest-rank values over the raw samples; the
    buckets feed the CDF export.
    """

    def __init__(self):
        self.samples = array("q")
        self._sorted: list[int] | None = None

    def add(self, v: int) -> None:
        self.samples.append(v)
        self._sorted = None

    def __len__(self) -> int:
        return len(self.samples)

    def sorted(self) -> list[int]:
        if self._sorted is None:
            self._sorted = sorted(self.samples)
        return self._sorted

    def percentile(self, p: float) -> int:
        return nearest_rank(self.sorted(), p)

    def mean(self) -> float:
        return sum(self.samples) / len(self.samples) if self.samples else 0.0

    def buckets(self) -> list[tuple[int, int, int]]:
        """(lower_ns, upper_ns, count) for every non-empty bucket."""
        counts: dict[int, int] = {}
        for v in self.sorted():
            i = bisect.bisect_right(EDGES, v) - 1
            counts[i] = counts.get(i, 0) + 1
        out = []
        for i in sorted(counts):
            upper = EDGES[i + 1] if i + 1 < len(EDGES) else -1
            out.append((EDGES[i], upper, counts[i]))
        return out

    def summary(self) -> dict:
        if not self.samples:
            return {"count": 0}
        out = {"count": len(self.samples), "mean_ns": round(self.mean(), 3)}
        for p in PERCENTILES:
            out[f"p{p:g}_ns"] = self.percentile(p)
        out["max_ns"] = self.sorted()[-1]
        return out


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def write_hist_csv(path, hists: dict[str, LatencyHistogram]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["direction", "lower_ns", "upper_ns", "count", "cdf"])
        for name, h in hists.items():
            total = len(h)
            run = 0
            for lo, hi, c in h.buckets():
                run += c
                w.writerow([name, lo, hi, c, f"{run / total:.6f}"])


def ratio_table(base: dict, treat: dict) -> dict:
    """Per-percentile latency ratios baseline/treatment plus throughput delta."""
    if base.get("workload_id") != treat.get("workload_id"):
        raise ValueError("reports describe different workloads")
    out: dict = {"latency_ratio": {}, "throughput": {}}
    for d in ("read", "write"):
        b = base["latency"].get(d, {})
        t = treat["latency"].get(d, {})
        if not b.get("count") and not t.get("count"):
            continue
        row = {}
        for p in PERCENTILES:
            key = f"p{p:g}_ns"
            if key not in b or key not in t:
                raise ValueError(f"{d} {key} missing from one report")
            row[key] = round(b[key] / t[key], 4) if t[key] else None
        out["latency_ratio"][d] = row
    bi = base["throughput"]["iops"]
    ti = treat["throughput"]["iops"]
    out["throughput"] = {
        "baseline_iops": bi,
        "treatment_iops": ti,
        "delta": round(ti - bi, 3),
        "relative": round((ti - bi) / bi, 6) if bi else None,
    }
    return out
