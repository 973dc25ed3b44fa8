"""Command-line entry point: run, sweep, compare, wear-sim."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import __version__
from .config import ConfigError, RackConfig, load, set_path, from_dict
from .metrics import ratio_table, write_hist_csv, write_json

log = logging.getLogger("racksim")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

AXIS_ALIASES = {
    "write_ratio": "workload.write_ratio",
    "rate": "workload.rate",
    "preset": "workload.preset",
    "profile": "device.profile",
    "network": "network.class",
    "seed": "seed",
    "mode": "mode",
    "duration": "duration_s",
}


class UsageError(ValueError):
    pass


def output_dir(cfg: RackConfig, explicit: str | None) -> Path:
    base = explicit or os.environ.get("RACKSIM_OUTPUT_DIR")
    p = Path(base) if base else Path("racksim-out") / cfg.name
    p.mkdir(parents=True, exist_ok=True)
    return p


def _parse_value(text: str):
    return yaml.safe_load(text)


def apply_overrides(cfg: RackConfig, sets: list[str]) -> RackConfig:
    if not sets:
        return cfg
    d = cfg.to_dict()
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects path=value, got {item!r}")
        path, val = item.split("=", 1)
        set_path(d, path.strip(), _parse_value(val))
    return from_dict(d)


def write_artifacts(out: Path, rack, report: dict) -> None:
    write_json(out / "report.json", report)
    write_hist_csv(out / "latency_hist.csv", rack.hist)
    with open(out / "wear.csv", "w", newline="") as f:
        w = csv.DictWriter(f, ["time_ns", "server", "ssd", "phi", "rate", "lambda_local", "lambda_rack"])
        w.writeheader()
        w.writerows(report["wear"])
    with open(out / "gc_log.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["time_ns", "unit", "vssd", "event", "detail"])
        w.writerows(rack.gc_log)


def run_one(cfg: RackConfig, out: Path) -> dict:
    from .rack import Rack

    rack = Rack(cfg)
    report = rack.run()
    write_artifacts(out, rack, report)
    return report


def _summary_row(label, report: dict) -> dict:
    r = report["latency"].get("read", {})
    w = report["latency"].get("write", {})
    return {
        "value": label,
        "mode": report["mode"],
        "iops": report["throughput"]["iops"],
        "read_p50_ns": r.get("p50_ns", ""),
        "read_p99_ns": r.get("p99_ns", ""),
        "read_p99.9_ns": r.get("p99.9_ns", ""),
        "write_p99.9_ns": w.get("p99.9_ns", ""),
        "gc_episodes": report["gc"]["episodes"],
        "redirected_reads": report["reads"]["redirected"],
    }


def sweep_configs(cfg: RackConfig, axis: str, values: list) -> list[tuple[str, RackConfig]]:
    """One config per value; every run shares the base seed."""
    if not values:
        raise UsageError("sweep needs at least one value")
    out = []
    for v in values:
        label = str(v)
        if axis == "scheduler":
            # VARIANT or VARIANT:baseline / VARIANT:coordinated
            variant, _, how = label.partition(":")
            c = cfg.replace("scheduler.variant", variant.upper())
            if how:
                if how not in ("baseline", "coordinated"):
                    raise UsageError(f"scheduler value {label!r}: expected baseline or coordinated")
                c = c.replace("scheduler.coordinated", how == "coordinated")
        else:
            path = AXIS_ALIASES.get(axis, axis)
            try:
                c = cfg.replace(path, v)
            except ConfigError as e:
                if "unknown config path" in str(e):
                    raise UsageError(f"unknown sweep axis {axis!r}") from None
                raise
        c = c.replace("name", f"{cfg.name}-{axis}-{label}".replace("/", "_").replace(":", "-"))
        out.append((label, c))
    return out


def expand_values(axis: str, raw: str) -> list:
    items = [x.strip() for x in raw.split(",") if x.strip()]
    if axis == "scheduler":
        out = []
        for it in items:
            if ":" in it:
                out.append(it)
            else:
                out.extend([f"{it}:baseline", f"{it}:coordinated"])
        return out
    return [_parse_value(x) for x in items]


def cmd_run(args) -> int:
    cfg = apply_overrides(load(args.config), args.set)
    if args.seed is not None:
        cfg = cfg.replace("seed", args.seed)
    out = output_dir(cfg, args.out)
    report = run_one(cfg, out)
    lat = report["latency"]["read"]
    log.info("wrote %s (read p99.9 %s ns, %s IOPS)", out / "report.json", lat.get("p99.9_ns"), report["throughput"]["iops"])
    print(out / "report.json")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = apply_overrides(load(args.config), args.set)
    values = expand_values(args.axis, args.values)
    runs = sweep_configs(cfg, args.axis, values)
    base = output_dir(cfg, args.out)
    rows = []
    for label, c in runs:
        sub = base / c.name
        sub.mkdir(parents=True, exist_ok=True)
        report = run_one(c, sub)
        rows.append(_summary_row(label, report))
        print(sub / "report.json")
    with open(base / "summary.csv", "w", newline="") as f:
        w = csv.DictWriter(f, list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        a = json.loads(Path(args.baseline).read_text())
        b = json.loads(Path(args.treatment).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read report: {e}") from None
    try:
        table = ratio_table(a, b)
    except (KeyError, ValueError) as e:
        raise UsageError(f"cannot compare: {e}") from None
    text = json.dumps(table, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_wear_sim(args) -> int:
    from .wear import WearSim, sim_config_from

    cfg = apply_overrides(load(args.config), args.set)
    out = output_dir(cfg, args.out)
    seeds = range(cfg.seed, cfg.seed + args.seeds)
    results = []
    rows = []
    for s in seeds:
        sim = WearSim(sim_config_from(cfg, seed=s, swap=False if args.no_swap else None))
        res = sim.run()
        res["seed"] = s
        results.append(res)
        for r in sim.rows:
            rows.append(dict(seed=s, **r))
    write_json(out / "wear_report.json", {"runs": results})
    with open(out / "wear.csv", "w", newline="") as f:
        w = csv.DictWriter(f, ["seed", "time_days", "server", "ssd", "phi", "rate", "lambda_local", "lambda_rack"])
        w.writeheader()
        w.writerows(rows)
    worst = max(r["max_lambda_local_after_warmup"] for r in results)
    print(f"max local lambda after warm-up over {len(results)} seed(s): {worst:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="racksim", description="Rack-scale storage simulator")
    p.add_argument("--version", action="version", version=f"racksim {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run one configuration")
    r.add_argument("config")
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    r.add_argument("--set", action="append", default=[], metavar="PATH=VALUE")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="run one configuration per axis value")
    s.add_argument("config")
    s.add_argument("--axis", required=True)
    s.add_argument("--values", required=True, help="comma-separated list")
    s.add_argument("--out")
    s.add_argument("--set", action="append", default=[], metavar="PATH=VALUE")
    s.set_defaults(fn=cmd_sweep)

    c = sub.add_parser("compare", help="latency ratios baseline/treatment")
    c.add_argument("baseline")
    c.add_argument("treatment")
    c.add_argument("--out")
    c.set_defaults(fn=cmd_compare)

    w = sub.add_parser("wear-sim", help="accelerated multi-year wear simulation")
    w.add_argument("config")
    w.add_argument("--seeds", type=int, default=1)
    w.add_argument("--no-swap", action="store_true")
    w.add_argument("--out")
    w.add_argument("--set", action="append", default=[], metavar="PATH=VALUE")
    w.set_defaults(fn=cmd_wear_sim)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
