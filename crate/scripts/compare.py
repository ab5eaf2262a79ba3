#!/usr/bin/env python3
"""Compare two nqsdyn trajectories, typically a variational run against the
exact `benchmark-ed` reference computed from the same configuration.

    python3 scripts/compare.py out/tdvp/trajectory.jsonl out/ed/trajectory.jsonl

The reference is linearly interpolated to the times of the first
trajectory. Prints one table row per record and exits with status 1 when
any observable deviates by more than --tol.
"""

import argparse
import bisect
import json
import sys

SCHEMA_VERSION = 1


def load(path):
    records = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            rec = json.loads(line)
            if rec.get("schema_version") != SCHEMA_VERSION:
                sys.exit(f"{path}:{n}: unsupported schema version {rec.get('schema_version')}")
            records.append(rec)
    if not records:
        sys.exit(f"{path}: no records")
    return records


def interpolate(records, key, t):
    times = [r["t"] for r in records]
    if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
        return None
    k = bisect.bisect_left(times, t)
    if k < len(times) and abs(times[k] - t) <= 1e-12:
        return value(records[k], key)
    a, b = records[k - 1], records[k]
    w = (t - a["t"]) / (b["t"] - a["t"])
    return (1 - w) * value(a, key) + w * value(b, key)


def value(rec, key):
    if key == "energy":
        return rec["energy"]
    return rec["observables"][key]["mean"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("run")
    ap.add_argument("reference")
    ap.add_argument("--tol", type=float, default=1e-2)
    ap.add_argument("--every", type=int, default=1, help="print every k-th row")
    args = ap.parse_args()

    run, ref = load(args.run), load(args.reference)
    keys = sorted(set(run[0]["observables"]) & set(ref[0]["observables"]))
    if not keys:
        sys.exit("no common observables")
    cols = keys + ["energy"]
    print(f"{'t':>8} " + " ".join(f"{c + ' run':>14} {c + ' ref':>14} {'diff':>9}" for c in cols))
    worst = {c: 0.0 for c in cols}
    for i, rec in enumerate(run):
        row = [f"{rec['t']:8.4f}"]
        for c in cols:
            r = interpolate(ref, c, rec["t"])
            v = value(rec, c)
            if r is None:
                row.append(f"{v:14.6f} {'-':>14} {'-':>9}")
                continue
            d = abs(v - r)
            worst[c] = max(worst[c], d)
            row.append(f"{v:14.6f} {r:14.6f} {d:9.2e}")
        if i % args.every == 0 or i == len(run) - 1:
            print(" ".join(row))
    print()
    failed = False
    for c in cols:
        # energy deviations are reported but the tolerance applies to observables
        bad = c != "energy" and worst[c] > args.tol
        failed |= bad
        print(f"max |diff| {c}: {worst[c]:.3e}{'  > tol' if bad else ''}")
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
