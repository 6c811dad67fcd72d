#!/usr/bin/env python3
"""Fetch the public NAFLD cohort (R package `survival`, tables nafld1 and nafld3)
and write it as survkit episode and timeline files.

Episodes: one row per subject, follow-up in years since entry, with entry age
(for the age axis) and sex. Timeline: first diagnosis time of nafld, diabetes,
htn and dyslipidemia, in years since entry (negative when diagnosed before).

Needs the `rdatasets` package (pip install rdatasets).
"""

import argparse
import csv
import pathlib
import sys

VARIABLES = ("nafld", "diabetes", "htn", "dyslipidemia")
DAYS_PER_YEAR = 365.25


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("output_dir", type=pathlib.Path)
    parser.add_argument("--optional", action="store_true", help="exit 0 when the data source is unavailable")
    args = parser.parse_args()

    try:
        import rdatasets

        subjects = rdatasets.data("survival", "nafld1")
        events = rdatasets.data("survival", "nafld3")
    except Exception as exc:  # missing package or download failure
        print(f"NAFLD data unavailable: {exc}", file=sys.stderr)
        return 0 if args.optional else 1

    args.output_dir.mkdir(parents=True, exist_ok=True)
    with open(args.output_dir / "nafld_episodes.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "tstart", "tstop", "status", "male", "age"])
        for r in subjects.itertuples():
            w.writerow([r.id, 0, repr(r.futime / DAYS_PER_YEAR), int(r.status), int(r.male), int(r.age)])

    first = events[events.event.isin(VARIABLES)].groupby(["id", "event"]).days.min().reset_index()
    known = set(subjects.id)
    with open(args.output_dir / "nafld_timeline.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "time", "variable", "value"])
        for r in first.sort_values(["id", "event"]).itertuples():
            if r.id in known:
                w.writerow([r.id, repr(r.days / DAYS_PER_YEAR), r.event, 1])
    print(f"wrote {len(subjects)} subjects to {args.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
