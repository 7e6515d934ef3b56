"""Band figure: min/median/max across runs of each snapshot's median estimate."""

from __future__ import annotations

import argparse
import sys

from .common import (
    EXIT_BAD_INPUT,
    EXIT_IO,
    EXIT_OK,
    STYLE,
    SchemaError,
    fail,
    lower_median,
    new_figure,
    read_snapshots,
    save_figure,
)


def band_series(runs):
    """Per time point: (times, min, median, max) of est_median across runs."""
    by_time: dict[float, list[float]] = {}
    for rows in runs.values():
        for row in rows:
            by_time.setdefault(row.parallel_time, []).append(row.est_median)
    times = sorted(by_time)
    lo, mid, hi = [], [], []
    for t in times:
        vals = sorted(by_time[t])
        lo.append(vals[0])
        mid.append(lower_median(vals))
        hi.append(vals[-1])
    return times, lo, mid, hi


def render(csv_path: str, out_path: str, title: str | None = None) -> None:
    runs = read_snapshots(csv_path)
    times, lo, mid, hi = band_series(runs)
    fig, ax = new_figure()
    ax.fill_between(
        times, lo, hi, color=STYLE["band_color"], alpha=STYLE["band_alpha"],
        label="min/max across runs",
    )
    ax.plot(times, mid, color=STYLE["line_color"], linewidth=1.2, label="median run")
    ax.set_xlabel("parallel time")
    ax.set_ylabel("size estimate")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right")
    save_figure(fig, out_path)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Estimate band over parallel time from a snapshots CSV"
    )
    parser.add_argument("csv", help="snapshots CSV from popsim run")
    parser.add_argument("--out", required=True, help="output image (.svg or .pdf)")
    parser.add_argument("--title", default=None)
    args = parser.parse_args(argv)
    try:
        render(args.csv, args.out, args.title)
    except SchemaError as exc:
        return fail(str(exc), EXIT_BAD_INPUT)
    except OSError as exc:
        return fail(str(exc), EXIT_IO)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
