"""Adversary timeline: estimate band with markers at population-change events."""

from __future__ import annotations

import argparse
import json
import sys

from .common import (
    EXIT_BAD_INPUT,
    EXIT_IO,
    EXIT_OK,
    STYLE,
    SchemaError,
    fail,
    new_figure,
    read_manifest_event_times,
    read_snapshots,
    save_figure,
)
from .estimate_band import band_series


def render(csv_path: str, out_path: str, manifest_path: str | None) -> None:
    runs = read_snapshots(csv_path)
    times, lo, mid, hi = band_series(runs)
    event_times: list[float] = []
    if manifest_path is not None:
        try:
            event_times = read_manifest_event_times(manifest_path)
        except (OSError, json.JSONDecodeError, KeyError, ValueError):
            print(
                f"warning: could not read manifest {manifest_path!r}; "
                "event markers omitted",
                file=sys.stderr,
            )
    fig, ax = new_figure()
    ax.fill_between(
        times, lo, hi, color=STYLE["band_color"], alpha=STYLE["band_alpha"],
        label="min/max across runs",
    )
    ax.plot(times, mid, color=STYLE["line_color"], linewidth=1.2, label="median run")
    for i, t in enumerate(event_times):
        ax.axvline(
            t,
            color=STYLE["event_color"],
            linestyle="--",
            linewidth=1.0,
            label="population change" if i == 0 else None,
        )
    ax.set_xlabel("parallel time")
    ax.set_ylabel("size estimate")
    ax.legend(loc="lower right")
    save_figure(fig, out_path)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Estimate timeline with adversary event markers"
    )
    parser.add_argument("csv", help="snapshots CSV from popsim run")
    parser.add_argument(
        "--manifest",
        default=None,
        help="manifest JSON of the batch; event times are read from it",
    )
    parser.add_argument("--out", required=True, help="output image (.svg or .pdf)")
    args = parser.parse_args(argv)
    try:
        render(args.csv, args.out, args.manifest)
    except SchemaError as exc:
        return fail(str(exc), EXIT_BAD_INPUT)
    except OSError as exc:
        return fail(str(exc), EXIT_IO)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
