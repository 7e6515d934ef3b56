"""Relative-error sweep: converged-window error distribution per population size."""

from __future__ import annotations

import argparse
import math
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


def window_errors(csv_path: str, window: float):
    """(n, sorted relative errors) for snapshots inside the trailing window.

    The error of a snapshot is (est_median - log2 n) / log2 n with n taken
    from the snapshot's own size column.
    """
    runs = read_snapshots(csv_path)
    t_max = max(row.parallel_time for rows in runs.values() for row in rows)
    t_start = t_max * (1.0 - window)
    errors = []
    sizes = set()
    for rows in runs.values():
        for row in rows:
            if row.parallel_time < t_start:
                continue
            log_n = math.log2(row.n)
            errors.append((row.est_median - log_n) / log_n)
            sizes.add(row.n)
    if not errors:
        raise SchemaError(f"{csv_path!r} has no snapshots in the converged window")
    if len(sizes) != 1:
        raise SchemaError(f"{csv_path!r} mixes population sizes {sorted(sizes)}")
    return sizes.pop(), sorted(errors)


def render(csv_paths: list[str], out_path: str, window: float) -> None:
    series = sorted(window_errors(path, window) for path in csv_paths)
    fig, ax = new_figure()
    ns = [n for n, _ in series]
    med = [lower_median(errs) for _, errs in series]
    lo = [errs[0] for _, errs in series]
    hi = [errs[-1] for _, errs in series]
    ax.vlines(ns, lo, hi, color=STYLE["band_color"], linewidth=3, label="min/max")
    ax.plot(ns, med, "o-", color=STYLE["marker_color"], label="median")
    ax.axhline(0.0, color="gray", linewidth=0.8)
    ax.set_xscale("log")
    ax.set_xlabel("population size n")
    ax.set_ylabel("relative error of the size estimate")
    ax.legend(loc="upper right")
    save_figure(fig, out_path)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Relative-error distribution per population size"
    )
    parser.add_argument("csvs", nargs="+", help="one snapshots CSV per population size")
    parser.add_argument("--out", required=True, help="output image (.svg or .pdf)")
    parser.add_argument(
        "--window",
        type=float,
        default=0.5,
        help="trailing fraction of the time axis treated as converged (default 0.5)",
    )
    args = parser.parse_args(argv)
    if not 0 < args.window <= 1:
        return fail("--window must be in (0, 1]", EXIT_BAD_INPUT)
    try:
        render(args.csvs, args.out, args.window)
    except SchemaError as exc:
        return fail(str(exc), EXIT_BAD_INPUT)
    except OSError as exc:
        return fail(str(exc), EXIT_IO)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
