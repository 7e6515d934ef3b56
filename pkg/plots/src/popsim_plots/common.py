"""Shared CSV schema handling, styling, and deterministic figure output."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "popsim-plots"  # stable SVG element ids

import matplotlib.pyplot as plt  # noqa: E402

CSV_HEADER = (
    "run,parallel_time,n,est_min,est_median,est_max,"
    "phase_exchange,phase_hold,phase_reset,resets,max_bits"
)

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_IO = 3

# one place for every styling constant so figures stay reproducible
STYLE = {
    "figsize": (8.0, 4.5),
    "band_color": "#78a5d1",
    "band_alpha": 0.45,
    "line_color": "#1f4e79",
    "marker_color": "#1f4e79",
    "event_color": "#b03a2e",
    "grid_alpha": 0.3,
}


class SchemaError(ValueError):
    """Input file does not conform to the snapshot CSV schema."""


@dataclass(frozen=True)
class SnapshotRow:
    run: int
    parallel_time: float
    n: int
    est_min: float
    est_median: float
    est_max: float


def read_snapshots(path: str) -> dict[int, list[SnapshotRow]]:
    """Load a snapshots CSV grouped by run index; raises SchemaError on mismatch."""
    runs: dict[int, list[SnapshotRow]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise SchemaError(f"unexpected header in {path!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 11:
                raise SchemaError(f"{path!r} line {lineno}: expected 11 columns")
            try:
                row = SnapshotRow(
                    run=int(fields[0]),
                    parallel_time=float(fields[1]),
                    n=int(fields[2]),
                    est_min=float(fields[3]),
                    est_median=float(fields[4]),
                    est_max=float(fields[5]),
                )
            except ValueError as exc:
                raise SchemaError(f"{path!r} line {lineno}: {exc}") from exc
            runs.setdefault(row.run, []).append(row)
    if not runs:
        raise SchemaError(f"{path!r} contains no data rows")
    return runs


def read_manifest_event_times(path: str) -> list[float]:
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    schedule = manifest.get("config", {}).get("adversarySchedule", [])
    return [float(ev["atParallelTime"]) for ev in schedule]


def new_figure():
    fig, ax = plt.subplots(figsize=STYLE["figsize"])
    ax.grid(True, alpha=STYLE["grid_alpha"])
    return fig, ax


def save_figure(fig, out_path: str) -> None:
    """Write a vector image with volatile metadata stripped (no timestamps)."""
    if out_path.endswith(".svg"):
        fig.savefig(out_path, format="svg", metadata={"Date": None})
    elif out_path.endswith(".pdf"):
        fig.savefig(out_path, format="pdf", metadata={"CreationDate": None})
    else:
        raise SchemaError("output path must end in .svg or .pdf")
    plt.close(fig)


def lower_median(sorted_values):
    return sorted_values[(len(sorted_values) - 1) // 2]


def fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code
