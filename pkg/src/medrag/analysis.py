"""Binned frequency analyses of score vs. contradiction salience.

Two grids: a 5x5 joint count table over combined-score and salience
bins, and a per-5-year-interval distribution of salience (rows
normalized to 1). Bins are left-closed/right-open with the last bin
closed; scores outside [0, 1] are clamped into the edge bins and
tallied separately since the combined score can go negative.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import math

import numpy as np

from .errors import ConfigError, DomainError

BIN_EDGES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
N_BINS = len(BIN_EDGES) - 1
YEAR_ANCHOR = 1975
YEAR_MAX = 2025
YEAR_STEP = 5


@dataclass(frozen=True)
class BinSpec:
    """Left-closed/right-open bins over [0, 1]; the last bin is closed."""

    edges: tuple[float, ...] = BIN_EDGES

    def __post_init__(self):
        if list(self.edges) != sorted(set(self.edges)):
            raise DomainError("bin edges must be strictly increasing")
        if self.edges[0] != 0.0 or self.edges[-1] != 1.0:
            raise DomainError("bin edges must span [0, 1]")

    @property
    def n(self) -> int:
        return len(self.edges) - 1

    def index(self, value: float) -> int:
        """Bin index for an in-range value; out-of-range raises."""
        if not math.isfinite(value):
            raise DomainError(f"cannot bin non-finite value {value}")
        if value < self.edges[0] or value > self.edges[-1]:
            raise DomainError(f"value {value} outside [0, 1]")
        for i in range(self.n):
            if value < self.edges[i + 1]:
                return i
        return self.n - 1  # exactly 1.0 falls in the closed last bin

    def index_clamped(self, value: float) -> tuple[int, bool]:
        """Bin index with out-of-range values clamped to the edge bins;
        the flag reports whether clamping happened."""
        if not math.isfinite(value):
            raise DomainError(f"cannot bin non-finite value {value}")
        if value < self.edges[0]:
            return 0, True
        if value > self.edges[-1]:
            return self.n - 1, True
        return self.index(value), False

    def labels(self) -> list[str]:
        return [
            f"{self.edges[i]:.1f}-{self.edges[i + 1]:.1f}" for i in range(self.n)
        ]


def joint_histogram(
    docs: Iterable[tuple[float, float]], spec: BinSpec = BinSpec()
) -> tuple[np.ndarray, int]:
    """Counts per (salience row, score column) cell plus the number of
    score values that had to be clamped into an edge bin.

    Input items are (score, salience) pairs; the grid total equals the
    input size.
    """
    grid = np.zeros((spec.n, spec.n), dtype=np.int64)
    out_of_range = 0
    for score, salience in docs:
        col, clamped = spec.index_clamped(score)
        row = spec.index(salience)
        grid[row, col] += 1
        if clamped:
            out_of_range += 1
    return grid, out_of_range


def year_intervals() -> list[tuple[int, int]]:
    """5-year intervals anchored at 1975; the last absorbs 2025."""
    out = []
    start = YEAR_ANCHOR
    while start + YEAR_STEP <= YEAR_MAX:
        end = start + YEAR_STEP - 1
        if end + YEAR_STEP > YEAR_MAX:
            end = YEAR_MAX
        out.append((start, end))
        start = end + 1
    return out


def interval_label(interval: tuple[int, int]) -> str:
    return f"{interval[0]}-{interval[1]}"


def temporal_distribution(
    docs: Iterable[tuple[int, float]], spec: BinSpec = BinSpec()
) -> tuple[list[tuple[int, int]], np.ndarray, np.ndarray]:
    """Salience proportions per 5-year interval.

    Returns (intervals, grid, counts): grid rows are per-interval
    proportions over the salience bins, each non-empty row summing to
    1; empty intervals stay all-zero and are identifiable by a zero
    count.
    """
    intervals = year_intervals()
    counts = np.zeros(len(intervals), dtype=np.int64)
    grid = np.zeros((len(intervals), spec.n), dtype=np.float64)
    for year, salience in docs:
        if year < YEAR_ANCHOR or year > YEAR_MAX:
            raise DomainError(
                f"year {year} outside supported span [{YEAR_ANCHOR}, {YEAR_MAX}]"
            )
        row = min((year - YEAR_ANCHOR) // YEAR_STEP, len(intervals) - 1)
        grid[row, spec.index(salience)] += 1.0
        counts[row] += 1
    for row in range(len(intervals)):
        if counts[row] > 0:
            grid[row] /= counts[row]
    return intervals, grid, counts


JOINT_GRID_CSV = "score_contradiction_grid.csv"
TEMPORAL_GRID_CSV = "temporal_contradiction_grid.csv"
ANALYSIS_NOTES_JSON = "analysis_notes.json"


def export_analysis(
    joint_grid: np.ndarray,
    out_of_range: int,
    intervals: Sequence[tuple[int, int]],
    temporal_grid: np.ndarray,
    interval_counts: np.ndarray,
    out_dir: str | Path,
    spec: BinSpec = BinSpec(),
    png: bool = False,
    joint: bool = True,
    temporal: bool = True,
) -> list[Path]:
    """Write the requested grids as CSV (optionally a heatmap PNG);
    returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = spec.labels()
    written = []

    if joint:
        joint_path = out_dir / JOINT_GRID_CSV
        with joint_path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["salience_bin"] + [f"s_{lab}" for lab in labels])
            for row in range(spec.n):
                writer.writerow([labels[row]] + [int(v) for v in joint_grid[row]])
        written.append(joint_path)

    if temporal:
        temporal_path = out_dir / TEMPORAL_GRID_CSV
        with temporal_path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["interval", "n_docs"] + [f"c_{lab}" for lab in labels])
            for i, interval in enumerate(intervals):
                writer.writerow(
                    [interval_label(interval), int(interval_counts[i])]
                    + [f"{v:.10g}" for v in temporal_grid[i]]
                )
        written.append(temporal_path)

    notes_path = out_dir / ANALYSIS_NOTES_JSON
    notes_path.write_text(
        json.dumps(
            {
                "score_out_of_range": int(out_of_range),
                "empty_intervals": [
                    interval_label(intervals[i])
                    for i in range(len(intervals))
                    if interval_counts[i] == 0
                ],
            },
            ensure_ascii=False,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    written.append(notes_path)

    if png:
        written.append(render_heatmap(temporal_grid, intervals, spec, out_dir))
    return written


def render_heatmap(
    temporal_grid: np.ndarray,
    intervals: Sequence[tuple[int, int]],
    spec: BinSpec,
    out_dir: Path,
) -> Path:
    try:
        import matplotlib
    except ImportError:
        raise ConfigError(
            "PNG rendering needs matplotlib; install the 'plots' extra"
        ) from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 5))
    im = ax.imshow(temporal_grid, aspect="auto", cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(spec.n), labels=spec.labels())
    ax.set_yticks(range(len(intervals)), labels=[interval_label(iv) for iv in intervals])
    ax.set_xlabel("contradiction salience bin")
    ax.set_ylabel("publication interval")
    fig.colorbar(im, ax=ax, label="proportion")
    fig.tight_layout()
    path = Path(out_dir) / "temporal_contradiction_heatmap.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
