#!/usr/bin/env python3
"""Render a visibility-sweep CSV as a loss-vs-v figure.

Reads the CSV written by ``lhs-forge sweep`` (read-only), draws the test loss
as scatter + line, adds labeled vertical markers at analytic thresholds, and
shades the estimated threshold bracket.  Output is deterministic: rendering
the same inputs twice produces byte-identical image files.

    plotview.py --in sweep.csv --marker 0.5774:1/sqrt3 --out fig.png
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

CSV_HEADER = ["v", "train_loss", "test_loss", "steps", "seed", "verdict", "wall_time_s"]

BRACKET_COLOR = "#f4c95d"
LINE_COLOR = "#30557d"
MARKER_COLOR = "#b3443c"


class PlotError(ValueError):
    """Malformed input (CSV or marker syntax)."""


@dataclass(frozen=True)
class FigureSpec:
    csv_path: str
    out_path: str
    markers: tuple[tuple[float, str], ...] = ()
    log_scale: bool = False
    bracket_eps: float | None = 1e-3

    def __post_init__(self):
        for value, label in self.markers:
            if not 0.0 <= value <= 1.0:
                raise PlotError(f"marker {label!r} at {value} outside [0, 1]")


@dataclass
class SweepPoint:
    v: float
    test_loss: float


def read_sweep_csv(path: str | Path) -> list[SweepPoint]:
    """Parse the sweep CSV; raises PlotError naming the offending line."""
    path = Path(path)
    if not path.exists():
        raise PlotError(f"{path}: no such file")
    points: list[SweepPoint] = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            row = next(csv.reader([line]))
            if row == CSV_HEADER:
                continue
            if len(row) != len(CSV_HEADER):
                raise PlotError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, "
                                f"got {len(row)}")
            try:
                v = float(row[0])
                test_loss = float(row[2])
                # remaining typed fields are schema-checked even though the
                # figure does not use them
                float(row[1])
                int(row[3])
                int(row[4])
                float(row[6])
            except ValueError as exc:
                raise PlotError(f"{path}:{lineno}: {exc}") from None
            points.append(SweepPoint(v=v, test_loss=test_loss))
    if not points:
        raise PlotError(f"{path}: no sweep records")
    return points


def best_per_visibility(points: list[SweepPoint]) -> list[SweepPoint]:
    """Minimum test loss across repeats at each v, sorted by v."""
    best: dict[float, float] = {}
    for p in points:
        best[p.v] = min(best.get(p.v, float("inf")), p.test_loss)
    return [SweepPoint(v, best[v]) for v in sorted(best)]


def threshold_bracket(points: list[SweepPoint], eps: float) -> tuple[float, float] | None:
    """The (largest passing v, smallest failing v) interval, if both exist."""
    passing = [p.v for p in points if p.test_loss <= eps]
    failing = [p.v for p in points if p.test_loss > eps]
    if not passing or not failing:
        return None
    lo, hi = max(passing), min(failing)
    return (min(lo, hi), max(lo, hi))


def draw_figure(spec: FigureSpec):
    """Build the matplotlib figure described by ``spec`` (no file output)."""
    points = best_per_visibility(read_sweep_csv(spec.csv_path))
    vs = [p.v for p in points]
    losses = [p.test_loss for p in points]

    fig, ax = plt.subplots(figsize=(6.4, 4.2), dpi=160)
    bracket = None
    if spec.bracket_eps is not None:
        bracket = threshold_bracket(points, spec.bracket_eps)
    if bracket is not None:
        ax.axvspan(bracket[0], bracket[1], color=BRACKET_COLOR, alpha=0.35, lw=0,
                   label=f"bracket [{bracket[0]:.3f}, {bracket[1]:.3f}]")
    ax.plot(vs, losses, "-", color=LINE_COLOR, lw=1.2, zorder=2)
    ax.scatter(vs, losses, s=26, color=LINE_COLOR, zorder=3, label="test loss")
    for value, label in spec.markers:
        ax.axvline(value, color=MARKER_COLOR, ls="--", lw=1.2, zorder=1,
                   label=f"{label} = {value:.4f}")
    ax.set_xlabel("visibility v")
    ax.set_ylabel("final test loss")
    if spec.log_scale:
        ax.set_yscale("log")
    ax.legend(loc="upper left", frameon=False, fontsize=9)
    ax.grid(alpha=0.25, lw=0.5)
    fig.tight_layout()
    return fig


def render(spec: FigureSpec) -> None:
    """Draw the figure described by ``spec`` and write it to spec.out_path."""
    fig = draw_figure(spec)
    # strip volatile metadata so repeated renders are byte-identical
    fig.savefig(spec.out_path, metadata={"Software": None})
    plt.close(fig)


def parse_marker(text: str) -> tuple[float, str]:
    """``0.5774:1/sqrt3`` -> (0.5774, "1/sqrt3"); label defaults to the value."""
    value, _, label = text.partition(":")
    try:
        v = float(value)
    except ValueError:
        raise PlotError(f"bad marker {text!r}: expected VALUE[:LABEL]") from None
    return v, (label or value)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--in", dest="infile", required=True, help="sweep CSV path")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--marker", action="append", default=[],
                        help="VALUE[:LABEL] vertical threshold marker; repeatable")
    parser.add_argument("--eps", type=float, default=1e-3,
                        help="loss cutoff for the shaded bracket")
    parser.add_argument("--no-bracket", action="store_true",
                        help="skip bracket shading")
    parser.add_argument("--log", action="store_true", help="log-scale loss axis")
    args = parser.parse_args(argv)
    try:
        spec = FigureSpec(
            csv_path=args.infile,
            out_path=args.out,
            markers=tuple(parse_marker(m) for m in args.marker),
            log_scale=args.log,
            bracket_eps=None if args.no_bracket else args.eps,
        )
        render(spec)
    except PlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
