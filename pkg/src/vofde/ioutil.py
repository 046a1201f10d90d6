"""Small helpers for deterministic text output."""

from __future__ import annotations


def fmt17(x) -> str:
    """Format a real with 17 significant digits (lossless float64 round trip)."""
    return "%.17g" % float(x)


def write_csv(path, header: str, rows) -> None:
    """Write rows of floats under a fixed header, one fmt17 value per cell."""
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(fmt17(v) for v in row) + "\n")
