"""Benchmark result rows and the CSV / plain-text report files."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

REPORT_COLUMNS = ("task", "mode", "params", "sr", "te_seconds")


@dataclass
class BenchmarkRow:
    task: str
    mode: str
    params: int
    sr: float
    te_seconds: float
    position_error: float | None = None
    orientation_error: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.sr <= 1.0):
            raise ValueError(f"success rate must be in [0, 1], got {self.sr}")
        if self.te_seconds <= 0.0:
            raise ValueError(f"epoch time must be positive, got {self.te_seconds}")


def sort_rows(rows: Sequence[BenchmarkRow]) -> list[BenchmarkRow]:
    return sorted(rows, key=lambda r: (r.task, r.mode, r.params))


def write_report(rows: Sequence[BenchmarkRow], out_dir, stem: str = "benchmark") -> tuple[Path, Path]:
    """Write `<stem>.csv` (machine-readable) and `<stem>.txt` (aligned table)."""
    if not rows:
        raise ValueError("no benchmark rows to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ordered = sort_rows(rows)

    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for r in ordered:
            writer.writerow([r.task, r.mode, r.params, f"{r.sr:.4f}", f"{r.te_seconds:.4f}"])

    txt_path = out_dir / f"{stem}.txt"
    headers = ["task", "mode", "params", "SR", "TE (s)", "pos err (m)", "ori err (rad)"]
    table = [[
        r.task, r.mode, str(r.params), f"{r.sr:.3f}", f"{r.te_seconds:.3f}",
        "-" if r.position_error is None else f"{r.position_error:.5f}",
        "-" if r.orientation_error is None else f"{r.orientation_error:.4f}",
    ] for r in ordered]
    widths = [max(len(h), *(len(row[i]) for row in table)) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in table]
    txt_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return csv_path, txt_path


def save_rows(rows: Sequence[BenchmarkRow], path) -> Path:
    path = Path(path)
    path.write_text(json.dumps([asdict(r) for r in rows], indent=2) + "\n", encoding="utf-8")
    return path


def load_rows(path) -> list[BenchmarkRow]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [BenchmarkRow(**entry) for entry in payload]
