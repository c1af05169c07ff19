"""Per-round KPI records and their CSV / JSON-lines export.

The CSV column order below is the stable contract; numeric cells use
locale-independent formatting with 9 significant digits, booleans are
"true"/"false", and a missing epsilon bound is an empty cell.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

CSV_COLUMNS = (
    "round_id",
    "global_validation_accuracy",
    "mean_client_local_accuracy",
    "accepted",
    "participating_clients",
    "bytes_on_wire",
    "epsilon_bound",
    "wall_ticks",
)


@dataclass(frozen=True)
class MetricsRecord:
    round_id: int
    global_validation_accuracy: float
    mean_client_local_accuracy: float
    accepted: bool
    participating_clients: int
    bytes_on_wire: int
    epsilon_bound: float | None
    wall_ticks: int


def format_number(value: float) -> str:
    return f"{value:.9g}"


def _cell(record: MetricsRecord, column: str) -> str:
    value = getattr(record, column)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_number(value)
    return str(value)


def export_metrics(records, out_dir) -> tuple[Path, Path]:
    """Write metrics.csv and metrics.jsonl under out_dir; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "metrics.csv"
    jsonl_path = out_dir / "metrics.jsonl"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for record in records:
            writer.writerow([_cell(record, c) for c in CSV_COLUMNS])
    with jsonl_path.open("w") as fh:
        for record in records:
            fh.write(json.dumps(asdict(record), sort_keys=True) + "\n")
    return csv_path, jsonl_path


def parse_metrics_csv(path) -> list[MetricsRecord]:
    """Re-read an exported metrics.csv into records."""
    records = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            cells = dict(zip(CSV_COLUMNS, row))
            records.append(
                MetricsRecord(
                    round_id=int(cells["round_id"]),
                    global_validation_accuracy=float(cells["global_validation_accuracy"]),
                    mean_client_local_accuracy=float(cells["mean_client_local_accuracy"]),
                    accepted=cells["accepted"] == "true",
                    participating_clients=int(cells["participating_clients"]),
                    bytes_on_wire=int(cells["bytes_on_wire"]),
                    epsilon_bound=(
                        None if cells["epsilon_bound"] == "" else float(cells["epsilon_bound"])
                    ),
                    wall_ticks=int(cells["wall_ticks"]),
                )
            )
    return records
