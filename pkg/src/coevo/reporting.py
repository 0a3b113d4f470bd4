"""Report rows and artifact emission shared by the engine and the CLI."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

GAP_RECOMPUTE_TOL = 1e-9

TABLE_COLUMNS = ("Instance", "Base", "CAE", "Gap(%)")


class EmptyRun(Exception):
    pass


@dataclass(frozen=True)
class ReportRow:
    """One comparison row: baseline objective vs evolved objective."""

    scenario_id: str
    base_obj: float
    cae_obj: float
    gap_percent: float
    runs_averaged: int
    seeds: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not math.isnan(self.cae_obj):
            expected = (self.base_obj - self.cae_obj) / self.base_obj * 100.0
            if abs(expected - self.gap_percent) > GAP_RECOMPUTE_TOL:
                raise ValueError(
                    f"gap_percent {self.gap_percent!r} does not recompute from "
                    f"base/cae ({expected!r})"
                )

    def to_json(self) -> dict[str, Any]:
        return {
            "scenario_id": self.scenario_id,
            "base_obj": self.base_obj,
            "cae_obj": self.cae_obj if not math.isnan(self.cae_obj) else "nan",
            "gap_percent": self.gap_percent,
            "runs_averaged": self.runs_averaged,
            "seeds": list(self.seeds),
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "ReportRow":
        cae = data["cae_obj"]
        return cls(
            scenario_id=data["scenario_id"],
            base_obj=float(data["base_obj"]),
            cae_obj=math.nan if cae == "nan" else float(cae),
            gap_percent=float(data["gap_percent"]),
            runs_averaged=int(data["runs_averaged"]),
            seeds=tuple(data["seeds"]),
        )


def rows_to_csv(rows: Sequence[ReportRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["instance", "base_obj", "cae_obj", "gap_percent"])
    for row in rows:
        writer.writerow(
            [row.scenario_id, repr(row.base_obj), repr(row.cae_obj), repr(row.gap_percent)]
        )
    return buffer.getvalue()


def rows_from_csv(text: str) -> list[tuple[str, float, float, float]]:
    out = []
    for record in csv.DictReader(io.StringIO(text)):
        out.append(
            (
                record["instance"],
                float(record["base_obj"]),
                float(record["cae_obj"]),
                float(record["gap_percent"]),
            )
        )
    return out


def rows_to_table(rows: Sequence[ReportRow]) -> str:
    """Fixed column order: Instance, Base, CAE, Gap(%)."""
    cells = [list(TABLE_COLUMNS)]
    for row in rows:
        cells.append(
            [
                row.scenario_id,
                f"{row.base_obj:.6g}",
                f"{row.cae_obj:.6g}",
                f"{row.gap_percent:.2f}",
            ]
        )
    widths = [max(len(line[col]) for line in cells) for col in range(len(TABLE_COLUMNS))]
    lines = []
    for index, line in enumerate(cells):
        lines.append("  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip())
        if index == 0:
            lines.append("  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"


def save_rows_json(rows: Sequence[ReportRow], path: Path) -> None:
    payload = {"rows": [row.to_json() for row in rows]}
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_rows_json(path: Path) -> list[ReportRow]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [ReportRow.from_json(r) for r in data["rows"]]


def convergence_csv(best_fitness_by_generation: Iterable[tuple[int, float]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["generation", "best_fitness"])
    for generation, fitness in best_fitness_by_generation:
        writer.writerow([generation, repr(fitness) if math.isfinite(fitness) else "inf"])
    return buffer.getvalue()


def load_reference_gaps() -> dict[str, Any]:
    """Published reference gap tables used as read-only report columns."""
    text = resources.files("coevo").joinpath("data/reference_gaps.json").read_text("utf-8")
    return json.loads(text)
