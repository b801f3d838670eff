"""CSV tables and the run manifest written next to them."""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import ConfigError

MANIFEST_NAME = "manifest.json"


def format_value(value) -> str:
    """Stable text for a CSV cell: floats with 17 significant digits."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    return str(value)


@dataclass
class CsvTable:
    """A header row and data rows, rendered byte-stably."""
    name: str
    columns: list[str]
    rows: list[list] = field(default_factory=list)

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"{self.name}: row has {len(values)} cells, header has {len(self.columns)}")
        self.rows.append(list(values))

    def render(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([format_value(v) for v in row])
        return buffer.getvalue()

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / self.name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            f.write(self.render())
        return path


@dataclass
class RunManifest:
    """Record of one scenario run."""
    scenario: str
    mode: str
    analysis: str
    scenario_text: str  # resolved scenario document; parse it to re-run
    parameters: dict
    artifacts: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    tool_version: str = __version__
    status: str = "ok"
    error: Optional[str] = None
    run_id: Optional[str] = None
    run_timestamp: Optional[str] = None
    wall_time_s: Optional[float] = None

    def to_dict(self, seedless: bool = False) -> dict:
        data = asdict(self)
        if seedless:
            for key in ("run_id", "run_timestamp", "wall_time_s"):
                data.pop(key)
        return data

    def write(self, out_dir: Path, seedless: bool = False) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n", encoding="utf-8") as f:
            json.dump(self.to_dict(seedless), f, indent=2, sort_keys=True, default=_jsonable)
            f.write("\n")
        return path

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        with open(path, "r", encoding="utf-8") as f:
            return cls(**json.load(f))


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, "value"):
        return value.value
    raise TypeError(f"cannot serialize {type(value).__name__}")


def read_guess(path: Path, state_labels: Sequence[str], references: Sequence[str] = ()) -> tuple[np.ndarray, dict]:
    """
    Initial state (and closure references) from an equilibrium CSV row.

    Raises:
        ConfigError: file unreadable or a needed column missing.
    """
    try:
        with open(path, "r", newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
    except OSError as exc:
        raise ConfigError(f"cannot read guess file {path}: {exc}") from None
    if len(rows) != 1:
        raise ConfigError(f"guess file {path} must hold exactly one data row, found {len(rows)}")
    row = rows[0]
    try:
        x = np.array([float(row[label]) for label in state_labels])
        refs = {name: float(row[name]) for name in references}
    except KeyError as exc:
        raise ConfigError(f"guess file {path} has no column {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"guess file {path}: {exc}") from None
    return x, refs
