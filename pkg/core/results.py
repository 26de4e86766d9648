"""Result writers: results.csv / results.json rows, summary.json and manifest.json."""

import csv
import json
import math
import platform
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import scipy

from utils.logging_setup import get_logger

logger = get_logger("results")

PACKAGE_NAME = "langevin-clt"
FALLBACK_VERSION = "0.1.0"


def library_version() -> str:
    try:
        return metadata.version(PACKAGE_NAME)
    except metadata.PackageNotFoundError:
        return FALLBACK_VERSION


def _cell(value: Any) -> str:
    """Deterministic text for one CSV cell; floats keep full precision."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _plain(value: Any) -> Any:
    """Convert numpy scalars and arrays into JSON-serializable values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


def write_rows_csv(path: Path, columns: Sequence[str], rows: Sequence[Dict[str, Any]]) -> Path:
    """Write long-format rows; no timestamps so reruns are byte-identical."""
    path = Path(path)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(column)) for column in columns])
    logger.debug(f"Wrote {len(rows)} rows to {path}")
    return path


def write_json(path: Path, data: Any) -> Path:
    path = Path(path)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(_plain(data), f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def write_rows(path_stem: Path, fmt: str, columns: Sequence[str], rows: Sequence[Dict[str, Any]]) -> Path:
    """results.csv or results.json depending on the requested format."""
    if fmt == 'json':
        return write_json(Path(f"{path_stem}.json"), [{c: row.get(c) for c in columns} for row in rows])
    return write_rows_csv(Path(f"{path_stem}.csv"), columns, rows)


@dataclass
class Manifest:
    """
    Provenance record of one experiment.

    Attributes:
        config: Echo of the resolved ExperimentConfig
        seed: Master seed
        stream_ids: Stream ids used by the chains, in replicate order
        wall_time: Seconds spent in run_experiment
        partial: True when outputs are incomplete (failure or exclusions)
        exit_code: Exit status reported by the CLI
        files: Output files written
        messages: Notes and warnings raised during the run
    """
    config: Dict[str, Any]
    seed: int
    stream_ids: List[int] = field(default_factory=list)
    wall_time: float = 0.0
    partial: bool = False
    exit_code: int = 0
    files: List[str] = field(default_factory=list)
    messages: List[str] = field(default_factory=list)
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'config': self.config,
            'seed': self.seed,
            'stream_ids': list(self.stream_ids),
            'wall_time': self.wall_time,
            'partial': self.partial,
            'exit_code': self.exit_code,
            'files': list(self.files),
            'messages': list(self.messages),
            'error': self.error,
            'versions': {
                PACKAGE_NAME: library_version(),
                'python': platform.python_version(),
                'numpy': np.__version__,
                'scipy': scipy.__version__
            }
        }

    def write(self, output_dir: Path) -> Path:
        return write_json(Path(output_dir) / "manifest.json", self.to_dict())
