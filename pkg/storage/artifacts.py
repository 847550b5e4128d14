"""
Output files: error tables, curves, schedules, samples and KL reports.

Every file written for a run carries the resolved-config hash in its name and
floats are written with repr(), the shortest string that reads back to the
same double, so exported tables round-trip bit-exactly.
"""
import csv
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config import settings
from diffusion.errors import ConfigError, EntropicTimeError
from entropy.curves import EntropyCurve
from entropy.tables import ErrorTable
from schedules.builders import Schedule
from version import version_info

logger = logging.getLogger(__name__)

# The first eight columns are the plotting input; the rest qualify +inf means.
KL_COLUMNS = ["schedule", "solver", "nfe", "kl_mean", "kl_std", "repeats", "paths", "seed",
              "finite_repeats", "finite_mean", "finite_std", "mean_empty_bins", "mean_out_of_support"]


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    logger.info(f"Wrote {path}")
    return path


def _read_csv(path) -> Tuple[List[str], List[Tuple[int, List[str]]]]:
    """Header and (line number, fields) rows."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"File not found: {path}")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigError(f"{path}: empty file")
        rows = [(reader.line_num, row) for row in reader if row]
    return header, rows


def _floats(path, rows, width: int) -> np.ndarray:
    out = np.empty((len(rows), width))
    for i, (line, row) in enumerate(rows):
        if len(row) < width:
            raise ConfigError(f"{path}: row {line}: expected {width} columns, got {len(row)}")
        try:
            out[i] = [float(v) for v in row[:width]]
        except ValueError as e:
            raise ConfigError(f"{path}: row {line}: {e}") from e
        if not np.all(np.isfinite(out[i])):
            raise ConfigError(f"{path}: row {line}: non-finite value")
    return out


def _check_times(path, rows, times: np.ndarray):
    bad = np.flatnonzero(np.diff(times) <= 0)
    if bad.size:
        line = rows[bad[0] + 1][0]
        raise ConfigError(f"{path}: row {line}: times must be strictly increasing")


# -- readers ------------------------------------------------------------------

def read_error_table(path) -> ErrorTable:
    """Read `t,eps2` or `t,eps2_total,eps2_b0,...`."""
    header, rows = _read_csv(path)
    if header[:2] == ["t", "eps2"] and len(header) == 2:
        data = _floats(path, rows, 2)
        _check_times(path, rows, data[:, 0])
        per_basis = None
    elif header[:2] == ["t", "eps2_total"] and all(h.startswith("eps2_b") for h in header[2:]):
        data = _floats(path, rows, len(header))
        _check_times(path, rows, data[:, 0])
        per_basis = data[:, 2:] if len(header) > 2 else None
    else:
        raise ConfigError(f"{path}: unrecognised error-table header {','.join(header)}")
    try:
        return ErrorTable(data[:, 0], data[:, 1], per_basis=per_basis,
                          provenance={"method": "imported", "format": "eps2", "source": str(path)})
    except EntropicTimeError as e:
        raise ConfigError(f"{path}: {e}") from e


def read_loss_table(path) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read `t,loss,lambda` rows."""
    header, rows = _read_csv(path)
    if header != ["t", "loss", "lambda"]:
        raise ConfigError(f"{path}: expected header t,loss,lambda, got {','.join(header)}")
    data = _floats(path, rows, 3)
    _check_times(path, rows, data[:, 0])
    for (line, _), weight, loss in zip(rows, data[:, 2], data[:, 1]):
        if weight <= 0:
            raise ConfigError(f"{path}: row {line}: lambda must be positive")
        if loss < 0:
            raise ConfigError(f"{path}: row {line}: loss must be non-negative")
    return data[:, 0], data[:, 1], data[:, 2]


def read_curve(path) -> EntropyCurve:
    header, rows = _read_csv(path)
    if header != ["t", "phi", "kind"]:
        raise ConfigError(f"{path}: expected header t,phi,kind, got {','.join(header)}")
    data = _floats(path, rows, 2)
    _check_times(path, rows, data[:, 0])
    kinds = {row[2].strip() for _, row in rows if len(row) > 2}
    if len(kinds) != 1:
        raise ConfigError(f"{path}: expected a single curve kind, got {sorted(kinds)}")
    try:
        return EntropyCurve(data[:, 0], data[:, 1], kinds.pop())
    except EntropicTimeError as e:
        raise ConfigError(f"{path}: {e}") from e


def read_schedule(path) -> Schedule:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Schedule file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    return Schedule.from_dict(data)


def read_samples(path) -> Tuple[np.ndarray, Dict]:
    """Samples matrix and its JSON sidecar (empty when missing)."""
    header, rows = _read_csv(path)
    samples = _floats(path, rows, len(header))
    sidecar_path = Path(path).with_suffix(".json")
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    return samples, sidecar


# -- writer -------------------------------------------------------------------

class ArtifactStore:
    """Output directory for one resolved configuration."""

    def __init__(self, root: Optional[str] = None, config_hash: Optional[str] = None):
        self.root = Path(root or settings.output_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.config_hash = config_hash

    def path(self, stem: str, suffix: str) -> Path:
        name = f"{stem}_{self.config_hash}{suffix}" if self.config_hash else f"{stem}{suffix}"
        return self.root / name

    def _write_json(self, path: Path, payload: Dict) -> Path:
        with open(path, "w") as f:
            json.dump(payload, f, indent=2, default=str)
        logger.info(f"Wrote {path}")
        return path

    def write_config(self, resolved: Dict) -> Path:
        return self._write_json(self.path("config", ".json"), resolved)

    def write_error_table(self, table: ErrorTable, stem: str = "errors") -> Path:
        if table.per_basis is None:
            header = ["t", "eps2"]
            rows = zip(table.times, table.values)
        else:
            header = ["t", "eps2_total"] + [f"eps2_b{b}" for b in range(table.n_basis)]
            rows = ([t, v, *row] for t, v, row in zip(table.times, table.values, table.per_basis))
        return _write_csv(self.path(stem, ".csv"), header, rows)

    def write_curve(self, curve: EntropyCurve, stem: str = "curve") -> Path:
        rows = ((t, v, curve.kind) for t, v in zip(curve.times, curve.values))
        return _write_csv(self.path(stem, ".csv"), ["t", "phi", "kind"], rows)

    def write_columns(self, stem: str, times: np.ndarray, columns: Dict[str, np.ndarray]) -> Path:
        """Plot-ready table: a t column followed by named value columns."""
        header = ["t", *columns.keys()]
        matrix = np.column_stack([np.asarray(v, dtype=float) for v in columns.values()])
        rows = ([t, *row] for t, row in zip(times, matrix))
        return _write_csv(self.path(stem, ".csv"), header, rows)

    def write_schedule(self, schedule: Schedule, stem: str = "schedule") -> Path:
        return self._write_json(self.path(stem, ".json"), schedule.to_dict())

    def write_samples(self, samples: np.ndarray, sidecar: Dict, stem: str = "samples") -> Path:
        samples = np.asarray(samples, dtype=float).reshape(samples.shape[0], -1)
        path = _write_csv(self.path(stem, ".csv"), [f"x{d}" for d in range(samples.shape[1])], samples)
        self._write_json(path.with_suffix(".json"), {**sidecar, "config_hash": self.config_hash,
                                                     **version_info()})
        return path

    def write_kl_reports(self, reports, stem: str = "kl") -> Path:
        rows = ([row[c] for c in KL_COLUMNS] for report in reports for row in report.rows())
        path = _write_csv(self.path(stem, ".csv"), KL_COLUMNS, rows)
        self._write_json(path.with_suffix(".json"), {
            "config_hash": self.config_hash,
            **version_info(),
            "reports": [{"schedule": r.schedule, "solver": r.solver, **r.metadata} for r in reports],
        })
        return path
