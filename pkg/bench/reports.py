"""
Report writer for experiment artifacts.
"""
import io
import json
import logging
import os
import tempfile
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ppd.predictive import PredictiveGrid

Rows = Union[pd.DataFrame, Sequence[Dict[str, object]]]


def atomic_write_text(path: str, text: str):
    """Write to a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def to_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + '\n'


class ReportWriter:
    """
    Owns one output directory.

    Tables are CSV with a ``# provenance`` header line; the run log is a
    JSON-lines file written once on ``close``; grids go under ``grids/``.
    No timestamps are written, so identical configs give identical files.
    """

    def __init__(self, out_dir: str, experiment: str, config_hash: str,
                 standardization: str = "none", scale: str = "original"):
        self.out_dir = out_dir
        self.experiment = experiment
        self.config_hash = config_hash
        self.standardization = standardization
        self.scale = scale
        self.records: List[dict] = []
        self.written: List[str] = []
        self.logger = logging.getLogger(__name__)
        os.makedirs(out_dir, exist_ok=True)

    def path(self, *parts: str) -> str:
        return os.path.join(self.out_dir, *parts)

    def provenance(self) -> str:
        return (f"# provenance: experiment={self.experiment}; config_hash={self.config_hash}; "
                f"scale={self.scale}; standardization={self.standardization}\n")

    def _write(self, relpath: str, text: str) -> str:
        path = self.path(relpath)
        atomic_write_text(path, text)
        self.written.append(relpath)
        return path

    def write_json(self, name: str, payload) -> str:
        return self._write(name, to_json(payload))

    def write_resolved_config(self, resolved: dict) -> str:
        path = self.write_json('resolved_config.json', resolved)
        self.logger.info(f"Resolved config written to {path}")
        return path

    def write_table(self, name: str, rows: Rows, columns: Optional[Sequence[str]] = None) -> str:
        frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=columns)
        if columns is not None:
            frame = frame.reindex(columns=list(columns))
        buffer = io.StringIO()
        buffer.write(self.provenance())
        frame.to_csv(buffer, index=False, float_format='%.10g', lineterminator='\n')
        path = self._write(f"{name}.csv", buffer.getvalue())
        self.logger.info(f"Table '{name}' written ({len(frame)} rows) to {path}")
        return path

    def write_grid(self, grid: PredictiveGrid, engine: str, n: int, seed: int, tag: Optional[str] = None) -> str:
        frame = pd.DataFrame({
            'y': grid.y_values,
            'log_density': grid.log_density,
            'density': grid.density,
        })
        suffix = f"_{tag}" if tag else ""
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False, float_format='%.12g', lineterminator='\n')
        return self._write(os.path.join('grids', f"{engine}_n{n}_seed{seed}{suffix}.csv"), buffer.getvalue())

    def record(self, **fields):
        """Queue one JSON-lines record for the run log."""
        self.records.append(fields)

    def extend(self, records: Iterable[dict]):
        self.records.extend(records)

    def close(self) -> str:
        lines = ''.join(json.dumps(r, sort_keys=True, default=_json_default) + '\n' for r in self.records)
        path = self._write('run.jsonl', lines)
        self.logger.info(f"Run log written to {path} ({len(self.records)} records)")
        return path
