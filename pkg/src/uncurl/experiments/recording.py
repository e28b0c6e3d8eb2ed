"""Result containers and byte-stable persistence.

Reruns with the same config must produce byte-identical files, so all JSON
is sorted-key with repr-roundtrip floats, CSV floats use 9 significant
digits with LF endings, and every write goes through a temp-file rename.
The config hash covers only semantic fields (never output paths).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ARTIFACT_VERSION = "0.1.0"

__all__ = ["ARTIFACT_VERSION", "RunResult", "TokenTrace", "config_hash", "jsonify", "atomic_write_text", "write_run"]


def jsonify(obj):
    """Recursively convert numpy scalars/arrays to plain Python values."""
    if isinstance(obj, dict):
        return {str(k): jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def config_hash(semantic: dict) -> str:
    """12-hex digest of the canonical JSON form of the semantic config."""
    canon = json.dumps(jsonify(semantic), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    return str(value)


@dataclass
class TokenTrace:
    """Per-token diagnostics for one probe pass (one epoch, one model)."""

    epoch: int
    records: list[dict]
    metadata: dict = field(default_factory=dict)

    def to_json_text(self) -> str:
        payload = jsonify(
            {
                "artifact_version": ARTIFACT_VERSION,
                "epoch": self.epoch,
                "metadata": self.metadata,
                "records": self.records,
            }
        )
        return json.dumps(payload, sort_keys=True, indent=1) + "\n"

    @property
    def name(self) -> str:
        tag = self.metadata.get("objective", "probe")
        return f"trace_{tag}_epoch{self.epoch:04d}.json"


@dataclass
class RunResult:
    """Rows plus summary for one experiment run; rows are (step, ...) ordered."""

    experiment: str
    config: dict
    config_hash: str
    seed: int
    columns: tuple
    rows: list
    summary: dict = field(default_factory=dict)
    traces: list[TokenTrace] = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)

    def csv_text(self) -> str:
        header = ",".join([*self.columns, "config_hash"])
        lines = [header]
        for row in self.rows:
            cells = [_csv_cell(v) for v in row]
            cells.append(self.config_hash)
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def json_text(self) -> str:
        payload = jsonify(
            {
                "artifact_version": ARTIFACT_VERSION,
                "experiment": self.experiment,
                "seed": self.seed,
                "config_hash": self.config_hash,
                "config": self.config,
                "columns": list(self.columns),
                "rows": [list(r) for r in self.rows],
                "summary": self.summary,
            }
        )
        return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def write_run(result: RunResult, out_dir) -> dict:
    """Write metrics.csv, result.json, and any traces; returns written paths."""
    out = Path(out_dir)
    paths = {
        "metrics": out / "metrics.csv",
        "result": out / "result.json",
    }
    atomic_write_text(paths["metrics"], result.csv_text())
    atomic_write_text(paths["result"], result.json_text())
    for trace in result.traces:
        p = out / "traces" / trace.name
        atomic_write_text(p, trace.to_json_text())
        paths[trace.name] = p
    return paths
