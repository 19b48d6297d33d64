"""Deterministic artifact writers for tables and grid dumps, with the run manifest."""
from __future__ import annotations

import hashlib
import json
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .spde import DensityGrid, dump_grid, grid_csv_lines


class PartialOutputError(OSError):
    def __init__(self, message: str, completed: Sequence[str]):
        super().__init__(f"{message}; completed files: {list(completed)}")
        self.completed = list(completed)


def fmt(value) -> str:
    """Shortest round-trip representation, so reruns give byte-identical files."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return repr(float(value))


@dataclass
class Table:
    """Column-oriented CSV payload."""

    columns: Sequence[str]
    rows: Iterable[Sequence]

    def lines(self):
        yield ",".join(self.columns)
        for row in self.rows:
            yield ",".join(fmt(v) for v in row)


@dataclass
class JsonLines:
    records: Sequence[dict]


@dataclass
class JsonDoc:
    payload: dict


@dataclass
class GridDump:
    grid: DensityGrid
    with_csv: bool = False


@dataclass
class Results:
    """Named artifacts in insertion order, plus what the manifest should record."""

    items: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def add(self, name: str, payload) -> None:
        self.items[name] = payload


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_json_default)


def _write_text(path: Path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def versions() -> dict:
    import scipy
    return {"lpsv": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def emit_outputs(results: Results, out_dir) -> list:
    """Write every artifact, then ``manifest.json`` last; returns the file list."""
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, payload in results.items.items():
            path = out / name
            if isinstance(payload, Table):
                _write_text(path, payload.lines())
            elif isinstance(payload, JsonLines):
                _write_text(path, (dumps(r) for r in payload.records))
            elif isinstance(payload, JsonDoc):
                _write_text(path, [json.dumps(payload.payload, sort_keys=True, indent=2,
                                              default=_json_default)])
            elif isinstance(payload, GridDump):
                dump_grid(payload.grid, path)
                if payload.with_csv:
                    written.append(name)
                    name = path.with_suffix(".csv").name
                    _write_text(out / name, grid_csv_lines(payload.grid))
            else:
                raise TypeError(f"unknown artifact type for {name}: {type(payload).__name__}")
            written.append(name)
        manifest = dict(results.manifest)
        manifest["files"] = [{"name": n, "sha256": _sha256(out / n)} for n in written]
        manifest["versions"] = versions()
        manifest["created"] = datetime.now(timezone.utc).isoformat()
        _write_text(out / "manifest.json",
                    [json.dumps(manifest, sort_keys=True, indent=2, default=_json_default)])
    except OSError as exc:
        raise PartialOutputError(str(exc), written) from exc
    return written + ["manifest.json"]
