"""CSV tables, raw snapshot files and the run manifest."""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from . import __version__

MANIFEST_SCHEMA = "partdiss.manifest/1"


def _cell(v) -> str:
    # repr of a Python float is the shortest string that round-trips
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> int:
    """Write ``rows`` under ``header``; floats use round-trip repr. Returns the row count."""
    path = Path(path)
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
            n += 1
    return n


def read_csv(path):
    """(header, rows) with every cell parsed as float where possible."""
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = []
        for row in r:
            out = []
            for c in row:
                try:
                    out.append(float(c))
                except ValueError:
                    out.append(c)
            rows.append(out)
    return header, rows


def write_snapshots(path, frames) -> dict:
    """Concatenate frames as little-endian float64.

    ``frames`` is a list of dicts name -> array with identical layout; the
    returned layout records names and shapes in write order.
    """
    layout = None
    with open(path, "wb") as fh:
        for fr in frames:
            if layout is None:
                layout = [{"name": k, "shape": list(np.shape(v))} for k, v in fr.items()]
            for k, v in fr.items():
                fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return {"dtype": "<f8", "frames": len(frames), "frame_layout": layout or []}


def read_snapshots(path, layout: dict) -> list:
    raw = np.fromfile(path, dtype="<f8")
    frames, pos = [], 0
    for _ in range(layout["frames"]):
        fr = {}
        for ent in layout["frame_layout"]:
            size = int(np.prod(ent["shape"])) if ent["shape"] else 1
            fr[ent["name"]] = raw[pos:pos + size].reshape(ent["shape"])
            pos += size
        frames.append(fr)
    return frames


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class RunOutput:
    """Collects files written to one output directory and emits the manifest."""

    def __init__(self, directory, command: str, config=None):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.config = config
        self.files = []
        self.extra = {}

    def csv(self, name: str, header, rows) -> Path:
        p = self.dir / name
        n = write_csv(p, header, rows)
        self.files.append({"name": name, "kind": "csv", "columns": list(header), "rows": n})
        return p

    def snapshots(self, name: str, frames) -> Path:
        p = self.dir / name
        layout = write_snapshots(p, frames)
        self.files.append({"name": name, "kind": "snapshots", **layout})
        return p

    def manifest(self, **info) -> Path:
        for ent in self.files:
            ent["sha256"] = sha256_file(self.dir / ent["name"])
        doc = {
            "schema": MANIFEST_SCHEMA,
            "command": self.command,
            "version": __version__,
            "numpy": np.__version__,
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "files": self.files,
        }
        if self.config is not None:
            doc["config"] = self.config.to_dict()
            doc["config_sha256"] = self.config.sha256()
            doc["seed"] = self.config.noise.seed
        doc.update(self.extra)
        doc.update(info)
        p = self.dir / "manifest.json"
        tmp = p.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
        os.replace(tmp, p)
        return p


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")
