"""On-disk model registry shared by the service and the command line.

Layout under a data directory: ``models.json`` holds one record per model
(id, name, status, counts); ``models/{id}.ocsm`` holds the geometry.
"""

from __future__ import annotations

import json
from pathlib import Path

from . import container
from .scene import SceneModel


def atomic_write_json(path: Path, doc) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def index_path(data_dir: Path) -> Path:
    return Path(data_dir) / "models.json"


def read_index(data_dir: Path) -> dict:
    path = index_path(data_dir)
    if path.exists():
        return json.loads(path.read_text())
    return {}


def write_index(data_dir: Path, doc: dict) -> None:
    path = index_path(data_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_json(path, doc)


def model_file(data_dir: Path, model_id: str) -> Path:
    return Path(data_dir) / "models" / f"{model_id}.ocsm"


def allocate_id(index: dict) -> str:
    n = len(index) + 1
    model_id = f"m{n:04d}"
    while model_id in index:
        n += 1
        model_id = f"m{n:04d}"
    return model_id


def register(data_dir: Path, model: SceneModel, *, name: str, fmt: str,
             triangles: int, nodes: int, project_id: str = "default",
             model_id: str | None = None) -> dict:
    """Serialize the model and add its record; returns the record."""
    index = read_index(data_dir)
    mid = model_id or allocate_id(index)
    path = model_file(data_dir, mid)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.model_id = mid
    path.write_bytes(container.serialize(model))
    record = {"model_id": mid, "name": name, "project_id": project_id, "format": fmt,
              "status": "ready", "error": None, "triangles": triangles, "nodes": nodes,
              "unit_scale": model.unit_scale}
    index[mid] = record
    write_index(data_dir, index)
    return record


def load(data_dir: Path, model_id: str) -> SceneModel:
    record = read_index(data_dir).get(model_id)
    if record is None:
        raise KeyError(f"no model {model_id!r} in {data_dir}")
    if record["status"] != "ready":
        raise KeyError(f"model {model_id!r} status is {record['status']}")
    return container.deserialize(model_file(data_dir, model_id).read_bytes())
