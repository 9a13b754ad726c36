"""Weights on disk: ``manifest.json`` plus one raw little-endian f32 file per tensor."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from prn.ingest import FormatError

MANIFEST_NAME = "manifest.json"


def save_manifest(directory, dims: dict, tensors: dict[str, np.ndarray]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        data_file = f"{name}.f32"
        (directory / data_file).write_bytes(arr.tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "data_file": data_file})
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps({"dims": dims, "tensors": entries}, indent=2) + "\n")
    return path


def load_manifest(directory) -> tuple[dict, dict[str, np.ndarray]]:
    directory = Path(directory)
    if directory.is_file():
        directory = directory.parent
    path = directory / MANIFEST_NAME
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or "dims" not in doc or "tensors" not in doc:
        raise FormatError(f"{path}: manifest needs 'dims' and 'tensors'")
    tensors = {}
    for entry in doc["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        raw = (directory / entry["data_file"]).read_bytes()
        n = int(np.prod(shape)) if shape else 1
        if len(raw) != 4 * n:
            raise FormatError(f"{entry['data_file']}: shape mismatch: expected {4 * n} bytes "
                              f"for shape {list(shape)}, found {len(raw)}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"{entry['data_file']}: non-finite parameter")
        tensors[entry["name"]] = arr
    return doc["dims"], tensors
