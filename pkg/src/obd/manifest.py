"""Tensor manifest: ``manifest.json`` plus one raw little-endian blob per tensor.

Layout of ``manifest.json``::

    [{"name": "fc1.c_x", "shape": [8, 8], "dtype": "f64",
      "file": "000_fc1.c_x.bin", "byte_order": "little-endian"}, ...]
"""
from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ManifestError

MANIFEST_NAME = "manifest.json"
DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
BYTE_ORDER = "little-endian"


def _file_name(index: int, name: str) -> str:
    return f"{index:03d}_{re.sub(r'[^A-Za-z0-9_.-]', '_', name)}.bin"


def write_manifest(
    directory: str | Path,
    tensors: Mapping[str, np.ndarray],
    dtype: str | Mapping[str, str] = "f64",
) -> Path:
    """Write ``tensors`` (insertion order preserved) and return the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, value) in enumerate(tensors.items()):
        code = dtype if isinstance(dtype, str) else dtype.get(name, "f64")
        if code not in DTYPES:
            raise ManifestError(f"tensor {name!r}: unsupported dtype {code!r}")
        arr = np.array(np.asarray(value, dtype=np.float64), dtype=DTYPES[code], order="C")
        fname = _file_name(i, name)
        (directory / fname).write_bytes(arr.tobytes(order="C"))
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": code, "file": fname, "byte_order": BYTE_ORDER}
        )
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(entries, indent=2) + "\n", encoding="utf-8")
    return path


def read_manifest(directory: str | Path) -> dict[str, np.ndarray]:
    """Load every tensor as float64 (``f32`` blobs are widened exactly)."""
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ManifestError(f"no manifest at {path}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest {path}: {exc}") from exc
    if not isinstance(entries, list):
        raise ManifestError(f"{path}: manifest must be a JSON list")
    out: dict[str, np.ndarray] = {}
    for entry in entries:
        if not isinstance(entry, dict) or not {"name", "shape", "dtype", "file"} <= set(entry):
            raise ManifestError(f"{path}: malformed entry {entry!r}")
        name = entry["name"]
        if name in out:
            raise ManifestError(f"duplicate tensor name {name!r}")
        code = entry.get("dtype")
        if code not in DTYPES:
            raise ManifestError(f"tensor {name!r}: unsupported dtype {code!r}")
        if entry.get("byte_order", BYTE_ORDER) != BYTE_ORDER:
            raise ManifestError(f"tensor {name!r}: unsupported byte order {entry.get('byte_order')!r}")
        try:
            shape = tuple(int(s) for s in entry["shape"])
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"tensor {name!r}: bad shape {entry['shape']!r}") from exc
        if any(s < 0 for s in shape):
            raise ManifestError(f"tensor {name!r}: negative dimension in {shape}")
        try:
            raw = (directory / entry["file"]).read_bytes()
        except OSError as exc:
            raise ManifestError(f"tensor {name!r}: cannot read blob {entry['file']!r}: {exc}") from exc
        expected = int(np.prod(shape, dtype=np.int64)) * DTYPES[code].itemsize
        if len(raw) != expected:
            raise ManifestError(
                f"tensor {name!r}: blob has {len(raw)} bytes, expected {expected} for shape {shape} {code}"
            )
        out[name] = np.frombuffer(raw, dtype=DTYPES[code]).reshape(shape).astype(np.float64)
    return out
