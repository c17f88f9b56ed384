"""TGF1 binary fields, checksummed manifests, schema-checked JSON and CSV.

TGF1 layout: ``b"TGF1"``, u8 dim, u32 n_per_axis, u8 kind (0 real, 1 complex),
then row-major little-endian float64 values (re/im interleaved for complex).
A file may hold several fields of the same grid back to back; the count is the
payload length divided by the per-field size.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .torus import TorusGrid

MAGIC = b"TGF1"
HEADER = struct.Struct("<4sBIB")


class ChecksumError(IOError):
    pass


class FormatError(IOError):
    pass


def write_tgf(path, grid: TorusGrid, data: np.ndarray) -> str:
    """Write one or more fields; returns the file's sha256."""
    data = np.asarray(data)
    kind = 1 if np.iscomplexobj(data) else 0
    if data.size % grid.size:
        raise ValueError(f"{data.size} values is not a multiple of the grid size {grid.size}")
    payload = data.astype("<c16" if kind else "<f8").tobytes(order="C")
    blob = HEADER.pack(MAGIC, grid.dim, grid.n, kind) + payload
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def read_tgf(path, expected_sha256: str | None = None):
    """Return ``(grid, values)``; values has shape ``(count, *grid.shape)``."""
    blob = Path(path).read_bytes()
    if expected_sha256 is not None and hashlib.sha256(blob).hexdigest() != expected_sha256:
        raise ChecksumError(f"checksum mismatch for {path}")
    if len(blob) < HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, dim, n, kind = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if kind not in (0, 1):
        raise FormatError(f"{path}: unknown kind {kind}")
    try:
        grid = TorusGrid(dim, n)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    dtype = np.dtype("<c16" if kind == 1 else "<f8")
    payload = len(blob) - HEADER.size
    if payload == 0 or payload % (dtype.itemsize * grid.size):
        raise FormatError(f"{path}: payload is not a whole number of fields")
    values = np.frombuffer(blob, dtype=dtype, offset=HEADER.size)
    return grid, values.reshape((-1,) + grid.shape).copy()


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("wickpressure.schemas").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def validate(obj, schema: str):
    jsonschema.validate(obj, load_schema(schema))


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj, schema: str | None = None):
    if schema is not None:
        validate(obj, schema)
    Path(path).write_text(dumps(obj))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


class Manifest:
    """Checksums of every artifact written into one output directory."""

    FILENAME = "manifest.json"

    def __init__(self, root):
        self.root = Path(root)
        self.entries: dict[str, dict] = {}

    @classmethod
    def load(cls, root) -> "Manifest":
        m = cls(root)
        path = m.root / cls.FILENAME
        if path.exists():
            data = json.loads(path.read_text())
            validate(data, "manifest")
            m.entries = data["files"]
        return m

    def add(self, name: str, kind: str, sha256: str | None = None):
        path = self.root / name
        self.entries[name] = {"kind": kind, "sha256": sha256 or sha256_file(path), "bytes": path.stat().st_size}

    def write_tgf(self, name: str, grid: TorusGrid, data) -> Path:
        path = self.root / name
        self.add(name, "tgf", write_tgf(path, grid, data))
        return path

    def write_json(self, name: str, obj, schema: str | None = None) -> Path:
        path = self.root / name
        write_json(path, obj, schema)
        self.add(name, "json")
        return path

    def read_tgf(self, name: str):
        if name not in self.entries:
            raise ChecksumError(f"{name} is not recorded in the manifest")
        return read_tgf(self.root / name, self.entries[name]["sha256"])

    def verify(self) -> list[str]:
        """Names whose file is missing or whose checksum no longer matches."""
        bad = []
        for name, entry in sorted(self.entries.items()):
            path = self.root / name
            if not path.exists() or sha256_file(path) != entry["sha256"]:
                bad.append(name)
        return bad

    def save(self):
        obj = {"files": self.entries}
        write_json(self.root / self.FILENAME, obj, "manifest")
