"""Single-file container of named little-endian arrays.

Layout: a zip archive (stored, no compression) holding ``manifest.json`` and
one raw payload per array under ``arrays/<name>.bin``. The manifest lists
every array with its dims and element type, plus a free-form ``meta`` dict.
Any language with a zip reader can load it.
"""

import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import FormatError

MANIFEST = "manifest.json"

_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "int64": np.dtype("<i8"),
    "uint8": np.dtype("u1"),
}


def _dtype_name(arr: np.ndarray) -> str:
    for name, dt in _DTYPES.items():
        if arr.dtype == dt or arr.dtype == dt.newbyteorder("="):
            return name
    raise TypeError(f"unsupported element type {arr.dtype}")


def write_archive(path, arrays: dict, meta: dict, kind: str) -> None:
    path = Path(path)
    entries = []
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            dtype = _dtype_name(arr)
            fname = f"arrays/{name}.bin"
            zf.writestr(fname, arr.astype(_DTYPES[dtype], copy=False).tobytes())
            entries.append({"name": name, "dims": list(arr.shape), "dtype": dtype, "file": fname})
        manifest = {"kind": kind, "meta": meta, "arrays": entries}
        zf.writestr(MANIFEST, json.dumps(manifest, indent=2, sort_keys=True))


def read_archive(path, kind: str | None = None) -> tuple[dict, dict]:
    """Return ``(arrays, meta)``; raises FormatError on any inconsistency."""
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path, "r")
    except (zipfile.BadZipFile, EOFError, OSError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise FormatError(f"{path}: not a readable archive ({exc})") from exc
    with zf:
        names = set(zf.namelist())
        if MANIFEST not in names:
            raise FormatError(f"{path}: missing entry '{MANIFEST}'")
        try:
            manifest = json.loads(zf.read(MANIFEST))
        except (ValueError, zipfile.BadZipFile, OSError) as exc:
            raise FormatError(f"{path}: unreadable entry '{MANIFEST}' ({exc})") from exc
        if kind is not None and manifest.get("kind") != kind:
            raise FormatError(f"{path}: expected archive kind '{kind}', found '{manifest.get('kind')}'")
        arrays = {}
        for entry in manifest.get("arrays", []):
            name, fname = entry["name"], entry["file"]
            if fname not in names:
                raise FormatError(f"{path}: missing entry '{name}'")
            dtype = _DTYPES.get(entry["dtype"])
            if dtype is None:
                raise FormatError(f"{path}: entry '{name}' has unknown element type {entry['dtype']}")
            try:
                raw = zf.read(fname)
            except (zipfile.BadZipFile, OSError, EOFError) as exc:
                raise FormatError(f"{path}: corrupt entry '{name}' ({exc})") from exc
            dims = tuple(entry["dims"])
            expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if len(raw) != expected:
                raise FormatError(f"{path}: entry '{name}' has {len(raw)} bytes, expected {expected}")
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    return arrays, manifest.get("meta", {})


def require(arrays: dict, names, path) -> None:
    for name in names:
        if name not in arrays:
            raise FormatError(f"{path}: missing entry '{name}'")
