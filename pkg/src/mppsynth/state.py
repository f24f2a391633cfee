"""Versioned, self-describing container for fitted model state.

Layout: a zip archive whose first member ``header.json`` holds the magic
string, the format version, the object type, and every scalar/string field
(nested dictionaries flattened with ``/`` keys).  Each array field is stored
as its own ``arrays/<key>.npy`` member.  Timestamps are fixed so identical
state produces byte-identical files.
"""
from __future__ import annotations

import io
import json
import zipfile
import zlib
from pathlib import Path

import numpy as np

MAGIC = "mppsynth-state"
FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)

_REGISTRY: dict = {}


class StateFormatError(ValueError):
    """Wrong magic header, unsupported version, or a damaged file."""


def register(cls):
    """Class decorator: make ``cls`` loadable from a state container.

    Registered classes implement ``to_state() -> dict`` and the classmethod
    ``from_state(dict)``; values are arrays, scalars, strings, lists of
    scalars, ``None``, or nested dicts of the same.
    """
    _REGISTRY[cls.__name__] = cls
    return cls


def _flatten(d: dict, prefix: str, meta: dict, arrays: dict) -> None:
    for key, value in d.items():
        if "/" in key:
            raise ValueError(f"state key {key!r} may not contain '/'")
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            meta[full] = {"__dict__": True}
            _flatten(value, full + "/", meta, arrays)
        elif isinstance(value, np.ndarray):
            arrays[full] = value
        elif isinstance(value, (np.integer, np.floating, np.bool_)):
            meta[full] = value.item()
        else:
            meta[full] = value


def _unflatten(meta: dict, arrays: dict) -> dict:
    root: dict = {}

    def slot(key):
        parts = key.split("/")
        node = root
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        return node, parts[-1]

    for key, value in meta.items():
        node, leaf = slot(key)
        if isinstance(value, dict) and value.get("__dict__"):
            node.setdefault(leaf, {})
        else:
            node[leaf] = value
    for key, value in arrays.items():
        node, leaf = slot(key)
        node[leaf] = value
    return root


def _member(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def write_container(path, kind: str, fields: dict) -> None:
    meta: dict = {}
    arrays: dict = {}
    _flatten(fields, "", meta, arrays)
    header = {
        "magic": MAGIC,
        "version": FORMAT_VERSION,
        "kind": kind,
        "fields": meta,
        "arrays": sorted(arrays),
    }
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(_member("header.json"), json.dumps(header, sort_keys=True, indent=1))
        for key in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[key]), allow_pickle=False)
            zf.writestr(_member(f"arrays/{key}.npy"), buf.getvalue())


def read_container(path) -> tuple:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such state file: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            try:
                header = json.loads(zf.read("header.json"))
            except KeyError:
                raise StateFormatError(f"{path}: missing header") from None
            if header.get("magic") != MAGIC:
                raise StateFormatError(f"{path}: not a model-state file (bad magic header)")
            if header.get("version") != FORMAT_VERSION:
                raise StateFormatError(
                    f"{path}: format version {header.get('version')} unsupported "
                    f"(expected {FORMAT_VERSION})"
                )
            arrays = {}
            for key in header["arrays"]:
                raw = zf.read(f"arrays/{key}.npy")
                arrays[key] = np.lib.format.read_array(io.BytesIO(raw), allow_pickle=False)
    except StateFormatError:
        raise
    except (zipfile.BadZipFile, EOFError, zlib.error, ValueError, KeyError) as exc:
        raise StateFormatError(f"{path}: truncated or corrupt state file ({exc})") from None
    return header["kind"], _unflatten(header["fields"], arrays)


def save_state(obj, path) -> None:
    """Serialize a registered object (see :func:`register`) to ``path``."""
    kind = type(obj).__name__
    if kind not in _REGISTRY:
        raise TypeError(f"{kind} is not a registered state type")
    write_container(path, kind, obj.to_state())


def load_state(path, expected=None):
    kind, fields = read_container(path)
    cls = _REGISTRY.get(kind)
    if cls is None:
        raise StateFormatError(f"{path}: unknown state type {kind!r}")
    if expected is not None and not issubclass(cls, expected):
        raise StateFormatError(f"{path}: holds {kind}, expected {expected.__name__}")
    return cls.from_state(fields)
