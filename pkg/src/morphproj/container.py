"""Versioned model container: a JSON header followed by raw little-endian arrays.

Layout::

    MORPHPROJ <format-version>\\n
    <header length in bytes>\\n
    <JSON header: kind, metadata, array index>
    <array bytes, in header order>

The output depends only on the content, so identical models give identical files.
"""
from __future__ import annotations

import json

import numpy as np

MAGIC = b"MORPHPROJ"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


def dumps(kind: str, metadata: dict, arrays: dict) -> bytes:
    index, blobs = [], []
    for name, array in arrays.items():
        array = np.ascontiguousarray(array)
        dtype = array.dtype.newbyteorder("<")
        blob = array.astype(dtype, copy=False).tobytes()
        index.append({"name": name, "dtype": dtype.str, "shape": list(array.shape), "nbytes": len(blob)})
        blobs.append(blob)
    header = json.dumps({"kind": kind, "metadata": metadata, "arrays": index},
                        sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    return b"".join([MAGIC, b" ", str(FORMAT_VERSION).encode(), b"\n",
                     str(len(header)).encode(), b"\n", header] + blobs)


def loads(data: bytes, expected_kind: str = None) -> tuple:
    """Returns (kind, metadata, arrays)."""
    try:
        first, rest = data.split(b"\n", 1)
        magic, version = first.split(b" ")
        if magic != MAGIC:
            raise ContainerError("not a model file")
        if int(version) != FORMAT_VERSION:
            raise ContainerError(f"unsupported model format version {int(version)}")
        length, rest = rest.split(b"\n", 1)
        header = json.loads(rest[:int(length)].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, ContainerError):
            raise
        raise ContainerError(f"corrupt model file: {exc}") from None
    kind = header["kind"]
    if expected_kind is not None and kind != expected_kind:
        raise ContainerError(f"expected a {expected_kind} model, found {kind}")
    offset = int(length)
    arrays = {}
    for entry in header["arrays"]:
        blob = rest[offset:offset + entry["nbytes"]]
        if len(blob) != entry["nbytes"]:
            raise ContainerError(f"truncated array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(blob, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
        offset += entry["nbytes"]
    return kind, header["metadata"], arrays


def peek_kind(path) -> str:
    with open(path, "rb") as f:
        return loads(f.read())[0]
