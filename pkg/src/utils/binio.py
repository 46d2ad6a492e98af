"""
Deterministic binary container for caches and model files

Layout: 8-byte magic, uint32 version, uint64 header length, JSON header
(sorted keys), then the raw little-endian bytes of each array in header order.
Identical content always produces identical bytes.
"""

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from src.utils.errors import DataError

_PREFIX = struct.Struct("<8sIQ")


def write_container(
    path: Path,
    magic: bytes,
    version: int,
    header: dict[str, Any],
    arrays: dict[str, np.ndarray],
) -> None:
    """Write header and arrays to path"""

    manifest = []
    payloads = []
    for name, array in arrays.items():
        data = np.ascontiguousarray(array)
        data = data.astype(data.dtype.newbyteorder("<"), copy=False)
        manifest.append({"name": name, "dtype": data.dtype.str, "shape": list(data.shape)})
        payloads.append(data.tobytes())

    document = dict(header)
    document["arrays"] = manifest
    encoded = json.dumps(document, sort_keys=True, separators=(",", ":")).encode("utf-8")

    with open(path, "wb") as handle:
        handle.write(_PREFIX.pack(magic.ljust(8, b"\0"), version, len(encoded)))
        handle.write(encoded)
        for payload in payloads:
            handle.write(payload)


def read_container(
    path: Path, magic: bytes, versions: set[int]
) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Read a container, checking magic and version"""

    with open(path, "rb") as handle:
        raw = handle.read()

    if len(raw) < _PREFIX.size:
        raise DataError(f"{path}: truncated file")
    found_magic, version, header_len = _PREFIX.unpack_from(raw, 0)
    if found_magic != magic.ljust(8, b"\0"):
        raise DataError(f"{path}: not a {magic.decode()} file")
    if version not in versions:
        raise DataError(f"{path}: unsupported version {version}")

    offset = _PREFIX.size
    try:
        header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt header: {e}") from e
    offset += header_len

    arrays: dict[str, np.ndarray] = {}
    for entry in header.pop("arrays"):
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        size = count * dtype.itemsize
        if offset + size > len(raw):
            raise DataError(f"{path}: truncated array {entry['name']}")
        if count == 0:
            arrays[entry["name"]] = np.empty(shape, dtype=dtype)
        else:
            array = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
            arrays[entry["name"]] = array.reshape(shape).copy()
        offset += size

    return header, arrays


def pack_strings(values: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Pack strings into a UTF-8 byte buffer plus end offsets"""

    encoded = [value.encode("utf-8") for value in values]
    offsets = np.cumsum([len(item) for item in encoded], dtype=np.int64)
    joined = b"".join(encoded)
    buffer = np.frombuffer(joined, dtype=np.uint8) if joined else np.empty(0, dtype=np.uint8)
    return buffer, offsets


def unpack_strings(buffer: np.ndarray, offsets: np.ndarray) -> list[str]:
    """Inverse of pack_strings"""

    raw = buffer.tobytes()
    values = []
    start = 0
    for end in offsets.tolist():
        values.append(raw[start:end].decode("utf-8"))
        start = end
    return values
