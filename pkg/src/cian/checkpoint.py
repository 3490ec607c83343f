"""Binary checkpoint container.

Layout::

    b"CIANCKPT" | u64 LE header length | JSON header | float64 LE payload

The header holds the format version, the model config, a tensor index of
``(name, shape, offset)`` in payload order, and a sha256 of the payload so
that truncation or bit flips are caught on load.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from cian.errors import DataFormatError
from cian.model import ModelConfig, param_shapes

MAGIC = b"CIANCKPT"
FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


def dumps(params, config: ModelConfig) -> bytes:
    shapes = param_shapes(config)
    missing = set(shapes) ^ set(params)
    if missing:
        raise DataFormatError(f"params do not match the config's tensor names: {sorted(missing)}")
    index, chunks, offset = [], [], 0
    for name, shape in shapes.items():
        arr = np.asarray(params[name], dtype="<f8")
        if arr.shape != shape:
            raise DataFormatError(f"tensor {name!r} has shape {arr.shape}, config expects {shape}")
        raw = np.ascontiguousarray(arr).tobytes()
        index.append({"name": name, "shape": list(shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "tensors": index,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + _LEN.pack(len(head)) + head + payload


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], ModelConfig]:
    if blob[: len(MAGIC)] != MAGIC:
        raise DataFormatError("not a checkpoint (bad magic)")
    start = len(MAGIC) + _LEN.size
    if len(blob) < start:
        raise DataFormatError("checkpoint truncated inside the header length")
    (n,) = _LEN.unpack_from(blob, len(MAGIC))
    try:
        header = json.loads(blob[start : start + n].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise DataFormatError(f"checkpoint header is not valid JSON ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise DataFormatError(f"unsupported checkpoint format version {header.get('format_version')!r}")
    payload = blob[start + n :]
    if len(payload) != header.get("payload_bytes") or hashlib.sha256(payload).hexdigest() != header.get(
        "payload_sha256"
    ):
        raise DataFormatError("checkpoint payload is corrupted (size or sha256 mismatch)")
    config = ModelConfig.from_dict(header["config"])
    expected = param_shapes(config)
    params = {}
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if expected.get(name) != shape:
            raise DataFormatError(f"tensor {name!r} shape {shape} does not match the stored config")
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        params[name] = arr.astype(np.float64).reshape(shape)
    if set(params) != set(expected):
        raise DataFormatError(f"checkpoint is missing tensors: {sorted(set(expected) - set(params))}")
    return params, config


def save(path, params, config: ModelConfig) -> None:
    """Write atomically: a crash never leaves a half-written checkpoint at ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(params, config))
    os.replace(tmp, path)


def load(path) -> tuple[dict[str, np.ndarray], ModelConfig]:
    return loads(Path(path).read_bytes())
