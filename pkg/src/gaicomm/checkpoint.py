"""``GAI1`` checkpoint container.

Layout: 4-byte magic ``b"GAI1"``, little-endian uint64 manifest length, the
UTF-8 JSON manifest, then every array as little-endian float64 in manifest
order. The manifest is ``{"params": [{"name", "dtype", "dims"}, ...],
"meta": {...}}``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

MAGIC = b"GAI1"
DTYPE_CODE = "f8"


class CheckpointError(ValueError):
    pass


def dumps(params: Dict[str, np.ndarray], meta: Optional[dict] = None) -> bytes:
    entries, chunks = [], []
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "dtype": DTYPE_CODE, "dims": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr).tobytes())
    manifest = json.dumps({"params": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(manifest)) + manifest + b"".join(chunks)


def loads(blob: bytes) -> Tuple[Dict[str, np.ndarray], dict]:
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}; not a GAI1 checkpoint")
    if len(blob) < 12:
        raise CheckpointError("truncated header")
    (length,) = struct.unpack("<Q", blob[4:12])
    try:
        manifest = json.loads(blob[12 : 12 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable manifest: {exc}") from exc
    payload = memoryview(blob)[12 + length :]
    expected = sum(8 * int(np.prod(e["dims"], dtype=np.int64)) for e in manifest["params"])
    if len(payload) != expected:
        raise CheckpointError(f"payload holds {len(payload)} bytes, manifest describes {expected}")
    params, offset = {}, 0
    for e in manifest["params"]:
        if e.get("dtype") != DTYPE_CODE:
            raise CheckpointError(f"unsupported dtype code {e.get('dtype')!r}")
        count = int(np.prod(e["dims"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        params[e["name"]] = arr.reshape(e["dims"]).astype(np.float64)
        offset += 8 * count
    return params, manifest.get("meta", {})


def save_checkpoint(params: Dict[str, np.ndarray], path, meta: Optional[dict] = None) -> None:
    Path(path).write_bytes(dumps(params, meta))


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
