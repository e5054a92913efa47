"""Flat binary container for named float64 arrays.

Layout::

    8 bytes   magic b"PCGMTL01"
    8 bytes   little-endian uint64 length of the JSON index
    N bytes   UTF-8 JSON index {"meta": {...}, "entries": [{name, shape, offset, nbytes}]}
    ...       concatenated little-endian float64 payloads, offsets relative to payload start
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

MAGIC = b"PCGMTL01"
_DTYPE = np.dtype("<f8")


def save_arrays(path: Union[str, Path], arrays: Dict[str, np.ndarray], meta: dict = None) -> None:
    entries = []
    payload = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype=_DTYPE)
        raw = data.tobytes()
        entries.append({"name": name, "shape": list(data.shape), "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    index = json.dumps({"meta": meta or {}, "entries": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(index)))
        fh.write(index)
        for raw in payload:
            fh.write(raw)


def load_arrays(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (n_index,) = struct.unpack("<Q", blob[8:16])
    index = json.loads(blob[16 : 16 + n_index].decode("utf-8"))
    base = 16 + n_index
    arrays = {}
    for e in index["entries"]:
        start = base + e["offset"]
        raw = blob[start : start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise ValueError(f"{path}: truncated entry {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(raw, dtype=_DTYPE).reshape(e["shape"]).copy()
    return arrays, index["meta"]
