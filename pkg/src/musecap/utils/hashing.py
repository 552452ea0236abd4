"""Stable digests for configs, vocabularies and parameter snapshots."""

import hashlib
import json
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np
import torch


def canonical_json(data: Any) -> str:
    """Serialize to JSON with sorted keys and no insignificant whitespace."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=str)


def text_digest(text: str) -> str:
    """SHA-256 hex digest of a UTF-8 string."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def config_digest(data: Any) -> str:
    """Digest of any JSON-serializable structure, independent of key order."""
    return text_digest(canonical_json(data))


def file_digest(path: Path, chunk_size: int = 1 << 16) -> str:
    """SHA-256 of a file's bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            h.update(chunk)
    return h.hexdigest()


def array_digest(arrays: Mapping[str, np.ndarray]) -> str:
    """Digest of named arrays, covering names, dtypes, shapes and raw bytes."""
    h = hashlib.sha256()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        h.update(name.encode("utf-8"))
        h.update(str(arr.dtype).encode("utf-8"))
        h.update(str(arr.shape).encode("utf-8"))
        h.update(arr.tobytes())
    return h.hexdigest()


def module_digest(module: torch.nn.Module) -> str:
    """Bit-exact digest of every parameter and buffer of a module."""
    state = module.state_dict()
    return array_digest({name: tensor.detach().cpu().numpy() for name, tensor in state.items()})
