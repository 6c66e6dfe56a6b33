"""Versioned binary checkpoint container.

Layout (all integers little-endian uint32):

    magic   b"SDAW1\\n"
    cfg_len, cfg_json            model config as sorted-key JSON (utf-8)
    n_tensors
    per tensor, sorted by name:
        name_len, name (utf-8)
        ndim, dims...
        payload: float64 little-endian, row-major

Writers emit canonical bytes, so identical weights produce identical files.
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from .model import ModelConfig, ModelWeights, init_weights, named_parameters

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "weights_digest"]

MAGIC = b"SDAW1\n"


class CheckpointError(ValueError):
    pass


def _config_json(config: ModelConfig) -> bytes:
    d = dataclasses.asdict(config)
    d["channels"] = list(d["channels"])
    d["blocks_per_level"] = list(d["blocks_per_level"])
    return json.dumps(d, sort_keys=True).encode()


def save_checkpoint(path, weights: ModelWeights) -> None:
    cfg = _config_json(weights.config)
    entries = sorted(named_parameters(weights), key=lambda kv: kv[0])
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(entries)))
        for name, tensor in entries:
            encoded = name.encode()
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            arr = tensor.data.astype("<f8")   # preserves 0-d shapes
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
            fh.write(arr.tobytes())


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> ModelWeights:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    r = _Reader(raw, path)
    r.take(len(MAGIC))
    try:
        cfg_dict = json.loads(r.take(r.u32()).decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: bad config block: {exc}") from None
    cfg_dict["channels"] = tuple(cfg_dict["channels"])
    cfg_dict["blocks_per_level"] = tuple(cfg_dict["blocks_per_level"])
    config = ModelConfig(**cfg_dict)

    arrays: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim)) if ndim else ()
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).copy()

    weights = init_weights(config, seed=0)
    expected = dict(named_parameters(weights))
    if set(expected) != set(arrays):
        missing = sorted(set(expected) - set(arrays))[:3]
        extra = sorted(set(arrays) - set(expected))[:3]
        raise CheckpointError(f"{path}: tensor names do not match config "
                              f"(missing {missing}, unexpected {extra})")
    for name, tensor in expected.items():
        if arrays[name].shape != tensor.data.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        tensor.data = arrays[name]
    return weights


def weights_digest(weights: ModelWeights, exclude_prefixes: tuple[str, ...] = ()) -> str:
    """Order-stable hex digest of (a subset of) the parameter payloads."""
    import hashlib

    h = hashlib.sha256()
    for name, tensor in sorted(named_parameters(weights), key=lambda kv: kv[0]):
        if any(name.startswith(p) for p in exclude_prefixes):
            continue
        h.update(name.encode())
        h.update(tensor.data.astype("<f8").tobytes())
    return h.hexdigest()
