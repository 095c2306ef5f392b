"""Named-tensor archive used for checkpoints and embedding caches.

Layout (all integers little-endian)::

    b"ANTC" | version u32 | config hash (32 bytes) | RNG state 4 x u64
    then records until EOF:
    name length u32 | name (utf-8) | rank u32 | dims u32 x rank | payload f32 x prod(dims)

The phase tag is stored as an empty record named ``meta.phase=<tag>``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"ANTC"
VERSION = 1
_PHASE = "meta.phase="


class CheckpointError(ValueError):
    """Raised for missing, truncated or incompatible archives."""


@dataclass
class Checkpoint:
    config_hash: bytes
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: tuple[int, int, int, int] = (0, 0, 0, 0)
    phase: str = ""

    def __post_init__(self):
        if len(self.config_hash) != 32:
            raise CheckpointError(f"config hash must be 32 bytes, got {len(self.config_hash)}")

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<I", VERSION), self.config_hash, struct.pack("<4Q", *self.rng_state)]
        records = dict(self.tensors)
        if self.phase:
            records = {_PHASE + self.phase: np.zeros((0,), np.float32), **records}
        for name, arr in records.items():
            arr = np.asarray(arr)
            raw = name.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
            parts.append(struct.pack("<I", arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        view = memoryview(blob)
        off = 0

        def take(n: int, what: str) -> memoryview:
            nonlocal off
            if off + n > len(view):
                raise CheckpointError(f"truncated archive: {what} needs {n} bytes at offset {off}, "
                                      f"only {len(view) - off} left")
            chunk = view[off:off + n]
            off += n
            return chunk

        if bytes(take(4, "magic")) != MAGIC:
            raise CheckpointError("bad magic at offset 0: not an ANTC archive")
        (version,) = struct.unpack("<I", take(4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported archive version {version} at offset 4")
        config_hash = bytes(take(32, "config hash"))
        rng_state = struct.unpack("<4Q", take(32, "rng state"))
        tensors: dict[str, np.ndarray] = {}
        phase = ""
        while off < len(view):
            start = off
            (name_len,) = struct.unpack("<I", take(4, "name length"))
            try:
                name = bytes(take(name_len, "name")).decode("utf-8")
            except UnicodeDecodeError:
                raise CheckpointError(f"record name at offset {start + 4} is not valid utf-8") from None
            (rank,) = struct.unpack("<I", take(4, "rank"))
            dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
            count = int(np.prod(dims)) if rank else 1
            payload = np.frombuffer(take(4 * count, f"payload of {name!r}"), dtype="<f4")
            arr = payload.reshape(dims).astype(np.float32)
            if name.startswith(_PHASE):
                phase = name[len(_PHASE):]
            elif name in tensors:
                raise CheckpointError(f"duplicate record {name!r} at offset {start}")
            else:
                tensors[name] = arr
        return cls(config_hash, tensors, tuple(rng_state), phase)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(ckpt.to_bytes())


def load_checkpoint(path: str | Path, expected_hash: bytes | None = None) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    ckpt = Checkpoint.from_bytes(blob)
    if expected_hash is not None and ckpt.config_hash != expected_hash:
        raise CheckpointError(f"config hash mismatch: archive {ckpt.config_hash.hex()[:16]}..., "
                              f"expected {expected_hash.hex()[:16]}...")
    return ckpt
