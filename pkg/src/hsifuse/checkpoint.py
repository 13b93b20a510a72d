"""HSCK checkpoint files: a JSON header followed by named float32 blocks.

Layout (all integers little-endian u32)::

    b"HSCK" | header length | header JSON (sorted keys)
    repeated: name length | name | rank | extents... | <f4 payload

Block names are prefixed by their group: ``param/``, ``buffer/``,
``adam.m/`` and ``adam.v/``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"HSCK"
GROUPS = ("param", "buffer", "adam.m", "adam.v")


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    epoch: int
    step: int
    rng_state: dict | None
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)

    def groups(self):
        return zip(GROUPS, (self.params, self.buffers, self.adam_m, self.adam_v))


def _header(ck: Checkpoint) -> bytes:
    head = {"config": ck.config, "epoch": int(ck.epoch), "step": int(ck.step), "rng_state": ck.rng_state}
    return json.dumps(head, sort_keys=True, separators=(",", ":")).encode("utf-8")


def to_bytes(ck: Checkpoint) -> bytes:
    head = _header(ck)
    out = [MAGIC, struct.pack("<I", len(head)), head]
    for group, blocks in ck.groups():
        for name in blocks:
            arr = np.ascontiguousarray(blocks[name], dtype="<f4")
            key = f"{group}/{name}".encode("utf-8")
            out.append(struct.pack("<I", len(key)) + key)
            out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            out.append(arr.tobytes())
    return b"".join(out)


def from_bytes(raw: bytes, source: str = "checkpoint") -> Checkpoint:
    if raw[:4] != MAGIC:
        raise CheckpointFormatError(f"{source}: bad magic {raw[:4]!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointFormatError(f"{source}: truncated at byte {pos}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    (hlen,) = struct.unpack("<I", take(4))
    try:
        head = json.loads(take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{source}: unreadable header ({exc})") from None
    ck = Checkpoint(head["config"], head["epoch"], head["step"], head["rng_state"])
    tables = dict(ck.groups())
    while pos < len(raw):
        (nlen,) = struct.unpack("<I", take(4))
        key = take(nlen).decode("utf-8")
        group, _, name = key.partition("/")
        if group not in tables or not name:
            raise CheckpointFormatError(f"{source}: unknown block {key!r}")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape, dtype=np.int64))
        tables[group][name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    return ck


def save_checkpoint(path, ck: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ck))


def load_checkpoint(path) -> Checkpoint:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    return from_bytes(p.read_bytes(), str(p))
