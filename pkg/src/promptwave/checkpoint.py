"""Binary checkpoint container.

Layout (little-endian): magic "MOUS", u32 version (1), u32 kind tag,
u64 config length + UTF-8 config text, u64 tensor count, then per tensor
u16 name length, name bytes, u8 rank, u64 per dim, raw float32 payload,
and a trailing u64 CRC-64 of all preceding bytes. The same container holds
models (kinds stage1/stage2) and encoded latents (kind latent).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"MOUS"
VERSION = 1

KIND_TAGS = {"stage1": 1, "stage2": 2, "latent": 3}
KIND_NAMES = {v: k for k, v in KIND_TAGS.items()}


class CheckpointError(ValueError):
    """Malformed, truncated, or incompatible checkpoint data."""


# -- CRC-64 (ECMA-182 reflected, aka CRC-64/XZ), slice-by-8 -------------------

_POLY = 0xC96C5795D7870F42


def _make_tables():
    t0 = []
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ _POLY if crc & 1 else crc >> 1
        t0.append(crc)
    tables = [t0]
    for k in range(1, 8):
        prev = tables[k - 1]
        tables.append([(prev[i] >> 8) ^ t0[prev[i] & 0xFF] for i in range(256)])
    return tables


_TABLES = _make_tables()


def crc64(data: bytes, crc: int = 0) -> int:
    crc ^= 0xFFFFFFFFFFFFFFFF
    t0, t1, t2, t3, t4, t5, t6, t7 = _TABLES
    n = len(data) - (len(data) % 8)
    i = 0
    while i < n:
        crc ^= int.from_bytes(data[i:i + 8], "little")
        crc = (t7[crc & 0xFF] ^ t6[(crc >> 8) & 0xFF] ^ t5[(crc >> 16) & 0xFF]
               ^ t4[(crc >> 24) & 0xFF] ^ t3[(crc >> 32) & 0xFF] ^ t2[(crc >> 40) & 0xFF]
               ^ t1[(crc >> 48) & 0xFF] ^ t0[crc >> 56])
        i += 8
    for b in data[n:]:
        crc = _TABLES[0][(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFFFFFFFFFF


# -- container ---------------------------------------------------------------


@dataclass
class Checkpoint:
    kind: str
    config_text: str
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KIND_TAGS:
            raise CheckpointError(f"unknown checkpoint kind '{self.kind}'")


def _encode(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, KIND_TAGS[ckpt.kind])]
    blob = ckpt.config_text.encode("utf-8")
    parts.append(struct.pack("<Q", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<Q", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        a = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape) if a.ndim else b"")
        parts.append(a.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", crc64(body))


def save(path, ckpt: Checkpoint):
    with open(path, "wb") as f:
        f.write(_encode(ckpt))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u(self, fmt: str, what: str) -> int:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))[0]


def load(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8:
        raise CheckpointError("truncated checkpoint: shorter than its checksum")
    body, (stored_crc,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    r = _Reader(body)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}; expected {MAGIC!r}")
    version = r.u("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}; expected {VERSION}")
    kind_tag = r.u("<I", "kind")
    if kind_tag not in KIND_NAMES:
        raise CheckpointError(f"unknown kind tag {kind_tag}")
    cfg_len = r.u("<Q", "config length")
    config_text = r.take(cfg_len, "config blob").decode("utf-8")
    count = r.u("<Q", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        name_len = r.u("<H", f"tensor {i} name length")
        name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        rank = r.u("<B", f"'{name}' rank")
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank, f"'{name}' dims")) if rank else ()
        size = int(np.prod(dims)) if rank else 1
        payload = r.take(4 * size, f"'{name}' payload")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if r.pos != len(body):
        raise CheckpointError(f"{len(body) - r.pos} trailing bytes before checksum")
    actual = crc64(body)
    if actual != stored_crc:
        raise CheckpointError(
            f"checksum mismatch: stored {stored_crc:016x}, computed {actual:016x}")
    return Checkpoint(KIND_NAMES[kind_tag], config_text, tensors)
