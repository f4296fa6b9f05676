"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic    8 bytes  b"BVICKPT\\0"
    version  u32
    hlen     u32      length of the UTF-8 JSON header
    header   hlen     {"config", "step", "rng", "tensors": [[name, shape, offset, nbytes], ...]}
    plen     u64      payload length
    crc32    u32      of the payload
    payload  plen     float32 little-endian tensor data, concatenated

Any length or checksum mismatch raises :class:`IntegrityError` before state
is returned, so a truncated file never yields partial parameters.
"""
from dataclasses import dataclass, field
import json
import os
from pathlib import Path
import struct
import zlib

import numpy as np
import torch

from .errors import IntegrityError, UnsupportedVersionError

MAGIC = b"BVICKPT\0"
VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict  # name -> np.ndarray (float32)
    config: dict = field(default_factory=dict)
    step: int = 0
    rng: dict = field(default_factory=dict)


def save(path, ckpt: Checkpoint):
    table, chunks, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        if isinstance(arr, torch.Tensor):
            arr = arr.detach().cpu().numpy()
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append([name, list(np.shape(arr)), offset, len(data)])
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = json.dumps(
        {"config": ckpt.config, "step": int(ckpt.step), "rng": ckpt.rng, "tensors": table},
        sort_keys=True,
    ).encode("utf-8")
    blob = (
        MAGIC
        + struct.pack("<II", VERSION, len(header))
        + header
        + struct.pack("<QI", len(payload), zlib.crc32(payload))
        + payload
    )
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise IntegrityError(f"{path}: file too short ({len(raw)} bytes)")
    if raw[:8] != MAGIC:
        raise IntegrityError(f"{path}: bad magic")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version}, this build reads {VERSION}")
    pos = 16 + hlen
    if len(raw) < pos + 12:
        raise IntegrityError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:pos].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: unreadable header ({exc})") from None
    plen, crc = struct.unpack_from("<QI", raw, pos)
    payload = raw[pos + 12:]
    if len(payload) != plen:
        raise IntegrityError(f"{path}: payload is {len(payload)} bytes, header says {plen}")
    if zlib.crc32(payload) != crc:
        raise IntegrityError(f"{path}: payload checksum mismatch")
    tensors = {}
    for name, shape, offset, nbytes in header["tensors"]:
        if offset + nbytes > plen or nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
            raise IntegrityError(f"{path}: tensor {name!r} exceeds payload")
        tensors[name] = np.frombuffer(payload, "<f4", count=nbytes // 4, offset=offset).reshape(shape).copy()
    return Checkpoint(tensors, header["config"], header["step"], header["rng"])
