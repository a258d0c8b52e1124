"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"LCAK"            magic
    u32                format version
    u32                descriptor length in bytes
    bytes              descriptor, UTF-8 JSON with sorted keys
    u64                payload length in floats
    f32[count]         payload, sections concatenated in descriptor order
    u32                CRC32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from ..errors import BadMagicError, BadVersionError, CheckpointError, CrcMismatchError, LocAtlasError

MAGIC = b"LCAK"
VERSION = 1


def encode_checkpoint(kind: str, sections: dict, specs: dict | None = None, meta: dict | None = None) -> bytes:
    names = list(sections)
    arrays = [np.asarray(sections[k], dtype="<f4").ravel() for k in names]
    desc = {
        "kind": kind,
        "specs": specs or {},
        "meta": meta or {},
        "sections": [[k, int(a.size)] for k, a in zip(names, arrays)],
    }
    blob = json.dumps(desc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.concatenate(arrays).astype("<f4") if arrays else np.zeros(0, "<f4")
    body = MAGIC + struct.pack("<II", VERSION, len(blob)) + blob + struct.pack("<Q", payload.size) + payload.tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(data: bytes):
    """Return ``(kind, sections, specs, meta)``; sections are float64 arrays."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not a checkpoint: wrong magic bytes")
    if len(data) < 4 + 8 + 8 + 4:
        raise CheckpointError("checkpoint truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CrcMismatchError("checkpoint CRC mismatch")
    version, dlen = struct.unpack("<II", body[4:12])
    if version != VERSION:
        raise BadVersionError(f"unsupported checkpoint version {version}")
    try:
        desc = json.loads(body[12:12 + dlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"bad descriptor: {exc}") from exc
    off = 12 + dlen
    (count,) = struct.unpack("<Q", body[off:off + 8])
    payload = np.frombuffer(body[off + 8:], dtype="<f4")
    if payload.size != count or sum(n for _, n in desc["sections"]) != count:
        raise CheckpointError("payload length does not match the descriptor")
    sections, pos = {}, 0
    for name, n in desc["sections"]:
        sections[name] = payload[pos:pos + n].astype(np.float64)
        pos += n
    return desc["kind"], sections, desc["specs"], desc["meta"]


def write_checkpoint(path, kind, sections, specs=None, meta=None) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(encode_checkpoint(kind, sections, specs, meta))
    except OSError as exc:
        raise LocAtlasError(f"cannot write {path}: {exc}") from exc


def read_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise LocAtlasError(f"cannot read {path}: {exc}") from exc
    return decode_checkpoint(data)
