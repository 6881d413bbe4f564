"""Self-contained binary checkpoint.

Layout (all integers little-endian)::

    b"MDRT" | u32 version | u64 body length | body | u64 CRC-64/XZ

The CRC covers every byte before it. The body is a run of sections, each
``u32 name length | name | u64 payload length | payload``, in the order
config (JSON), vocab (one token per line), codec (one label per line),
manifest (JSON list of tensor name/shape/offset), tensors (raw float64).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import LabelCodec
from .model import ModelConfig, Params
from .tokenize import Vocabulary

MAGIC = b"MDRT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_SECTIONS = ("config", "vocab", "codec", "manifest", "tensors")


def _crc64_table() -> list[int]:
    poly = 0xC96C5795D7870F42  # ECMA-182, reflected
    table = []
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ poly if crc & 1 else crc >> 1
        table.append(crc)
    return table


_CRC_TABLE = _crc64_table()


def crc64(data: bytes) -> int:
    """CRC-64/XZ (check value for b"123456789" is 0x995DC9BBDF1939FA)."""
    crc = 0xFFFFFFFFFFFFFFFF
    table = _CRC_TABLE
    for b in data:
        crc = table[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFFFFFFFFFF


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    def __init__(self, found: int):
        self.found = found
        super().__init__(f"checkpoint format version {found} is not supported (expected {FORMAT_VERSION})")


class TruncatedCheckpointError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    vocab: Vocabulary
    codec: LabelCodec
    params: Params
    train_config: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    checksum: int | None = None  # set by save/load

    @property
    def model_version(self) -> str:
        if self.checksum is None:
            return "unsaved"
        return f"{self.checksum:016x}"[:12]


def _section(name: str, payload: bytes) -> bytes:
    raw = name.encode("ascii")
    return struct.pack("<I", len(raw)) + raw + struct.pack("<Q", len(payload)) + payload


def to_bytes(ckpt: Checkpoint, version: int = FORMAT_VERSION) -> bytes:
    config = {
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config,
        "history": ckpt.history,
        "vocab_meta": {"min_freq": ckpt.vocab.min_freq, "max_size": ckpt.vocab.max_size},
    }
    manifest, chunks, offset = [], [], 0
    for name, arr in ckpt.params.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    body = b"".join([
        _section("config", json.dumps(config, sort_keys=True, ensure_ascii=False).encode("utf-8")),
        _section("vocab", ckpt.vocab.to_text().encode("utf-8")),
        _section("codec", "".join(lab + "\n" for lab in ckpt.codec.labels).encode("utf-8")),
        _section("manifest", json.dumps(manifest, sort_keys=True).encode("utf-8")),
        _section("tensors", b"".join(chunks)),
    ])
    head = _HEADER.pack(MAGIC, version, len(body)) + body
    return head + struct.pack("<Q", crc64(head))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> int:
    """Write ``ckpt`` and return its checksum (also stored on ``ckpt``)."""
    blob = to_bytes(ckpt)
    Path(path).write_bytes(blob)
    ckpt.checksum = struct.unpack("<Q", blob[-8:])[0]
    return ckpt.checksum


def _read_sections(body: bytes) -> dict[str, bytes]:
    sections, pos = {}, 0
    while pos < len(body):
        if pos + 4 > len(body):
            raise TruncatedCheckpointError("section header cut short")
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        name = body[pos : pos + n].decode("ascii")
        pos += n
        if pos + 8 > len(body):
            raise TruncatedCheckpointError(f"section {name!r} length cut short")
        (size,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        if pos + size > len(body):
            raise TruncatedCheckpointError(f"section {name!r} payload cut short")
        sections[name] = body[pos : pos + size]
        pos += size
    missing = [s for s in _SECTIONS if s not in sections]
    if missing:
        raise CheckpointFormatError(f"missing section(s): {', '.join(missing)}")
    return sections


def from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < _HEADER.size + 8:
        raise TruncatedCheckpointError(f"file is {len(blob)} bytes, shorter than header + checksum")
    magic, version, body_len = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(version)
    expected_len = _HEADER.size + body_len + 8
    if len(blob) < expected_len:
        raise TruncatedCheckpointError(f"file is {len(blob)} bytes, header declares {expected_len}")
    if len(blob) > expected_len:
        raise CheckpointFormatError(f"{len(blob) - expected_len} trailing bytes after checksum")
    (stored,) = struct.unpack_from("<Q", blob, expected_len - 8)
    actual = crc64(blob[: expected_len - 8])
    if stored != actual:
        raise ChecksumError(f"checksum mismatch: stored {stored:016x}, computed {actual:016x}")

    sections = _read_sections(blob[_HEADER.size : _HEADER.size + body_len])
    config = json.loads(sections["config"].decode("utf-8"))
    vmeta = config.get("vocab_meta", {})
    vocab = Vocabulary.from_text(sections["vocab"].decode("utf-8"), **vmeta)
    labels = sections["codec"].decode("utf-8").split("\n")[:-1]
    tensors = sections["tensors"]
    params: Params = {}
    for entry in json.loads(sections["manifest"].decode("utf-8")):
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(tensors):
            raise CheckpointFormatError(f"tensor {entry['name']} overruns tensor section")
        arr = np.frombuffer(tensors, dtype="<f8", count=nbytes // 8, offset=start)
        params[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return Checkpoint(
        model_config=ModelConfig(**config["model_config"]),
        vocab=vocab,
        codec=LabelCodec(tuple(labels)),
        params=params,
        train_config=config.get("train_config", {}),
        history=config.get("history", []),
        checksum=stored,
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
