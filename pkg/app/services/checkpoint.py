"""
Server cache checkpoints

File layout (little endian):
    magic       4 bytes  b"PFGC"
    version     u16
    round       u32
    then five sections, each a u32 entry count followed by its entries:
    class cache   (class u32, round u32, client u32, generator record)
    thetas        (client u32, fingerprint length u16, fingerprint ascii, size u64, float64 values)
    mirrors       (client u32, sub-model count u32, then (class u32, generator record) each)
    label counts  (client u32, class count u32, then (class u32, count u64) each)
    coupled       (client u32, generator record)

Generator records use GeneratorParams.to_bytes.
"""
import io
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from app.core.exceptions import ContractViolation
from app.models.federation import CachedGenerator, ServerCache
from app.models.generator import AuxiliaryModel, GeneratorParams
from app.models.labels import LabelCountVector
from app.models.params import ParamVector

logger = logging.getLogger(__name__)

MAGIC = b"PFGC"
FORMAT_VERSION = 1

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


class _Reader:
    """Cursor over checkpoint bytes."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, fmt: struct.Struct) -> int:
        if self.offset + fmt.size > len(self.data):
            raise ContractViolation(f"Truncated checkpoint at offset {self.offset}")
        (value,) = fmt.unpack_from(self.data, self.offset)
        self.offset += fmt.size
        return value

    def raw(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise ContractViolation(f"Truncated checkpoint at offset {self.offset}")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def generator(self) -> GeneratorParams:
        params, self.offset = GeneratorParams.decode(self.data, self.offset)
        return params


def encode_cache(cache: ServerCache) -> bytes:
    """Serialize a ServerCache to checkpoint bytes."""
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(_U16.pack(FORMAT_VERSION))
    out.write(_U32.pack(cache.round_index))

    out.write(_U32.pack(len(cache.class_cache)))
    for class_id, entry in cache.class_cache.items():
        out.write(_U32.pack(class_id) + _U32.pack(entry.round_index) + _U32.pack(entry.client_id))
        out.write(entry.params.to_bytes())

    out.write(_U32.pack(len(cache.thetas)))
    for client_id, theta in cache.thetas.items():
        fingerprint = theta.arch_fingerprint.encode("ascii")
        out.write(_U32.pack(client_id) + _U16.pack(len(fingerprint)) + fingerprint)
        out.write(_U64.pack(len(theta)))
        out.write(theta.values.astype("<f8").tobytes())

    out.write(_U32.pack(len(cache.mirrors)))
    for client_id, mirror in cache.mirrors.items():
        out.write(_U32.pack(client_id) + _U32.pack(len(mirror.submodels)))
        for class_id, params in mirror.submodels.items():
            out.write(_U32.pack(class_id))
            out.write(params.to_bytes())

    out.write(_U32.pack(len(cache.label_counts)))
    for client_id, counts in cache.label_counts.items():
        out.write(_U32.pack(client_id) + _U32.pack(len(counts.counts)))
        for class_id, count in counts.counts.items():
            out.write(_U32.pack(class_id) + _U64.pack(count))

    out.write(_U32.pack(len(cache.coupled)))
    for client_id, params in cache.coupled.items():
        out.write(_U32.pack(client_id))
        out.write(params.to_bytes())
    return out.getvalue()


def decode_cache(data: bytes) -> ServerCache:
    """
    Parse checkpoint bytes.

    Raises:
        ContractViolation: wrong magic, unsupported version, truncation or trailing bytes
    """
    if data[:4] != MAGIC:
        raise ContractViolation("Not a server cache checkpoint")
    reader = _Reader(data)
    reader.offset = 4
    version = reader.take(_U16)
    if version != FORMAT_VERSION:
        raise ContractViolation(f"Unsupported checkpoint version {version}")
    round_index = reader.take(_U32)

    class_cache = {}
    for _ in range(reader.take(_U32)):
        class_id, entry_round, client_id = reader.take(_U32), reader.take(_U32), reader.take(_U32)
        class_cache[class_id] = CachedGenerator(reader.generator(), entry_round, client_id)

    thetas = {}
    for _ in range(reader.take(_U32)):
        client_id = reader.take(_U32)
        fingerprint = reader.raw(reader.take(_U16)).decode("ascii")
        size = reader.take(_U64)
        values = np.frombuffer(reader.raw(8 * size), dtype="<f8").astype(np.float64)
        thetas[client_id] = ParamVector(values, fingerprint)

    mirrors = {}
    for _ in range(reader.take(_U32)):
        client_id = reader.take(_U32)
        submodels = {}
        for _ in range(reader.take(_U32)):
            class_id = reader.take(_U32)
            submodels[class_id] = reader.generator()
        mirrors[client_id] = AuxiliaryModel(submodels)

    label_counts = {}
    for _ in range(reader.take(_U32)):
        client_id = reader.take(_U32)
        counts = {}
        for _ in range(reader.take(_U32)):
            class_id = reader.take(_U32)
            counts[class_id] = reader.take(_U64)
        label_counts[client_id] = LabelCountVector(counts)

    coupled = {}
    for _ in range(reader.take(_U32)):
        client_id = reader.take(_U32)
        coupled[client_id] = reader.generator()

    if reader.offset != len(data):
        raise ContractViolation(f"Trailing bytes after checkpoint at offset {reader.offset}")
    return ServerCache(
        round_index=round_index,
        thetas=thetas,
        mirrors=mirrors,
        class_cache=class_cache,
        label_counts=label_counts,
        coupled=coupled,
    )


def save_cache(cache: ServerCache, path: Union[str, Path]) -> Path:
    """Write a checkpoint, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_cache(cache))
    logger.debug(f"Saved server cache of round {cache.round_index} to {path}")
    return path


def load_cache(path: Union[str, Path]) -> ServerCache:
    return decode_cache(Path(path).read_bytes())
