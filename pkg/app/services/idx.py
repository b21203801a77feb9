"""
IDX file codec (MNIST / FashionMNIST / EMNIST distribution format)

Layout (big endian):
    offset 0   u8  0
    offset 1   u8  0
    offset 2   u8  element type (0x08 = unsigned byte)
    offset 3   u8  number of dimensions
    offset 4   u32 size of each dimension
    ...        u8  elements, row-major
Reference: http://yann.lecun.com/exdb/mnist/
"""
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from app.core.exceptions import IdxParseError
from app.models.batch import LabeledBatch

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
UBYTE = 0x08


@dataclass(frozen=True, eq=False)
class IdxArray:
    """Decoded IDX payload: declared dimensions plus raw unsigned bytes."""

    magic: int
    dims: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.uint8).reshape(self.dims)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)


def decode_idx(raw: bytes, expected_magic: int) -> IdxArray:
    """
    Parse IDX bytes.

    Raises:
        IdxParseError: bad magic, truncated header or body, trailing bytes
    """
    if len(raw) < 4:
        raise IdxParseError("Truncated magic number", len(raw))
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise IdxParseError(f"Bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    ndim = raw[3]
    header_size = 4 + 4 * ndim
    if len(raw) < header_size:
        raise IdxParseError("Truncated dimension header", len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    size = int(np.prod(dims, dtype=np.int64)) if dims else 0
    end = header_size + size
    if len(raw) < end:
        raise IdxParseError(f"Truncated data: expected {size} elements", len(raw))
    if len(raw) > end:
        raise IdxParseError("Trailing bytes after declared data", end)
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=header_size)
    return IdxArray(magic=magic, dims=tuple(dims), data=data)


def encode_idx(array: IdxArray) -> bytes:
    """Serialize back to IDX bytes."""
    header = struct.pack(f">I{len(array.dims)}I", array.magic, *array.dims)
    return header + array.data.tobytes()


def read_idx(path: Union[str, Path], expected_magic: int) -> IdxArray:
    return decode_idx(Path(path).read_bytes(), expected_magic)


def write_idx(path: Union[str, Path], array: IdxArray) -> None:
    Path(path).write_bytes(encode_idx(array))


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path]) -> LabeledBatch:
    """
    Load an image/label file pair.

    Pixels are scaled to [0, 1] and images flattened row-major.

    Args:
        images_path: IDX file with magic 0x00000803
        labels_path: IDX file with magic 0x00000801

    Returns:
        Labelled rows, one per image

    Raises:
        IdxParseError: format violations or an image/label count mismatch
    """
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.dims[0] != labels.dims[0]:
        raise IdxParseError(f"Label count {labels.dims[0]} differs from image count {images.dims[0]}", 4)
    features = images.data.reshape(images.dims[0], -1).astype(np.float64) / 255.0
    logger.info(f"Loaded {images.dims[0]} images of shape {images.dims[1:]} from {images_path}")
    return LabeledBatch(features, labels.data.astype(np.int64))
