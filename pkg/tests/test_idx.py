import struct
from pathlib import Path

import numpy as np
import pytest

from app.core.exceptions import IdxParseError
from app.services.idx import IMAGE_MAGIC, LABEL_MAGIC, IdxArray, decode_idx, encode_idx, load_idx, write_idx


def _two_images() -> bytes:
    pixels = bytes(range(18))
    return struct.pack(">IIII", IMAGE_MAGIC, 2, 3, 3) + pixels


def test_decodes_a_hand_built_file() -> None:
    array = decode_idx(_two_images(), IMAGE_MAGIC)
    assert array.dims == (2, 3, 3)
    assert array.data[1, 2, 2] == 17
    assert array.data[0, 0, 1] == 1


def test_bad_magic_is_reported_at_offset_zero() -> None:
    with pytest.raises(IdxParseError) as info:
        decode_idx(_two_images(), LABEL_MAGIC)
    assert info.value.offset == 0


def test_truncated_body_is_rejected() -> None:
    with pytest.raises(IdxParseError) as info:
        decode_idx(_two_images()[:-1], IMAGE_MAGIC)
    assert info.value.offset == len(_two_images()) - 1


def test_truncated_header_is_rejected() -> None:
    with pytest.raises(IdxParseError):
        decode_idx(_two_images()[:10], IMAGE_MAGIC)


def test_trailing_bytes_are_rejected() -> None:
    raw = _two_images() + b"\x00"
    with pytest.raises(IdxParseError) as info:
        decode_idx(raw, IMAGE_MAGIC)
    assert info.value.offset == len(raw) - 1


def test_encode_reproduces_the_original_bytes() -> None:
    raw = _two_images()
    assert encode_idx(decode_idx(raw, IMAGE_MAGIC)) == raw


def test_load_idx_scales_and_flattens(tmp_path: Path) -> None:
    images = IdxArray(IMAGE_MAGIC, (2, 2, 2), np.array([0, 255, 51, 102, 255, 0, 0, 0], dtype=np.uint8))
    labels = IdxArray(LABEL_MAGIC, (2,), np.array([3, 1], dtype=np.uint8))
    write_idx(tmp_path / "images.idx", images)
    write_idx(tmp_path / "labels.idx", labels)

    batch = load_idx(tmp_path / "images.idx", tmp_path / "labels.idx")
    assert batch.features.shape == (2, 4)
    np.testing.assert_allclose(batch.features[0], [0.0, 1.0, 0.2, 0.4])
    assert batch.labels.tolist() == [3, 1]


def test_load_idx_rejects_count_mismatch(tmp_path: Path) -> None:
    write_idx(tmp_path / "images.idx", IdxArray(IMAGE_MAGIC, (2, 1, 1), np.zeros(2, dtype=np.uint8)))
    write_idx(tmp_path / "labels.idx", IdxArray(LABEL_MAGIC, (3,), np.zeros(3, dtype=np.uint8)))
    with pytest.raises(IdxParseError):
        load_idx(tmp_path / "images.idx", tmp_path / "labels.idx")
