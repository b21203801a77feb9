from pathlib import Path

import numpy as np
import pytest

from app.core.exceptions import ContractViolation
from app.core.seeding import rng_for
from app.models.federation import RoundUpload, ServerCache
from app.models.generator import GeneratorKind
from app.models.labels import LabelCountVector
from app.schemas.model import ModelArch
from app.services.checkpoint import MAGIC, decode_cache, encode_cache, load_cache, save_cache
from app.services.replay import fit_submodel
from app.services.server import merge_uploads
from app.services.task_model import init_params


def _cache() -> ServerCache:
    arch = ModelArch(input_dim=2, hidden_dims=(3,), num_classes=3)
    rng = np.random.default_rng(0)
    gmm = fit_submodel(rng.normal(size=(30, 2)), n_components=2, init_iterations=4)
    diag = fit_submodel(rng.normal(size=(10, 2)) + 3.0, kind=GeneratorKind.DIAG_GAUSSIAN)
    uploads = [
        RoundUpload(
            client_id=0,
            theta_star=init_params(arch, rng_for(1)),
            updated_submodels={0: gmm, 2: diag},
            label_counts=LabelCountVector({0: 30, 2: 10}),
        ),
        RoundUpload(
            client_id=1,
            theta_star=init_params(arch, rng_for(2)),
            label_counts=LabelCountVector({1: 7}),
            coupled_generator=gmm,
        ),
    ]
    return merge_uploads(uploads, merge_uploads(uploads[:1], ServerCache()))


def _assert_same(a: ServerCache, b: ServerCache) -> None:
    assert a.round_index == b.round_index
    assert dict(a.thetas) == dict(b.thetas)
    assert dict(a.label_counts) == dict(b.label_counts)
    assert set(a.class_cache) == set(b.class_cache)
    for class_id, entry in a.class_cache.items():
        other = b.class_cache[class_id]
        assert (entry.round_index, entry.client_id) == (other.round_index, other.client_id)
        assert entry.params.allclose(other.params)
    for client_id, mirror in a.mirrors.items():
        assert mirror.classes() == b.mirrors[client_id].classes()
        for class_id in mirror.classes():
            assert mirror.get(class_id).allclose(b.mirrors[client_id].get(class_id))
    assert set(a.coupled) == set(b.coupled)
    assert a.coupled[1].allclose(b.coupled[1])


def test_checkpoint_restores_the_cache(tmp_path: Path) -> None:
    cache = _cache()
    path = save_cache(cache, tmp_path / "ckpt" / "cache.bin")
    assert path.read_bytes()[:4] == MAGIC
    _assert_same(cache, load_cache(path))
    assert load_cache(path).round_index == 2


def test_empty_cache_round_trip() -> None:
    restored = decode_cache(encode_cache(ServerCache()))
    assert restored.round_index == 0
    assert not restored.class_cache and not restored.thetas


def test_corrupt_checkpoints_are_rejected() -> None:
    data = encode_cache(_cache())
    with pytest.raises(ContractViolation):
        decode_cache(b"XXXX" + data[4:])
    with pytest.raises(ContractViolation):
        decode_cache(data[:-3])
    with pytest.raises(ContractViolation):
        decode_cache(data + b"\x00")
    with pytest.raises(ContractViolation):
        decode_cache(data[:4] + b"\x09\x00" + data[6:])
