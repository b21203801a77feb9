"""
Shared fixtures: tiny architectures, synthetic data and a fast run document
"""
import numpy as np
import pytest

from app.core.seeding import Stream, rng_for
from app.models.batch import LabeledBatch
from app.models.generator import GeneratorKind
from app.schemas.model import Activation, ModelArch, SgdConfig
from app.schemas.run import ClientConfig, GeneratorConfig, RunConfig
from app.services.data_stream import make_synthetic
from app.services.task_model import init_params


def blob_batch(class_ids, rows_per_class: int, feature_dim: int = 2, separation: float = 4.0, seed: int = 0):
    """Rows of the requested classes from a synthetic store, in class order."""
    num_classes = max(class_ids) + 1
    store = make_synthetic(max(num_classes, 2), feature_dim, rows_per_class, 1, separation, seed)
    return LabeledBatch.concat(
        LabeledBatch(store.train_pools[c], np.full(rows_per_class, c)) for c in class_ids
    )


@pytest.fixture
def tanh_arch() -> ModelArch:
    return ModelArch(input_dim=3, hidden_dims=(4,), num_classes=3, activation=Activation.TANH)


@pytest.fixture
def small_arch() -> ModelArch:
    return ModelArch(input_dim=2, hidden_dims=(8,), num_classes=4)


@pytest.fixture
def client_cfg(small_arch: ModelArch) -> ClientConfig:
    return ClientConfig(
        arch=small_arch,
        sgd=SgdConfig(learning_rate=0.05, epochs=3, batch_size=32),
        generator=GeneratorConfig(kind=GeneratorKind.GMM, n_components=2, init_iterations=10, transfer_iterations=3),
        lambda_align=1.0,
        prox_mu=0.0,
    )


@pytest.fixture
def global_model(small_arch: ModelArch):
    return init_params(small_arch, rng_for(0, Stream.INIT))


@pytest.fixture
def run_cfg(tmp_path) -> RunConfig:
    """Two clients, four classes, two class-incremental rounds."""
    return RunConfig.model_validate(
        {
            "scenario": {
                "kind": "class_incremental",
                "num_clients": 2,
                "num_classes": 4,
                "classes_per_task": 2,
                "samples_per_class": 20,
            },
            "dataset": {"feature_dim": 2, "class_separation": 4.0},
            "model": {"hidden_dims": [8]},
            "sgd": {"learning_rate": 0.05, "epochs": 2, "batch_size": 16},
            "generator": {"n_components": 2, "init_iterations": 5, "transfer_iterations": 2},
            "weight_opt": {"steps": 3},
            "replay_budget": 64,
            "output_dir": str(tmp_path / "results"),
        }
    )


@pytest.fixture
def blobs():
    return blob_batch
