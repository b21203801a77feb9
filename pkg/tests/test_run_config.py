import json
from pathlib import Path

import pytest

from app.core.exceptions import ConfigError
from app.schemas.run import MethodId, RunConfig
from app.schemas.scenario import ScenarioKind
from app.services.run_config import config_from_dict, effective_config, parse_config, write_effective_config


def _write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "run.json"
    path.write_text(text, encoding="utf-8")
    return path


def test_empty_document_means_defaults(tmp_path: Path) -> None:
    cfg = parse_config(_write(tmp_path, ""))
    assert cfg.sgd.learning_rate == 0.01
    assert cfg.sgd.momentum == 0.9
    assert cfg.sgd.epochs == 20
    assert cfg.methods == [MethodId.PFEDGRP]
    assert cfg.scenario.kind == ScenarioKind.CLASS_INCREMENTAL
    assert cfg == parse_config(_write(tmp_path, "{}"))


def test_unknown_keys_are_named_by_path() -> None:
    with pytest.raises(ConfigError) as info:
        config_from_dict({"sgd": {"lrr": 0.1}})
    assert info.value.path == "sgd.lrr"
    with pytest.raises(ConfigError) as info:
        config_from_dict({"lrr": 0.1})
    assert info.value.path == "lrr"


def test_bad_values_are_named_by_path() -> None:
    with pytest.raises(ConfigError) as info:
        config_from_dict({"sgd": {"learning_rate": -1}})
    assert info.value.path == "sgd.learning_rate"
    with pytest.raises(ConfigError) as info:
        config_from_dict({"methods": ["fedsgd"]})
    assert info.value.path.startswith("methods")


def test_malformed_json_reports_the_position(tmp_path: Path) -> None:
    with pytest.raises(ConfigError) as info:
        parse_config(_write(tmp_path, '{\n  "seeds": [1,\n}'))
    assert "line 3" in info.value.message


def test_top_level_must_be_an_object() -> None:
    with pytest.raises(ConfigError):
        config_from_dict([1, 2])


def test_missing_file(tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.json")


def test_idx_files_must_exist(tmp_path: Path) -> None:
    present = tmp_path / "present.idx"
    present.write_bytes(b"")
    document = {
        "dataset": {
            "source": "idx",
            "train_images": str(tmp_path / "missing.idx"),
            "train_labels": str(present),
            "test_images": str(present),
            "test_labels": str(present),
        }
    }
    with pytest.raises(ConfigError) as info:
        config_from_dict(document)
    assert info.value.path == "dataset.train_images"


def test_idx_source_needs_every_path() -> None:
    with pytest.raises(ConfigError) as info:
        config_from_dict({"dataset": {"source": "idx"}})
    assert info.value.path.startswith("dataset")


def test_poisoned_client_must_exist() -> None:
    with pytest.raises(ConfigError):
        config_from_dict({"scenario": {"num_clients": 2}, "poison": {"client_id": 2}})


def test_effective_config_round_trips(tmp_path: Path) -> None:
    cfg = config_from_dict(
        {
            "methods": ["fedavg", "pfedgrp_asp"],
            "seeds": [3, 1],
            "scenario": {"kind": "circulating", "total_rounds": 12, "tasks_per_client": 3},
            "sgd": {"learning_rate": 0.05},
            "poison": {"client_id": 4},
        }
    )
    assert config_from_dict(effective_config(cfg)) == cfg

    path = write_effective_config(cfg, tmp_path / "out" / "effective_config.json")
    assert parse_config(path) == cfg
    assert json.loads(path.read_text(encoding="utf-8"))["sgd"]["learning_rate"] == 0.05


def test_defaults_serialize_every_section() -> None:
    document = effective_config(RunConfig())
    assert {"scenario", "dataset", "model", "sgd", "generator", "weight_opt"} <= set(document)


@pytest.mark.parametrize(
    "document, path",
    [
        ({"sgd": {"learning_rate": "0.5"}}, "sgd.learning_rate"),
        ({"sgd": {"epochs": 3.0}}, "sgd.epochs"),
        ({"sgd": {"epochs": "3"}}, "sgd.epochs"),
        ({"replay_enabled": "no"}, "replay_enabled"),
        ({"force_uniform_weights": 1}, "force_uniform_weights"),
        ({"seeds": ["0"]}, "seeds.0"),
    ],
)
def test_values_are_not_coerced(document: dict, path: str) -> None:
    with pytest.raises(ConfigError) as info:
        config_from_dict(document)
    assert info.value.path == path


def test_integers_are_accepted_for_float_keys() -> None:
    cfg = config_from_dict({"sgd": {"learning_rate": 1}, "lambda_align": 0})
    assert cfg.sgd.learning_rate == 1.0
    assert cfg.lambda_align == 0.0


def test_defaults_match_the_documented_experiment_settings() -> None:
    cfg = RunConfig()
    assert cfg.model.hidden_dims == (64, 64)
    assert cfg.weight_opt.step_growth == 1.0
    assert cfg.lambda_align == 0.1
    assert cfg.checkpoint_dir is None
