"""
Run configuration loading
Parses JSON run documents into RunConfig and writes the effective configuration back out
Reference: https://docs.pydantic.dev/latest/errors/validation_errors/
"""
import json
import logging
from pathlib import Path
from typing import Any, Union

from pydantic import ValidationError

from app.core.exceptions import ConfigError
from app.schemas.run import DatasetSource, RunConfig

logger = logging.getLogger(__name__)

_IDX_KEYS = ("train_images", "train_labels", "test_images", "test_labels")


def _error_path(error: dict[str, Any]) -> str:
    return ".".join(str(part) for part in error["loc"])


def config_from_dict(document: Any) -> RunConfig:
    """
    Validate a decoded document.

    Validation is strict: numbers must be JSON numbers, integers must be written without a
    fraction and booleans must be true or false.

    Raises:
        ConfigError: the first validation failure, naming its key path
    """
    if not isinstance(document, dict):
        raise ConfigError("Top level of a run document must be an object")
    try:
        cfg = RunConfig.model_validate_json(json.dumps(document), strict=True)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(first["msg"], _error_path(first)) from e

    if cfg.dataset.source == DatasetSource.IDX:
        for key, path in zip(_IDX_KEYS, cfg.dataset.idx_paths):
            if not path.is_file():
                raise ConfigError(f"File not found: {path}", f"dataset.{key}")
    return cfg


def parse_config(path: Union[str, Path]) -> RunConfig:
    """
    Load a run document; an empty file means all defaults.

    Raises:
        ConfigError: unreadable file, malformed JSON, unknown key, bad value or missing IDX file
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read {path}: {e.strerror}") from e
    if not text.strip():
        document: Any = {}
    else:
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Malformed JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    cfg = config_from_dict(document)
    logger.debug(f"Parsed run document {path}")
    return cfg


def effective_config(cfg: RunConfig) -> dict[str, Any]:
    """Fully resolved document; parsing it back gives an equal RunConfig."""
    return cfg.model_dump(mode="json")


def write_effective_config(cfg: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(effective_config(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
