# common/config_loader.py
import hashlib
import json
import logging
import os
from typing import Any, Dict, Optional

import yaml
from jsonschema import Draft202012Validator

from common.errors import ConfigError

logger = logging.getLogger(__name__)

SCHEMA_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                           "config", "experiment.schema.json")

# コマンドごとに確率的 (seed 必須) かどうか
STOCHASTIC_COMMANDS = {"survival", "many-to-one", "embed", "cap-sweep"}


def load_config(config_path: str) -> Optional[Dict[str, Any]]:
    """
    Read a JSON (or YAML) experiment config and return it as a dict.
    Returns None on any error; the caller decides how to exit.
    """
    if not os.path.exists(config_path):
        logger.error(f"Config file not found at {config_path}")
        return None
    if not os.path.isfile(config_path):
        logger.error(f"Specified config path is not a file: {config_path}")
        return None

    # YAML 1.1 は 1e-09 を文字列として読むので、.json は json で読む
    is_json = os.path.splitext(config_path)[1].lower() == ".json"
    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            config_data = json.load(f) if is_json else yaml.safe_load(f)
        if not isinstance(config_data, dict):
            logger.error(f"Config file content is not a mapping: {config_path}")
            return None
        logger.info(f"Loaded config from: {config_path}")
        return config_data
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        logger.error(f"Error parsing config file {config_path}: {e}")
        return None
    except IOError as e:
        logger.error(f"Error reading file {config_path}: {e}")
        return None


def load_schema(schema_path: str = SCHEMA_PATH) -> Dict[str, Any]:
    with open(schema_path, 'r', encoding='utf-8') as f:
        return json.load(f)


def validate_config(config: Dict[str, Any], command: str,
                    schema: Optional[Dict[str, Any]] = None) -> None:
    """Check a config mapping against the experiment schema for one command."""
    schema = schema if schema is not None else load_schema()
    errors = sorted(Draft202012Validator(schema).iter_errors(config),
                    key=lambda e: list(e.path))
    if errors:
        details = "; ".join(
            f"{'.'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors[:5])
        raise ConfigError(f"config does not match schema: {details}")

    params = config.get("commands", {}).get(command)
    if params is None:
        raise ConfigError(f"config has no 'commands.{command}' section")
    if command in STOCHASTIC_COMMANDS and config.get("seed") is None:
        raise ConfigError(f"command '{command}' is stochastic and needs a seed")


def config_hash(config: Dict[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
