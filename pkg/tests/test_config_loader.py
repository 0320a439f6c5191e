import json
import os

import pytest

from common.config_loader import config_hash, load_config, load_schema, validate_config
from common.errors import ConfigError

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "config")

EXAMPLE_CONFIGS = [
    ("analyze_p0.json", "analyze"),
    ("analyze_p03.json", "analyze"),
    ("analyze_percolating.json", "analyze"),
    ("survival_p03.json", "survival"),
    ("pemantle_p03.json", "pemantle"),
    ("pemantle_p0.json", "pemantle"),
    ("mogulskii_lazy.json", "mogulskii"),
    ("many_to_one_p03.json", "many-to-one"),
    ("embed_p03.json", "embed"),
    ("cap_sweep_p03.json", "cap-sweep"),
]


@pytest.mark.parametrize("name, command", EXAMPLE_CONFIGS)
def test_example_configs_validate(name, command):
    config = load_config(os.path.join(CONFIG_DIR, name))
    assert config is not None
    validate_config(config, command)


def test_load_config_missing_file(tmp_path):
    assert load_config(str(tmp_path / "nope.json")) is None
    assert load_config(str(tmp_path)) is None


def test_load_config_rejects_non_mapping(tmp_path):
    path = tmp_path / "list.json"
    path.write_text("[1, 2, 3]", encoding="utf-8")
    assert load_config(str(path)) is None
    broken = tmp_path / "broken.json"
    broken.write_text('{"commands": {', encoding="utf-8")
    assert load_config(str(broken)) is None


def test_load_config_reads_yaml(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("law:\n  type: binary_bernoulli\n  p: 0.3\ncommands:\n  analyze: {}\n", encoding="utf-8")
    config = load_config(str(path))
    assert config["law"] == {"type": "binary_bernoulli", "p": 0.3}
    validate_config(config, "analyze")


def test_load_config_reads_exponent_floats_in_json(tmp_path):
    config = {"law": {"type": "binary_bernoulli", "p": 0.3}, "runtime_budget_sec": 1e-9,
              "commands": {"analyze": {}}}
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    assert "1e-09" in path.read_text(encoding="utf-8")
    loaded = load_config(str(path))
    assert loaded["runtime_budget_sec"] == 1e-9
    validate_config(loaded, "analyze")


def test_stochastic_command_needs_seed():
    config = {"law": {"type": "binary_bernoulli", "p": 0.3},
              "commands": {"survival": {"slopes": [0.1], "n_grid": [6], "replicates": 1000}}}
    with pytest.raises(ConfigError, match="seed"):
        validate_config(config, "survival")
    config["seed"] = 5
    validate_config(config, "survival")


def test_missing_command_section():
    config = {"law": {"type": "binary_bernoulli", "p": 0.3}, "commands": {"analyze": {}}}
    with pytest.raises(ConfigError, match="commands.pemantle"):
        validate_config(config, "pemantle")


@pytest.mark.parametrize("config", [
    {"commands": {}},
    {"commands": {"analyze": {}}, "unknown": 1},
    {"law": {"type": "binary_bernoulli", "p": 1.5}, "commands": {"analyze": {}}},
    {"seed": -1, "commands": {"analyze": {}}},
    {"commands": {"pemantle": {"eps_U": [0.01], "n_max": 65536}}},
    {"seed": 1, "commands": {"mogulskii": {"n_list": [10], "mc_replicates": 1000}}},
])
def test_schema_violations(config):
    with pytest.raises(ConfigError) as info:
        validate_config(config, "analyze")
    assert info.value.exit_code == 2


def test_schema_is_draft_2020_12():
    assert load_schema()["$schema"] == "https://json-schema.org/draft/2020-12/schema"


def test_config_hash_is_canonical():
    a = {"seed": 1, "commands": {"analyze": {}}}
    b = json.loads('{"commands": {"analyze": {}}, "seed": 1}')
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "seed": 2})
    assert len(config_hash(a)) == 64
