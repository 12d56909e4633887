import os

import pytest

from meta_prompting.lib.configuration.run_config import DEFAULT_TEMPLATE, RunConfig, nest_overrides
from meta_prompting.lib.configuration.run_config_file import RESOLVED_CONFIG_NAME, RunConfigFile, load_run_config
from meta_prompting.models.exceptions import ConfigError

RUN_TOML = """
[meta]
algorithm = "reptile"
reptile_epsilon = 0.5

[inner]
steps = 2

[task]
way = 3
shot = 2
"""


@pytest.fixture
def run_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(RUN_TOML, encoding="utf-8")
    return path


def test_defaults():
    config = RunConfig.from_layers()
    assert config.meta.algorithm == "maml"
    assert config.meta.optimizer == "adamw"
    assert config.inner.steps == 1 and config.inner.lr == 0.5
    assert config.inner.partitions == ["prompt"]
    assert config.model.template == DEFAULT_TEMPLATE
    assert config.run.seeds == [0, 1, 2]
    assert config.test.adaptation_epochs == 15


def test_file_values_fill_their_sections(run_file):
    config = load_run_config(run_file)
    assert config.meta.algorithm == "reptile"
    assert config.meta.reptile_epsilon == 0.5
    assert config.meta.lr_prompt == 5e-3
    assert (config.task.way, config.task.shot) == (3, 2)
    assert config.effective_query() == 10


def test_environment_beats_file_and_flags_beat_environment(run_file, monkeypatch):
    monkeypatch.setenv("META_PROMPTING_META__ALGORITHM", "fomaml")
    assert load_run_config(run_file).meta.algorithm == "fomaml"
    assert load_run_config(run_file, {"meta.algorithm": "mslb", "inner.steps": None}).meta.algorithm == "mslb"
    assert load_run_config(run_file).inner.steps == 2


def test_invalid_values_name_their_key():
    with pytest.raises(ConfigError) as e:
        RunConfig.from_layers({"inner": {"steps": 0}})
    assert e.value.key_path == "inner.steps"
    with pytest.raises(ConfigError) as e:
        RunConfig.from_layers({"meta": {"algorithm": "adam"}})
    assert e.value.key_path == "meta.algorithm"
    with pytest.raises(ConfigError) as e:
        RunConfig.from_layers({"optimiser": {}})
    assert e.value.key_path == "optimiser"


def test_cross_section_rules(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[inner]\nsteps = 2\n[meta]\nalgorithm = \"mslb\"\nmslb_weights = [1.0]\n", encoding="utf-8")
    with pytest.raises(ConfigError) as e:
        load_run_config(path)
    assert e.value.key_path == "meta.mslb_weights"
    with pytest.raises(ConfigError) as e:
        load_run_config(None, {"inner.partitions": ["backbone", "prompt"]})
    assert e.value.key_path == "inner.partitions"


def test_malformed_toml(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[meta\nalgorithm = ", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_overrides_copy_and_revalidate():
    config = RunConfig.from_layers()
    changed = config.with_overrides({"inner.steps": 3, "run.out_dir": "elsewhere"})
    assert changed.inner.steps == 3 and changed.run.out_dir == "elsewhere"
    assert config.inner.steps == 1
    with pytest.raises(ConfigError):
        config.with_overrides({"task.way": 0})


def test_nested_overrides_drop_unset_flags():
    assert nest_overrides({"meta.algorithm": "maml", "run.seed": None}) == {"meta": {"algorithm": "maml"}}


def test_effective_values():
    config = RunConfig.from_layers(overrides={"inner.steps": 4, "meta.mslb_weights": [1, 1, 2, 4]})
    assert config.effective_query() == 5
    assert config.effective_query(available=4) == 3
    assert config.effective_mslb_weights() == pytest.approx([0.125, 0.125, 0.25, 0.5])


def test_resolved_config_reloads_to_the_same_values(run_file, tmp_path):
    config = load_run_config(run_file, {"run.seed": 9})
    path = RunConfigFile.write_resolved(config, tmp_path / "out")
    assert path.endswith(RESOLVED_CONFIG_NAME)
    assert load_run_config(path).resolved() == config.resolved()


def test_shipped_example_config_is_valid():
    path = os.path.join(os.path.dirname(__file__), "..", "..", "install", "etc", "meta-prompting", "config.toml")
    config = load_run_config(path)
    assert config.suite.settings == [(5, 1), (5, 5)]
