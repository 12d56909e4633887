import os
from os import PathLike
from typing import Any, Optional, Union

from meta_prompting.lib.configuration.config_file import ConfigFile
from meta_prompting.lib.configuration.run_config import (
    RunConfig,
    check_consistency,
    default_sections,
)
from meta_prompting.models.exceptions import ConfigError

RESOLVED_CONFIG_NAME = "config.resolved"


class RunConfigFile(ConfigFile):
    """A run definition on disk; missing sections fall back to the defaults."""

    def __init__(self, config_file: Union[str, PathLike, None] = None):
        self.explicit = config_file is not None
        super().__init__(config_file if config_file is not None else "config.toml", defaults=default_sections())

    def read(self) -> None:
        if not self.explicit:
            self.create_defaults()
            return
        try:
            self.load()
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {self.config_file}") from e

    def resolve(self, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
        """Validated config from this file's data, the environment and ``overrides`` (dotted keys)."""
        self.read()
        config = RunConfig.from_layers(dict(self.data), overrides)
        check_consistency(config)
        self.logger.debug(f"Resolved run config from {self.config_file if self.explicit else 'defaults'}")
        return config

    @staticmethod
    def write_resolved(config: RunConfig, out_dir: Union[str, PathLike]) -> str:
        """Write every effective value to ``<out_dir>/config.resolved``; returns the path."""
        resolved = ConfigFile(os.path.join(os.fspath(out_dir), RESOLVED_CONFIG_NAME))
        resolved.data = config.resolved()
        resolved.save()
        return resolved.config_file


def load_run_config(
    path: Union[str, PathLike, None] = None,
    overrides: Optional[dict[str, Any]] = None,
) -> RunConfig:
    return RunConfigFile(path).resolve(overrides)
