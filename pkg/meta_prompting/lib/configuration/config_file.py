import copy
import json
import logging
import os
from os import PathLike
from typing import Any, Optional, Union

import toml

from meta_prompting.models.exceptions import ConfigError


class ConfigFile:
    """
    A run document on disk: TOML, or JSON when the name ends in ``.json``.
    Decoding problems surface as ConfigError with the offending line.
    """

    def __init__(
        self,
        config_file: Union[str, PathLike] = "config.toml",
        defaults: Optional[dict[str, Any]] = None,
    ):
        self.logger = logging.getLogger(__name__)
        self.logger.info(f"Initializing {__name__}")

        self.defaults: dict[str, Any] = defaults or {}
        self.config_file = os.fspath(config_file)
        self.data: dict[str, Any] = {}

    @property
    def is_toml(self) -> bool:
        return not self.config_file.endswith(".json")

    def load(self) -> None:
        """
        :raises FileNotFoundError: no such file
        :raises ConfigError: the file does not decode
        """
        with open(self.config_file, "r", encoding="utf-8") as f:
            try:
                self.data = toml.load(f) if self.is_toml else json.load(f)
            except (toml.decoder.TomlDecodeError, json.decoder.JSONDecodeError) as e:
                self.logger.error(f"Unable to decode config {self.config_file}. Error: {e.msg} (line {e.lineno})")
                raise ConfigError(f"{self.config_file}: {e.msg} (line {e.lineno})") from e
        if not isinstance(self.data, dict):
            raise ConfigError(f"{self.config_file}: top level must be a table of sections")
        self.logger.debug(f"Config loaded from {self.config_file}")

    def save(self) -> None:
        """Write ``data``; the previous file is replaced only once the new one is complete."""
        os.makedirs(os.path.dirname(os.path.abspath(self.config_file)), exist_ok=True)
        tmp_path = f"{self.config_file}.tmp"
        with open(tmp_path, "w", encoding="utf-8") as f:
            if self.is_toml:
                toml.dump(self.data, f)
            else:
                json.dump(self.data, f, indent=2, sort_keys=True)
        os.replace(tmp_path, self.config_file)

    def create_defaults(self) -> None:
        self.data = copy.deepcopy(self.defaults)
