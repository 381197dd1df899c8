import json
import os
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from src.utils.errors import ConfigError


class Config:

    def __init__(self, config_dir: str = "config"):

        self.config_dir = config_dir
        self._documents: Dict[str, Dict[str, Any]] = {}

        load_dotenv()

    def load_document(self, path: str) -> Dict[str, Any]:

        if not os.path.isabs(path) and not os.path.exists(path):
            path = os.path.join(self.config_dir, path)

        if path not in self._documents:
            try:
                with open(path, 'r', encoding='utf-8') as f:
                    document = json.load(f)
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}")
            except json.JSONDecodeError as e:
                raise ConfigError(f"invalid JSON in {path}: {e}")

            if not isinstance(document, dict):
                raise ConfigError(f"top level of {path} must be an object")

            self._documents[path] = document

        return self._documents[path]

    def get_threads(self) -> Optional[int]:

        value = os.getenv('RDDM_THREADS')
        if not value:
            return None

        try:
            threads = int(value)
        except ValueError:
            raise ConfigError(f"must be a positive integer, got {value!r}", path="RDDM_THREADS")

        if threads < 1:
            raise ConfigError(f"must be a positive integer, got {value!r}", path="RDDM_THREADS")

        return threads

    def get_log_level(self, default: str = "INFO") -> str:

        return os.getenv('RDDM_LOG_LEVEL', default).upper()


_config_instance: Optional[Config] = None


def get_config(config_dir: str = "config") -> Config:

    global _config_instance
    if _config_instance is None:
        _config_instance = Config(config_dir=config_dir)
    return _config_instance


def reset_config():
    global _config_instance
    _config_instance = None
