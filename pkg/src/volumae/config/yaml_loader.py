import json
import os
from pathlib import Path
import re
from typing import Optional

from yaml import load


try:
    # libyaml bindings, when available
    from yaml import CSafeLoader as SafeLoader
except ImportError:
    from yaml import SafeLoader

ENV_VAR_MATCHER = re.compile(r"\$(\w+|\{[^}]*\})")
YAML_SUFFIXES = (".yaml", ".yml")


def _expand_variables(loader: SafeLoader, node) -> str:
    return os.path.expandvars(node.value)


class EnvVarLoader(SafeLoader):  # type: ignore
    pass


EnvVarLoader.add_implicit_resolver("!envvar", ENV_VAR_MATCHER, None)
EnvVarLoader.add_constructor("!envvar", _expand_variables)


def load_config_file(config_file: Path, encoding: Optional[str] = None) -> dict:
    """
    Read a JSON or YAML mapping, chosen by the file suffix.

    YAML values may reference environment variables as `$NAME` or `${NAME}`.
    """

    with config_file.open(mode="r", encoding=encoding or "utf-8") as f:
        if config_file.suffix.lower() in YAML_SUFFIXES:
            # `or {}` because the file may be empty
            data = load(f, Loader=EnvVarLoader) or {}
        else:
            data = json.load(f)

    if not isinstance(data, dict):
        raise ValueError(f"{config_file} must contain a mapping at the top level")

    return data
