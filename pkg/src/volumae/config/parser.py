from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type

from dotenv import load_dotenv
from pydantic import ValidationError
from pydantic.fields import FieldInfo
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource
from yaml import YAMLError

from volumae.config.run_config import RunConfig
from volumae.config.yaml_loader import load_config_file
from volumae.exceptions import ConfigurationError

SETTINGS_FILE_NAME = "volumae.config"
SETTINGS_FILE_SUFFIXES: Tuple[str, ...] = ("yaml", "yml")


def find_settings_file(folder: Path) -> Optional[Path]:
    for suffix in SETTINGS_FILE_SUFFIXES:
        candidate = folder / f"{SETTINGS_FILE_NAME}.{suffix}"
        if candidate.exists():
            return candidate
    return None


class SettingsFileSource(PydanticBaseSettingsSource):
    """
    Settings from `volumae.config.yaml` (or `.yml`) next to the `.env` file.
    The file has the lowest precedence and may reference environment
    variables, `.env` ones included, as `$NAME`.
    """

    def __init__(self, settings_cls: Type[BaseSettings]):
        super().__init__(settings_cls)

        env_file = Path(self.config.get("env_file") or ".env")
        # pydantic reads the .env file without exporting it, the YAML file
        # may reference its variables so load them into the environment
        load_dotenv(env_file)

        settings_file = find_settings_file(env_file.parent)
        self.data: Dict[str, Any] = (
            load_config_file(settings_file, self.config.get("env_file_encoding"))
            if settings_file
            else {}
        )

    def get_field_value(self, field: FieldInfo, field_name: str) -> Tuple[Any, str, bool]:
        return self.data.get(field_name), field_name, False

    def __call__(self) -> Dict[str, Any]:
        values = {}
        for name, field in self.settings_cls.model_fields.items():
            value, key, _ = self.get_field_value(field, name)
            if value is not None:
                values[key] = value
        return values


def _format_errors(error: ValidationError):
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        yield f"{location}: {item['msg']}"


def _deep_update(base: dict, overrides: dict) -> dict:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_update(merged[key], value)
        else:
            merged[key] = value
    return merged


def validate_run_config(data: dict, base: RunConfig = None) -> RunConfig:
    """
    Build a RunConfig from a mapping, optionally layered over `base`.

    Raises:
        ConfigurationError: unknown keys or invalid values, every problem is listed
    """

    if base is not None:
        data = _deep_update(base.model_dump(mode="json"), data)

    try:
        return RunConfig.model_validate(data)
    except ValidationError as error:
        raise ConfigurationError("Invalid run configuration", _format_errors(error))


def load_run_config(path: Path, base: RunConfig = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"The config file {path} doesn't exist")

    try:
        data = load_config_file(path)
    except (ValueError, YAMLError) as error:
        raise ConfigurationError(f"Can't parse the config file {path}", [str(error)])

    return validate_run_config(data, base)
